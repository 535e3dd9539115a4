from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dflwalk.errors import EdgeOverflow, LengthMismatch, ValidationError
from dflwalk.walk_core import (
    SectorState,
    SpinSector,
    WalkParams,
    apply_coin,
    apply_disorder_phase,
    apply_shift,
    coin_matrix,
    evolve_batch,
    evolve_sector,
    initial_state,
    position_distribution,
    sector_step,
)

angles = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False)


def _random_state(rng: np.random.Generator, n: int) -> SectorState:
    a = rng.normal(size=(2, n)) + 1j * rng.normal(size=(2, n))
    a[0, -1] = 0.0
    a[1, 0] = 0.0
    return SectorState(a / np.linalg.norm(a), n // 2)


def _point(c: int, n_sites: int, site: int) -> SectorState:
    a = np.zeros((2, n_sites), dtype=complex)
    a[c, n_sites // 2 + site] = 1.0
    return SectorState(a, n_sites // 2)


# ---------------------------------------------------------------- params


def test_params_defaults():
    p = WalkParams(steps=5)
    assert p.theta == pytest.approx(math.pi / 4)
    assert p.n_sites == 11
    assert p.origin == 5
    assert p.spin_init == (0,) * 11
    np.testing.assert_array_equal(p.sites, np.arange(-5, 6))


def test_params_wraps_angles():
    p = WalkParams(phi=-math.pi / 2, theta=2 * math.pi + 0.1)
    assert p.phi == pytest.approx(3 * math.pi / 2)
    assert p.theta == pytest.approx(0.1)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n_sites=10, steps=2),
        dict(n_sites=5, steps=3),
        dict(coin_init=(1.0, 1.0)),
        dict(steps=-1),
        dict(n_sites=3, steps=1, spin_init=(0, 2, 0)),
    ],
)
def test_params_rejects_invalid(kwargs):
    with pytest.raises(ValidationError):
        WalkParams(**kwargs)


def test_periodic_allows_even_sites():
    p = WalkParams(n_sites=8, steps=30, periodic=True)
    assert p.origin == 4


def test_spin_sector_rejects_non_signs():
    with pytest.raises(ValidationError):
        SpinSector(np.array([1, 0, -1]))
    s = SpinSector(np.array([1, -1]))
    np.testing.assert_array_equal(s.flipped().signs, [-1, 1])


# ---------------------------------------------------------------- coin


def test_coin_identity_at_zero():
    np.testing.assert_allclose(coin_matrix(0.0), np.eye(2))


def test_coin_half_pi_is_minus_i_x():
    np.testing.assert_allclose(coin_matrix(math.pi / 2), -1j * np.array([[0, 1], [1, 0]]), atol=1e-15)


def test_coin_quarter_pi_entries():
    expected = np.array([[1, -1j], [-1j, 1]]) / math.sqrt(2)
    np.testing.assert_allclose(coin_matrix(math.pi / 4), expected, atol=1e-15)


@given(angles)
def test_coin_unitary(theta):
    c = coin_matrix(theta)
    np.testing.assert_allclose(c @ c.conj().T, np.eye(2), atol=1e-14)


def test_apply_coin_examples():
    s = initial_state(WalkParams(steps=2))
    np.testing.assert_array_equal(apply_coin(s, 0.0).amplitudes, s.amplitudes)
    out = apply_coin(s, math.pi / 4).amplitudes[:, 2]
    np.testing.assert_allclose(out, [(1 - 1j) / 2, (1 - 1j) / 2], atol=1e-15)
    twice = apply_coin(apply_coin(s, math.pi / 4), math.pi / 4)
    np.testing.assert_allclose(twice.amplitudes, apply_coin(s, math.pi / 2).amplitudes, atol=1e-15)


# ---------------------------------------------------------------- shift


def test_shift_moves_coins_opposite_ways():
    out = apply_shift(_point(0, 5, 0))
    assert out.amplitudes[0, 3] == 1
    out = apply_shift(_point(1, 5, 0))
    assert out.amplitudes[1, 1] == 1


def test_shift_edge_overflow():
    with pytest.raises(EdgeOverflow):
        apply_shift(_point(0, 5, 2))
    with pytest.raises(EdgeOverflow):
        apply_shift(_point(1, 5, -2))


def test_shift_periodic_wraps():
    out = apply_shift(_point(0, 5, 2), periodic=True)
    assert out.amplitudes[0, 0] == 1


def test_one_full_step_splits_evenly():
    p = WalkParams(steps=1)
    s = sector_step(initial_state(p), SpinSector.uniform(3), p)
    np.testing.assert_allclose(position_distribution(s), [0.5, 0.0, 0.5], atol=1e-15)


# ---------------------------------------------------------------- disorder phase


def test_disorder_phase_examples():
    a = np.zeros((2, 2), dtype=complex)
    a[0] = 1 / math.sqrt(2)
    s = SectorState(a, 0)
    out = apply_disorder_phase(s, SpinSector(np.array([1, -1])), math.pi / 2)
    np.testing.assert_allclose(out.amplitudes[0], [1j / math.sqrt(2), -1j / math.sqrt(2)], atol=1e-15)
    same = apply_disorder_phase(s, SpinSector(np.array([1, -1])), 0.0)
    np.testing.assert_array_equal(same.amplitudes, s.amplitudes)


def test_disorder_phase_length_mismatch():
    s = initial_state(WalkParams(steps=1))
    with pytest.raises(LengthMismatch):
        apply_disorder_phase(s, SpinSector.uniform(5), 0.3)


@pytest.mark.parametrize("sign", [1, -1])
def test_polarized_sector_matches_standard_walk(sign):
    p = WalkParams(phi=1.1, steps=30)
    q = WalkParams(phi=0.0, steps=30)
    a = evolve_sector(initial_state(p), SpinSector.uniform(p.n_sites, sign), p, 30, range(31))
    b = evolve_sector(initial_state(q), SpinSector.uniform(q.n_sites), q, 30, range(31))
    for x, y in zip(a, b):
        np.testing.assert_allclose(position_distribution(x), position_distribution(y), atol=1e-12)


@given(st.integers(0, 2**31 - 1), angles)
@settings(max_examples=25)
def test_first_step_independent_of_sector(seed, phi):
    rng = np.random.default_rng(seed)
    p = WalkParams(phi=phi, steps=1)
    s = SpinSector(rng.choice([-1, 1], size=3))
    out = sector_step(initial_state(p), s, p)
    np.testing.assert_allclose(position_distribution(out), [0.5, 0, 0.5], atol=1e-14)


# ---------------------------------------------------------------- evolution


def test_evolve_t0_returns_initial():
    p = WalkParams(steps=3)
    init = initial_state(p)
    (out,) = evolve_sector(init, SpinSector.uniform(7), p, 0)
    np.testing.assert_array_equal(out.amplitudes, init.amplitudes)


def test_evolve_rejects_t_beyond_steps():
    p = WalkParams(steps=3)
    with pytest.raises(ValidationError):
        evolve_sector(initial_state(p), SpinSector.uniform(7), p, 4)


def test_ballistic_variance_slope():
    p = WalkParams(steps=100)
    times = list(range(10, 101))
    states = evolve_sector(initial_state(p), SpinSector.uniform(p.n_sites), p, 100, times)
    var = [float(np.sum(p.sites**2 * position_distribution(s))) for s in states]
    slope = np.polyfit(np.log(times), np.log(var), 1)[0]
    assert abs(slope - 2.0) < 0.05


@given(st.integers(0, 2**31 - 1), angles, angles)
@settings(max_examples=30)
def test_unitarity(seed, theta, phi):
    rng = np.random.default_rng(seed)
    p = WalkParams(theta=theta, phi=phi, n_sites=41, steps=15)
    s = SpinSector(rng.choice([-1, 1], size=41))
    init = _random_state(rng, 41)
    init.amplitudes[:, :13] = 0
    init.amplitudes[:, -13:] = 0
    init.amplitudes /= np.linalg.norm(init.amplitudes)
    for st_ in evolve_sector(init, s, p, 12, range(13)):
        assert abs(st_.norm() - 1.0) < 1e-10
        assert abs(position_distribution(st_).sum() - 1.0) < 1e-10


@given(st.integers(0, 2**31 - 1), angles)
@settings(max_examples=25)
def test_sector_phase_gauge(seed, phi):
    rng = np.random.default_rng(seed)
    p = WalkParams(phi=phi, steps=12)
    q = WalkParams(phi=-phi, steps=12)
    s = SpinSector(rng.choice([-1, 1], size=p.n_sites))
    a = evolve_sector(initial_state(p), s.flipped(), p, 12, range(13))
    b = evolve_sector(initial_state(q), s, q, 12, range(13))
    for x, y in zip(a, b):
        np.testing.assert_allclose(position_distribution(x), position_distribution(y), atol=1e-12)


@given(st.integers(0, 2**31 - 1), angles)
@settings(max_examples=25)
def test_reflection_symmetry(seed, phi):
    rng = np.random.default_rng(seed)
    p = WalkParams(phi=phi, steps=12)
    half = rng.choice([-1, 1], size=p.origin)
    s = SpinSector(np.r_[half, rng.choice([-1, 1], size=1), half[::-1]])
    for st_ in evolve_sector(initial_state(p), s, p, 12, range(13)):
        prob = position_distribution(st_)
        np.testing.assert_allclose(prob, prob[::-1], atol=1e-10)


@given(st.integers(0, 2**31 - 1), angles, st.integers(-3, 3), st.integers(0, 1))
@settings(max_examples=25)
def test_shift_then_phase_commutation(seed, phi, site, coin):
    rng = np.random.default_rng(seed)
    n = 9
    s = SpinSector(rng.choice([-1, 1], size=n))
    state = _point(coin, n, site)
    lhs = apply_shift(apply_disorder_phase(state, s, phi))
    # moving the landscape with the walker undoes the ordering difference
    moved = SpinSector(np.roll(s.signs, 1 if coin == 0 else -1))
    rhs = apply_disorder_phase(apply_shift(state), moved, phi)
    np.testing.assert_allclose(lhs.amplitudes, rhs.amplitudes, atol=1e-15)


def test_position_distribution_examples():
    s = _point(0, 9, 3)
    prob = position_distribution(s)
    assert prob[4 + 3] == 1 and prob.sum() == 1
    a = np.zeros((2, 3), dtype=complex)
    a[:, 1] = [0.6, 0.8j]
    assert position_distribution(SectorState(a, 1))[1] == pytest.approx(1.0)


def test_evolve_batch_matches_single_sector():
    rng = np.random.default_rng(3)
    p = WalkParams(phi=0.7, steps=20)
    signs = rng.choice([-1, 1], size=(5, p.n_sites))
    amps = np.zeros((5, 2, p.n_sites), dtype=complex)
    amps[:, :, p.origin] = p.coin_init
    times = [0, 3, 20]
    batch = evolve_batch(amps, signs, p, times)
    for k in range(5):
        ref = evolve_sector(initial_state(p), SpinSector(signs[k]), p, 20, times)
        for i, r in enumerate(ref):
            np.testing.assert_allclose(batch[i, k], position_distribution(r), atol=1e-14)


def test_evolve_batch_periodic_matches_ring_shift():
    rng = np.random.default_rng(4)
    p = WalkParams(phi=0.4, n_sites=6, steps=0, periodic=True)
    signs = rng.choice([-1, 1], size=(1, 6))
    init = _random_state(rng, 6)
    batch = evolve_batch(init.amplitudes[None], signs, p, [9])
    s = init
    for _ in range(9):
        s = sector_step(s, SpinSector(signs[0]), p)
    np.testing.assert_allclose(batch[0, 0], position_distribution(s), atol=1e-14)
