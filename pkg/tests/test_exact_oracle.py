from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dflwalk.errors import EdgeOverflow, ValidationError
from dflwalk.exact_oracle import (
    ExactState,
    exact_bond_entropy,
    exact_init,
    exact_snapshot,
    exact_spin_expectation,
    exact_step,
    exact_step_adjoint,
    exact_walker_distribution,
    from_x_basis,
    to_x_basis,
)
from dflwalk.walk_core import WalkParams, evolve_batch


def _random_exact(rng: np.random.Generator, n: int, periodic: bool = True) -> ExactState:
    a = rng.normal(size=(2, n, 2**n)) + 1j * rng.normal(size=(2, n, 2**n))
    return ExactState(a / np.linalg.norm(a), n // 2, periodic)


def test_size_guard():
    with pytest.raises(ValidationError):
        exact_init(WalkParams(n_sites=15, steps=7))


def test_initial_observables():
    st_ = exact_init(WalkParams(steps=3))
    d = exact_walker_distribution(st_)
    assert d[3] == pytest.approx(1.0) and d.sum() == pytest.approx(1.0)
    for j in range(7):
        assert exact_spin_expectation(st_, j, "Z") == pytest.approx(1.0)
        assert exact_spin_expectation(st_, j, "X") == pytest.approx(0.0)
        assert exact_spin_expectation(st_, j, "Y") == pytest.approx(0.0)
    assert all(exact_bond_entropy(st_, b) == pytest.approx(0.0, abs=1e-12) for b in range(6))


@pytest.mark.parametrize("phi", [0.0, 0.3, math.pi / 4, 3 * math.pi / 8])
def test_one_step_spin_rotation(phi):
    st_ = exact_step(exact_init(WalkParams(phi=phi, steps=2)), WalkParams(phi=phi, steps=2))
    assert exact_spin_expectation(st_, 2, "Z") == pytest.approx(math.cos(2 * phi), abs=1e-14)
    # sign follows the exp(-i phi X) rotation of |0>
    assert exact_spin_expectation(st_, 2, "Y") == pytest.approx(-math.sin(2 * phi), abs=1e-14)
    np.testing.assert_allclose(exact_walker_distribution(st_), [0, 0.5, 0, 0.5, 0], atol=1e-14)
    # the rotated spin is not entangled with anything after one step
    assert exact_bond_entropy(st_, 1) == pytest.approx(1.0, abs=1e-12)
    assert exact_bond_entropy(st_, 0) == pytest.approx(0.0, abs=1e-12)


def test_phi_zero_matches_sector_walk():
    p = WalkParams(phi=0.0, steps=6)
    st_ = exact_init(p)
    amps = np.zeros((1, 2, 13), dtype=complex)
    amps[0, :, 6] = p.coin_init
    ref = evolve_batch(amps, np.ones((1, 13)), p, range(7))
    for t in range(7):
        np.testing.assert_allclose(exact_walker_distribution(st_), ref[t, 0], atol=1e-14)
        if t < 6:
            st_ = exact_step(st_, p)


def test_open_edge_overflow():
    p = WalkParams(n_sites=3, steps=1)
    st_ = exact_step(exact_init(p), p)
    with pytest.raises(EdgeOverflow):
        exact_step(st_, p)


@given(st.integers(0, 2**31 - 1), st.floats(-4, 4), st.floats(-1, 1))
@settings(max_examples=15, deadline=None)
def test_unitary_and_reversible(seed, phi, phi_prime):
    rng = np.random.default_rng(seed)
    p = WalkParams(phi=phi, n_sites=5, steps=0, periodic=True)
    st0 = _random_exact(rng, 5)
    st_ = st0
    for _ in range(100):
        st_ = exact_step(st_, p, phi_prime)
        assert abs(st_.norm() - 1.0) < 1e-12
    for _ in range(100):
        st_ = exact_step_adjoint(st_, p, phi_prime)
    np.testing.assert_allclose(st_.amplitudes, st0.amplitudes, atol=1e-10)


@given(st.integers(0, 2**31 - 1), st.floats(-4, 4))
@settings(max_examples=15, deadline=None)
def test_x_conserved_for_any_state(seed, phi):
    rng = np.random.default_rng(seed)
    p = WalkParams(phi=phi, n_sites=5, steps=0, periodic=True)
    st_ = _random_exact(rng, 5)
    x0 = [exact_spin_expectation(st_, j, "X") for j in range(5)]
    for _ in range(15):
        st_ = exact_step(st_, p)
        np.testing.assert_allclose([exact_spin_expectation(st_, j, "X") for j in range(5)], x0, atol=1e-12)


def test_sector_blocks_reassemble_exact_step():
    rng = np.random.default_rng(11)
    n, t = 5, 9
    p = WalkParams(phi=0.9, n_sites=n, steps=0, periodic=True)
    st_ = _random_exact(rng, n)
    xa = to_x_basis(st_)
    # bit j of the X-basis index set means spin j is |->, eigenvalue -1, sector sign +1
    bits = (np.arange(2**n)[:, None] >> np.arange(n - 1, -1, -1)) & 1
    signs = 2 * bits - 1
    out = np.empty_like(xa)
    for k in range(2**n):
        a = xa[:, :, k].copy()
        for _ in range(t):
            a = a * np.exp(1j * p.phi * signs[k])[None, :]
            a = np.array([[1, -1j], [-1j, 1]]) / math.sqrt(2) @ a
            a = np.stack([np.roll(a[0], 1), np.roll(a[1], -1)])
        out[:, :, k] = a
    for _ in range(t):
        st_ = exact_step(st_, p)
    back = from_x_basis(out, st_.origin, True)
    np.testing.assert_allclose(back.amplitudes, st_.amplitudes, atol=1e-12)


def test_snapshot_fields():
    p = WalkParams(phi=0.5, steps=3)
    st_ = exact_init(p)
    for _ in range(3):
        st_ = exact_step(st_, p)
    snap = exact_snapshot(st_, 3)
    assert snap.t == 3 and snap.probabilities.shape == (7,) and snap.entropies.shape == (6,)
    assert abs(snap.probabilities.sum() - 1) < 1e-12


def test_bond_range_checked():
    with pytest.raises(ValidationError):
        exact_bond_entropy(exact_init(WalkParams(steps=1)), 2)
