"""Single-sector dynamics of the coined walk.

Within a fixed X-basis spin configuration the walker sees a static binary
phase landscape ``exp(i*phi*s_n)``.  One step applies that phase, the coin
rotation ``exp(-i*theta*X)`` and the coin-conditioned shift, in that order.

Amplitudes are stored as a ``(2, N)`` array indexed ``[coin, site]``; the
lattice coordinate of array index ``j`` is ``j - site_offset``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import EdgeOverflow, LengthMismatch, ValidationError

TWO_PI = 2.0 * math.pi


def _wrap_angle(x: float) -> float:
    x = math.fmod(float(x), TWO_PI)
    if x < 0.0:
        x += TWO_PI
    # fmod can round a tiny negative up to exactly 2*pi
    return 0.0 if x >= TWO_PI else x


@dataclass(frozen=True)
class WalkParams:
    """Parameters of one walk.

    Angles are stored reduced to ``[0, 2*pi)``.  ``n_sites`` defaults to
    ``2*steps + 1`` so an open-boundary walker never reaches an edge.
    """

    theta: float = math.pi / 4
    phi: float = 0.0
    n_sites: int | None = None
    steps: int = 10
    coin_init: tuple[complex, complex] = (1 / math.sqrt(2), 1 / math.sqrt(2))
    spin_init: tuple[int, ...] | None = None
    periodic: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", _wrap_angle(self.theta))
        object.__setattr__(self, "phi", _wrap_angle(self.phi))
        if self.steps < 0:
            raise ValidationError(f"steps must be >= 0, got {self.steps}")
        n = self.n_sites if self.n_sites is not None else 2 * self.steps + 1
        object.__setattr__(self, "n_sites", int(n))
        if self.n_sites < 1:
            raise ValidationError("n_sites must be positive")
        if not self.periodic:
            if self.n_sites % 2 == 0:
                raise ValidationError(f"open lattice needs odd n_sites, got {self.n_sites}")
            if self.n_sites < 2 * self.steps + 1:
                raise ValidationError(
                    f"open lattice with steps={self.steps} needs n_sites >= {2 * self.steps + 1}"
                )
        coin = tuple(complex(c) for c in self.coin_init)
        if len(coin) != 2:
            raise ValidationError("coin_init must hold two amplitudes")
        if abs(abs(coin[0]) ** 2 + abs(coin[1]) ** 2 - 1.0) > 1e-12:
            raise ValidationError("coin_init must be normalized")
        object.__setattr__(self, "coin_init", coin)
        if self.spin_init is None:
            object.__setattr__(self, "spin_init", (0,) * self.n_sites)
        else:
            spins = tuple(int(b) for b in self.spin_init)
            if len(spins) != self.n_sites or any(b not in (0, 1) for b in spins):
                raise ValidationError("spin_init must hold n_sites bits in {0, 1}")
            object.__setattr__(self, "spin_init", spins)

    @property
    def origin(self) -> int:
        """Array index of lattice coordinate n = 0."""
        return self.n_sites // 2

    @property
    def sites(self) -> NDArray[np.int64]:
        """Lattice coordinates of all sites."""
        return np.arange(self.n_sites) - self.origin


@dataclass
class SectorState:
    amplitudes: NDArray[np.complex128]
    site_offset: int

    @property
    def n_sites(self) -> int:
        return self.amplitudes.shape[1]

    @property
    def sites(self) -> NDArray[np.int64]:
        return np.arange(self.n_sites) - self.site_offset

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def copy(self) -> "SectorState":
        return SectorState(self.amplitudes.copy(), self.site_offset)


@dataclass(frozen=True)
class SpinSector:
    """X-basis spin configuration labelling one conserved block."""

    signs: NDArray[np.int8] = field(repr=False)

    def __post_init__(self) -> None:
        s = np.asarray(self.signs)
        if s.ndim != 1 or not np.all((s == 1) | (s == -1)):
            raise ValidationError("sector entries must be exactly +1 or -1")
        object.__setattr__(self, "signs", s.astype(np.int8))

    def __len__(self) -> int:
        return len(self.signs)

    @classmethod
    def uniform(cls, n_sites: int, sign: int = 1) -> "SpinSector":
        return cls(np.full(n_sites, sign, dtype=np.int8))

    def flipped(self) -> "SpinSector":
        return SpinSector(-self.signs)


def coin_matrix(theta: float) -> NDArray[np.complex128]:
    """Return ``exp(-i*theta*X)``."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=np.complex128)


def initial_state(params: WalkParams) -> SectorState:
    amps = np.zeros((2, params.n_sites), dtype=np.complex128)
    amps[:, params.origin] = params.coin_init
    return SectorState(amps, params.origin)


def apply_coin(state: SectorState, theta: float) -> SectorState:
    return SectorState(coin_matrix(theta) @ state.amplitudes, state.site_offset)


def apply_shift(state: SectorState, periodic: bool = False) -> SectorState:
    """Move coin-0 amplitude one site right and coin-1 amplitude one site left."""
    a = state.amplitudes
    out = np.empty_like(a)
    if periodic:
        out[0] = np.roll(a[0], 1)
        out[1] = np.roll(a[1], -1)
    else:
        if a[0, -1] != 0 or a[1, 0] != 0:
            raise EdgeOverflow("walker amplitude would leave the open lattice")
        out[0, 0] = 0.0
        out[0, 1:] = a[0, :-1]
        out[1, -1] = 0.0
        out[1, :-1] = a[1, 1:]
    return SectorState(out, state.site_offset)


def apply_disorder_phase(state: SectorState, sector: SpinSector, phi: float) -> SectorState:
    if len(sector) != state.n_sites:
        raise LengthMismatch(f"sector has {len(sector)} sites, state has {state.n_sites}")
    phase = np.exp(1j * phi * sector.signs.astype(np.float64))
    return SectorState(state.amplitudes * phase[None, :], state.site_offset)


def sector_step(state: SectorState, sector: SpinSector, params: WalkParams) -> SectorState:
    state = apply_disorder_phase(state, sector, params.phi)
    state = apply_coin(state, params.theta)
    return apply_shift(state, params.periodic)


def evolve_sector(
    initial: SectorState,
    sector: SpinSector,
    params: WalkParams,
    t: int,
    snapshot_times: Sequence[int] | None = None,
) -> list[SectorState]:
    """Evolve ``t`` steps and return the states at ``snapshot_times``.

    Without explicit snapshot times only the final state is returned.
    """
    if t > params.steps and not params.periodic:
        raise ValidationError(f"t={t} exceeds params.steps={params.steps}")
    times = sorted(set(snapshot_times)) if snapshot_times is not None else [t]
    if times and (times[0] < 0 or times[-1] > t):
        raise ValidationError("snapshot times must lie in [0, t]")
    out = []
    state = initial.copy()
    k = 0
    for step in range(t + 1):
        while k < len(times) and times[k] == step:
            out.append(state.copy())
            k += 1
        if step < t:
            state = sector_step(state, sector, params)
    return out


def position_distribution(state: SectorState) -> NDArray[np.float64]:
    return np.sum(np.abs(state.amplitudes) ** 2, axis=0)


def evolve_batch(
    amplitudes: NDArray[np.complex128],
    signs: NDArray[np.integer],
    params: WalkParams,
    times: Sequence[int],
    origin: int | None = None,
) -> NDArray[np.float64]:
    """Vectorized evolution of many sectors at once.

    ``amplitudes`` has shape ``(K, 2, N)`` and ``signs`` shape ``(K, N)``.
    Returns per-sample position distributions at each requested time, shape
    ``(len(times), K, N)``.  Open lattices only update the light cone around
    ``origin``, which is exact because amplitudes outside it are zero.
    """
    amps = np.array(amplitudes, dtype=np.complex128, copy=True)
    k_samples, _, n = amps.shape
    times = list(times)
    t_max = max(times) if times else 0
    phase = np.exp(1j * params.phi * np.asarray(signs, dtype=np.float64))
    c, s = math.cos(params.theta), math.sin(params.theta)
    out = np.zeros((len(times), k_samples, n))
    slots = {t: i for i, t in enumerate(times)}
    if origin is None:
        origin = params.origin
    off_origin = np.ones(n, dtype=bool)
    off_origin[origin] = False
    light_cone = not params.periodic and not np.any(amps[:, :, off_origin])
    for step in range(t_max + 1):
        if step in slots:
            out[slots[step]] = np.sum(amps.real**2 + amps.imag**2, axis=1)
        if step == t_max:
            break
        if not light_cone or n <= 2 * step + 3:
            lo, hi = 0, n
        else:
            lo, hi = origin - step - 1, origin + step + 2
            if lo < 0 or hi > n:
                lo, hi = max(lo, 0), min(hi, n)
        w = amps[:, :, lo:hi] * phase[:, None, lo:hi]
        a0 = c * w[:, 0] - 1j * s * w[:, 1]
        a1 = c * w[:, 1] - 1j * s * w[:, 0]
        if params.periodic and (lo, hi) == (0, n):
            amps[:, 0] = np.roll(a0, 1, axis=-1)
            amps[:, 1] = np.roll(a1, -1, axis=-1)
        else:
            if np.any(a0[:, -1] != 0) and hi == n or np.any(a1[:, 0] != 0) and lo == 0:
                raise EdgeOverflow("walker amplitude would leave the open lattice")
            amps[:, 0, lo + 1:hi] = a0[:, :-1]
            amps[:, 0, lo] = 0.0
            amps[:, 1, lo:hi - 1] = a1[:, 1:]
            amps[:, 1, hi - 1] = 0.0
    return out
