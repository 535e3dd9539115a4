"""Sector-averaged walker dynamics and scalar localization diagnostics.

The Z-polarized initial spin state is an equal-weight superposition of all
X-basis sectors, so the walker distribution is the plain average of the
single-sector distributions.  Sectors are either enumerated or drawn i.i.d.
uniformly; sample ``k`` is generated from ``(seed, k)`` alone, and the mean
is reduced with a fixed pairwise tree over fixed-size chunks, so results
are bitwise identical for any number of worker processes.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import DegenerateWindow, NonPositiveProbability, ValidationError
from .walk_core import SpinSector, WalkParams, evolve_batch

EXHAUSTIVE_MAX_SITES = 20


@dataclass(frozen=True)
class EnsembleConfig:
    n_samples: int = 4000
    seed: int = 0
    exhaustive: bool = False
    chunk_size: int = 128
    workers: int = 1

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValidationError("n_samples must be >= 1")
        if self.chunk_size < 1:
            raise ValidationError("chunk_size must be >= 1")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")


@dataclass
class ObservableSeries:
    times: NDArray[np.int64]
    values: NDArray[np.float64]
    label: str

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.times.shape != self.values.shape:
            raise ValidationError("times and values must have equal lengths")
        if np.any(np.diff(self.times) <= 0):
            raise ValidationError("times must be strictly increasing")


@dataclass
class EnsembleResult:
    """Averaged distributions at each snapshot time, shape ``(T, N)``."""

    times: list[int]
    distributions: NDArray[np.float64]
    sites: NDArray[np.int64]
    n_sectors: int

    def at(self, t: int) -> NDArray[np.float64]:
        return self.distributions[self.times.index(t)]

    def series(self, fn, label: str) -> ObservableSeries:
        return ObservableSeries(
            np.array(self.times), np.array([fn(p) for p in self.distributions]), label
        )


def _sample_signs(n_sites: int, seed: int, k: int) -> NDArray[np.int8]:
    rng = np.random.default_rng([seed, k])
    return (1 - 2 * rng.integers(0, 2, size=n_sites)).astype(np.int8)


def _enumerated_signs(n_sites: int, k: int) -> NDArray[np.int8]:
    bits = (k >> np.arange(n_sites - 1, -1, -1)) & 1
    return (1 - 2 * bits).astype(np.int8)


def sample_sectors(n_sites: int, config: EnsembleConfig) -> list[SpinSector]:
    """Sectors to average over: all ``2**N`` if exhaustive, else i.i.d. samples.

    In exhaustive mode sector ``k`` has site ``j`` flipped to ``-1`` iff bit
    ``N-1-j`` of ``k`` is set.
    """
    if config.exhaustive:
        if n_sites > EXHAUSTIVE_MAX_SITES:
            raise ValidationError(f"exhaustive enumeration limited to N <= {EXHAUSTIVE_MAX_SITES}")
        return [SpinSector(_enumerated_signs(n_sites, k)) for k in range(2**n_sites)]
    return [SpinSector(_sample_signs(n_sites, config.seed, k)) for k in range(config.n_samples)]


def pairwise_sum(arrays: NDArray[np.float64]) -> NDArray[np.float64]:
    """Sum along axis 0 with a fixed balanced binary tree."""
    n = arrays.shape[0]
    if n == 0:
        return np.zeros(arrays.shape[1:])
    if n == 1:
        return arrays[0].copy()
    half = n // 2
    return pairwise_sum(arrays[:half]) + pairwise_sum(arrays[half:])


def _chunk_sums(
    params: WalkParams, times: list[int], start: int, stop: int, seed: int, exhaustive: bool
) -> NDArray[np.float64]:
    n = params.n_sites
    if exhaustive:
        signs = np.stack([_enumerated_signs(n, k) for k in range(start, stop)])
    else:
        signs = np.stack([_sample_signs(n, seed, k) for k in range(start, stop)])
    amps = np.zeros((stop - start, 2, n), dtype=np.complex128)
    amps[:, :, params.origin] = params.coin_init
    dists = evolve_batch(amps, signs, params, times)
    return np.stack([pairwise_sum(d) for d in dists])


def _chunk_task(args):
    return _chunk_sums(*args)


def ensemble_distribution(
    params: WalkParams,
    t: int | None,
    config: EnsembleConfig,
    snapshot_times: Sequence[int] | None = None,
) -> EnsembleResult:
    """Average single-sector distributions over sampled or enumerated sectors.

    ``t`` defaults to ``params.steps``.  When ``snapshot_times`` is given the
    averaged distribution is returned at each of those times.
    """
    t = params.steps if t is None else t
    if not params.periodic and t > params.steps:
        raise ValidationError(f"t={t} exceeds params.steps={params.steps}")
    times = sorted(set(snapshot_times)) if snapshot_times is not None else [t]
    if times[0] < 0 or times[-1] > t:
        raise ValidationError("snapshot times must lie in [0, t]")
    if config.exhaustive:
        if params.n_sites > EXHAUSTIVE_MAX_SITES:
            raise ValidationError(f"exhaustive enumeration limited to N <= {EXHAUSTIVE_MAX_SITES}")
        total = 2**params.n_sites
    else:
        total = config.n_samples
    bounds = [(a, min(a + config.chunk_size, total)) for a in range(0, total, config.chunk_size)]
    tasks = [(params, times, a, b, config.seed, config.exhaustive) for a, b in bounds]
    if config.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            partials = list(pool.map(_chunk_task, tasks))
    else:
        partials = [_chunk_task(task) for task in tasks]
    mean = pairwise_sum(np.stack(partials)) / total
    return EnsembleResult(times, mean, params.sites, total)


def variance(p: NDArray[np.float64], sites: NDArray[np.int64] | None = None) -> float:
    """Second moment of ``p`` about lattice coordinate zero.

    Without ``sites`` the array is assumed centred (odd length, origin in the
    middle).
    """
    p = np.asarray(p, dtype=np.float64)
    if sites is None:
        sites = np.arange(len(p)) - len(p) // 2
    return float(np.sum(np.asarray(sites, dtype=np.float64) ** 2 * p))


def normalized_ipr(p: NDArray[np.float64], n_norm: int) -> float:
    if n_norm <= 0:
        raise ValidationError("n_norm must be positive")
    return float(1.0 / (n_norm * np.sum(np.asarray(p, dtype=np.float64) ** 2)))


def fit_localization_length(
    p: NDArray[np.float64],
    fit_window: tuple[int, int] = (2, 20),
    sites: NDArray[np.int64] | None = None,
    sublattice: int | None = None,
) -> tuple[float, float]:
    """Fit ``P_n ~ exp(-2|n|/lambda)`` by least squares on ``log P``.

    Sites with ``fit_window[0] <= |n| <= fit_window[1]`` are used.  A walk
    started at the origin only occupies sites with ``n = t (mod 2)``; pass
    ``sublattice = t % 2`` to restrict the fit to that parity.

    Returns
    -------
    (lambda, rms_log_residual)
    """
    p = np.asarray(p, dtype=np.float64)
    if sites is None:
        sites = np.arange(len(p)) - len(p) // 2
    sites = np.asarray(sites)
    dist = np.abs(sites)
    mask = (dist >= fit_window[0]) & (dist <= fit_window[1])
    if sublattice is not None:
        mask &= (sites % 2) == (sublattice % 2)
    if np.count_nonzero(mask) < 3:
        raise DegenerateWindow(f"fit window {fit_window} holds fewer than 3 sites")
    pw = p[mask]
    if np.any(pw <= 0):
        raise NonPositiveProbability("probability must be strictly positive on the fit window")
    x = dist[mask].astype(np.float64)
    y = np.log(pw)
    design = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - (slope * x + intercept)
    # a flat profile has no decay length; roundoff leaves a tiny slope
    lam = -2.0 / slope if abs(slope) > 1e-12 else float("inf")
    return float(lam), float(np.sqrt(np.mean(resid**2)))
