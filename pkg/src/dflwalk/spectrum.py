"""Quasi-energy spectra of the per-sector step operator on a ring.

Each sector block ``W_s = T C D_s`` is a ``2N x 2N`` unitary.  Its
eigenvalues ``exp(-iE)`` give quasi-energies ``E`` in ``(-pi, pi]``; the
walker IPR of each eigenvector measures how localized it is.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from .errors import BudgetExceeded, NonUnitaryInput, ValidationError
from .walk_core import SpinSector, WalkParams, coin_matrix
from .ensemble import _enumerated_signs, _sample_signs

EXHAUSTIVE_SPECTRUM_MAX_SITES = 14
DEGENERACY_TOL = 1e-8
GAP_THRESHOLD = 0.1


@dataclass(frozen=True)
class SpectrumRecord:
    quasi_energy: float
    ipr: float
    sector_id: int
    phi: float


def sector_unitary_matrix(
    sector: SpinSector, params: WalkParams, n_sites: int | None = None
) -> NDArray[np.complex128]:
    """Dense ring unitary ``T C D_s`` in the basis index ``c*N + j``."""
    n = len(sector) if n_sites is None else n_sites
    if len(sector) != n:
        raise ValidationError(f"sector length {len(sector)} != n_sites {n}")
    coin = coin_matrix(params.theta)
    phase = np.exp(1j * params.phi * sector.signs.astype(np.float64))
    u = np.zeros((2 * n, 2 * n), dtype=np.complex128)
    j = np.arange(n)
    dest = ((j + 1) % n, (j - 1) % n)
    for c_out in range(2):
        for c_in in range(2):
            u[c_out * n + dest[c_out], c_in * n + j] += coin[c_out, c_in] * phase
    return u


def _to_branch(e: NDArray[np.float64]) -> NDArray[np.float64]:
    # map into (-pi, pi]
    e = np.mod(e + math.pi, 2 * math.pi) - math.pi
    return np.where(e <= -math.pi, e + 2 * math.pi, e)


def quasi_energies(
    u: NDArray[np.complex128], tol: float = 1e-10
) -> tuple[NDArray[np.float64], NDArray[np.complex128]]:
    """Quasi-energies ``E = -arg(lambda)`` and orthonormal eigenvectors (columns).

    A complex Schur form is used: for a unitary matrix it is diagonal, and the
    Schur vectors are an orthonormal eigenbasis even within degenerate groups.
    """
    u = np.asarray(u, dtype=np.complex128)
    col_norms = np.linalg.norm(u, axis=0)
    if np.max(np.abs(col_norms - 1.0)) > tol:
        raise NonUnitaryInput("input matrix is not unitary")
    t, z = scipy.linalg.schur(u, output="complex")
    lam = np.diag(t)
    off = t - np.diag(lam)
    if np.max(np.abs(off), initial=0.0) > 1e-8 or np.max(np.abs(np.abs(lam) - 1.0)) > tol:
        raise NonUnitaryInput("input matrix is not unitary")
    return _to_branch(-np.angle(lam)), z


def eigenstate_ipr(eigvec: NDArray[np.complex128], n_norm: int) -> float:
    v = np.asarray(eigvec).reshape(2, -1)
    p = np.sum(np.abs(v) ** 2, axis=0)
    return float(1.0 / (n_norm * np.sum(p**2)))


def _eigen_iprs(z: NDArray[np.complex128], n_norm: int) -> NDArray[np.float64]:
    n2 = z.shape[0]
    p = np.abs(z.reshape(2, n2 // 2, n2)) ** 2
    p = p.sum(axis=0)
    return 1.0 / (n_norm * np.sum(p**2, axis=0))


def _average_degenerate(e: NDArray[np.float64], ipr: NDArray[np.float64], tol: float):
    """Replace each IPR with the mean over its quasi-energy-degenerate group."""
    order = np.argsort(e)
    es, ips = e[order], ipr[order].copy()
    out = np.empty_like(ips)
    start = 0
    for k in range(1, len(es) + 1):
        if k == len(es) or es[k] - es[k - 1] > tol:
            out[start:k] = ips[start:k].mean()
            start = k
    # groups straddling the branch cut at +-pi
    if len(es) > 1 and (es[0] + 2 * math.pi) - es[-1] <= tol:
        lo = np.searchsorted(es, es[0] + tol, side="right")
        hi = np.searchsorted(es, es[-1] - tol, side="left")
        idx = np.r_[0:lo, hi:len(es)]
        out[idx] = ips[idx].mean()
    res = np.empty_like(out)
    res[order] = out
    return res


def _sector_records(args) -> list[tuple[float, float, int]]:
    params, n_sites, ids, source, seed, n_norm = args
    rows = []
    for sid in ids:
        signs = _enumerated_signs(n_sites, sid) if source == "exhaustive" else _sample_signs(n_sites, seed, sid)
        u = sector_unitary_matrix(SpinSector(signs), params, n_sites)
        e, z = quasi_energies(u)
        ipr = _eigen_iprs(z, n_norm)
        rows.extend((float(ei), float(pi), sid) for ei, pi in zip(e, ipr))
    return rows


def spectrum_sweep(
    phi_grid: Sequence[float],
    sector_source: str | tuple[str, int, int],
    params: WalkParams,
    n_sites: int,
    n_norm: int | None = None,
    degeneracy_tol: float = DEGENERACY_TOL,
    max_exhaustive_sites: int = EXHAUSTIVE_SPECTRUM_MAX_SITES,
    workers: int = 1,
) -> list[SpectrumRecord]:
    """Quasi-energies and eigenstate IPRs over a grid of couplings.

    ``sector_source`` is ``"exhaustive"`` or ``("sampled", count, seed)``.
    IPRs are averaged over quasi-energy-degenerate eigenpairs (across all
    sectors at one coupling) before export.
    """
    n_norm = n_sites if n_norm is None else n_norm
    if sector_source == "exhaustive":
        if n_sites > max_exhaustive_sites:
            raise BudgetExceeded(
                f"exhaustive spectrum for N={n_sites} exceeds limit {max_exhaustive_sites}"
            )
        source, ids, seed = "exhaustive", list(range(2**n_sites)), 0
    else:
        kind, count, seed = sector_source
        if kind != "sampled":
            raise ValidationError(f"unknown sector source {sector_source!r}")
        source, ids = "sampled", list(range(count))
    records: list[SpectrumRecord] = []
    chunk = max(1, len(ids) // 64)
    for phi in phi_grid:
        p = WalkParams(theta=params.theta, phi=phi, n_sites=n_sites, steps=0, periodic=True)
        tasks = [(p, n_sites, ids[a:a + chunk], source, seed, n_norm) for a in range(0, len(ids), chunk)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(_sector_records, tasks))
        else:
            parts = [_sector_records(t) for t in tasks]
        rows = [r for part in parts for r in part]
        e = np.array([r[0] for r in rows])
        ipr = np.array([r[1] for r in rows])
        ipr = _average_degenerate(e, ipr, degeneracy_tol)
        records.extend(
            SpectrumRecord(float(ei), float(pi), r[2], float(phi)) for ei, pi, r in zip(e, ipr, rows)
        )
    return records


def band_gaps(
    records: Iterable[SpectrumRecord] | NDArray[np.float64], threshold: float = GAP_THRESHOLD
) -> list[float]:
    """Gaps between circularly consecutive quasi-energies wider than ``threshold``.

    An empty result means every gap is closed.
    """
    e = np.array([r.quasi_energy if isinstance(r, SpectrumRecord) else r for r in records], dtype=float)
    if e.size == 0:
        raise ValidationError("band_gaps needs at least one record")
    e = np.sort(e)
    gaps = np.diff(np.r_[e, e[0] + 2 * math.pi])
    return [float(g) for g in gaps if g > threshold]


def max_gap(records: Iterable[SpectrumRecord] | NDArray[np.float64]) -> float:
    gaps = band_gaps(records, threshold=-1.0)
    return max(gaps)


def band_position(quasi_energy: NDArray[np.float64], theta: float = math.pi / 4) -> NDArray[np.float64]:
    """Distance of ``|E|`` from the centre of the coupling-free bands.

    For ``theta = pi/4`` the bands occupy ``pi/4 <= |E| <= 3*pi/4`` and the
    centre sits at ``|E| = pi/2``.  Large values are band edges or gaps.
    """
    lo = math.acos(math.cos(theta))
    hi = math.pi - lo
    return np.abs(np.abs(np.asarray(quasi_energy)) - 0.5 * (lo + hi))


def edge_center_min_ipr(records: Sequence[SpectrumRecord], decile: float = 0.1) -> tuple[float, float]:
    """Minimum IPR among the band-edge decile and among the band-centre decile."""
    e = np.array([r.quasi_energy for r in records])
    ipr = np.array([r.ipr for r in records])
    pos = band_position(e)
    order = np.argsort(pos, kind="stable")
    k = max(1, int(round(decile * len(order))))
    return float(ipr[order[-k:]].min()), float(ipr[order[:k]].min())
