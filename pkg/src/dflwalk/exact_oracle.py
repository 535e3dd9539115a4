"""Brute-force evolution in the full coin x position x spin space.

The dense state has shape ``(2, N, 2**N)`` with the spin bitstring as the
fastest index; bit ``N-1-j`` of the spin index is the Z-basis state of site
``j``.  Intended for ``N <= 14`` as ground truth for the other engines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import EdgeOverflow, ValidationError
from .walk_core import WalkParams, coin_matrix

MAX_EXACT_SITES = 14

PAULI = {
    "X": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "Z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
}


def _rx(angle: float) -> NDArray[np.complex128]:
    return coin_matrix(angle)


@dataclass
class ExactState:
    amplitudes: NDArray[np.complex128]
    origin: int
    periodic: bool = False

    def __post_init__(self) -> None:
        n = self.amplitudes.shape[1]
        if n > MAX_EXACT_SITES:
            raise ValidationError(f"exact state limited to N <= {MAX_EXACT_SITES}")
        if self.amplitudes.shape != (2, n, 2**n):
            raise ValidationError("amplitudes must have shape (2, N, 2**N)")

    @property
    def n_sites(self) -> int:
        return self.amplitudes.shape[1]

    def spin_view(self) -> NDArray[np.complex128]:
        n = self.n_sites
        return self.amplitudes.reshape((2, n) + (2,) * n)

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def copy(self) -> "ExactState":
        return ExactState(self.amplitudes.copy(), self.origin, self.periodic)


def exact_init(params: WalkParams) -> ExactState:
    n = params.n_sites
    if n > MAX_EXACT_SITES:
        raise ValidationError(f"exact state limited to N <= {MAX_EXACT_SITES}")
    amps = np.zeros((2, n, 2**n), dtype=np.complex128)
    spin_index = int("".join(str(b) for b in params.spin_init), 2)
    amps[:, params.origin, spin_index] = params.coin_init
    return ExactState(amps, params.origin, params.periodic)


def _apply_interaction(state: ExactState, phi: float, adjoint: bool = False) -> None:
    """Rotate the spin at the walker's site by ``exp(-i*phi*X)``, in place."""
    n = state.n_sites
    view = state.spin_view()
    rot = _rx(-phi if adjoint else phi)
    for j in range(n):
        sl = view[:, j]
        # spin axis j of the slice is axis 1 + j
        moved = np.moveaxis(sl, 1 + j, -1)
        moved[...] = moved @ rot.T


def _field_phases(n: int, phi_prime: float) -> NDArray[np.complex128]:
    bits = (np.arange(2**n)[:, None] >> np.arange(n - 1, -1, -1)) & 1
    z_sum = np.sum(1 - 2 * bits, axis=1)
    return np.exp(-1j * phi_prime * z_sum)


def _shift(amps: NDArray[np.complex128], periodic: bool, inverse: bool = False) -> NDArray[np.complex128]:
    d0, d1 = (-1, 1) if inverse else (1, -1)
    out = np.empty_like(amps)
    if periodic:
        out[0] = np.roll(amps[0], d0, axis=0)
        out[1] = np.roll(amps[1], d1, axis=0)
        return out
    edge0 = amps[0, -1] if d0 == 1 else amps[0, 0]
    edge1 = amps[1, 0] if d1 == -1 else amps[1, -1]
    if np.any(edge0 != 0) or np.any(edge1 != 0):
        raise EdgeOverflow("walker amplitude would leave the open lattice")
    out[0] = np.roll(amps[0], d0, axis=0)
    out[1] = np.roll(amps[1], d1, axis=0)
    return out


def exact_step(state: ExactState, params: WalkParams, phi_prime: float = 0.0) -> ExactState:
    """One step ``T C M F``: optional field, interaction, coin, shift."""
    new = state.copy()
    if phi_prime:
        new.amplitudes *= _field_phases(new.n_sites, phi_prime)[None, None, :]
    if params.phi:
        _apply_interaction(new, params.phi)
    coin = coin_matrix(params.theta)
    amps = np.tensordot(coin, new.amplitudes, axes=(1, 0))
    new.amplitudes = _shift(amps, new.periodic)
    return new


def exact_step_adjoint(state: ExactState, params: WalkParams, phi_prime: float = 0.0) -> ExactState:
    """Inverse of :func:`exact_step`."""
    new = state.copy()
    amps = _shift(new.amplitudes, new.periodic, inverse=True)
    coin = coin_matrix(params.theta).conj().T
    new.amplitudes = np.tensordot(coin, amps, axes=(1, 0))
    if params.phi:
        _apply_interaction(new, params.phi, adjoint=True)
    if phi_prime:
        new.amplitudes *= _field_phases(new.n_sites, -phi_prime)[None, None, :]
    return new


def exact_walker_distribution(state: ExactState) -> NDArray[np.float64]:
    return np.sum(np.abs(state.amplitudes) ** 2, axis=(0, 2))


def spin_reduced_density(state: ExactState, site: int) -> NDArray[np.complex128]:
    """2x2 reduced density matrix of the spin at ``site``."""
    psi = np.moveaxis(state.spin_view(), 2 + site, -1).reshape(-1, 2)
    return psi.T @ psi.conj()


def exact_spin_expectation(state: ExactState, site: int, axis: str) -> float:
    rho = spin_reduced_density(state, site)
    return float(np.real(np.trace(rho @ PAULI[axis.upper()])))


def exact_bond_entropy(state: ExactState, bond: int) -> float:
    """Entropy (bits) across the cut between sites ``bond`` and ``bond + 1``.

    The left factor holds the spins of sites ``0..bond`` and the walker when
    it sits on those sites, or a walker vacuum otherwise; the right factor
    likewise.  This is the same split as the matrix-product-state bonds.
    """
    n = state.n_sites
    if not 0 <= bond < n - 1:
        raise ValidationError(f"bond must lie in [0, {n - 2}]")
    k = bond + 1
    dl, dr = 2**k, 2 ** (n - k)
    a = state.amplitudes.reshape(2, n, dl, dr)
    # walker left: rows (vacuum-free walker states x left spins), cols right spins
    left = a[:, :k].reshape(2 * k * dl, dr)
    # walker right: rows left spins, cols (walker states x right spins)
    right = np.transpose(a[:, k:], (2, 0, 1, 3)).reshape(dl, 2 * (n - k) * dr)
    s = np.concatenate(
        [np.linalg.svd(left, compute_uv=False), np.linalg.svd(right, compute_uv=False)]
    )
    return _entropy_bits(s**2)


def _entropy_bits(p: NDArray[np.float64]) -> float:
    p = p[p > 1e-300]
    return float(-np.sum(p * np.log2(p)))


def to_x_basis(state: ExactState) -> NDArray[np.complex128]:
    """Spin factor rotated to the X basis; bit 0 of a site means ``|+>``."""
    n = state.n_sites
    h = np.array([[1, 1], [1, -1]]) / math.sqrt(2)
    psi = state.spin_view()
    for j in range(n):
        psi = np.moveaxis(np.tensordot(h, psi, axes=(1, 2 + j)), 0, 2 + j)
    return psi.reshape(2, n, 2**n)


def from_x_basis(amps_x: NDArray[np.complex128], origin: int, periodic: bool) -> ExactState:
    st = ExactState(amps_x.copy(), origin, periodic)
    # the Hadamard transform is its own inverse
    return ExactState(to_x_basis(st), origin, periodic)


def exact_snapshot(state: ExactState, t: int):
    from .mps_engine import Snapshot

    n = state.n_sites
    return Snapshot(
        t=t,
        probabilities=exact_walker_distribution(state),
        x=np.array([exact_spin_expectation(state, j, "X") for j in range(n)]),
        y=np.array([exact_spin_expectation(state, j, "Y") for j in range(n)]),
        z=np.array([exact_spin_expectation(state, j, "Z") for j in range(n)]),
        entropies=np.array([exact_bond_entropy(state, b) for b in range(n - 1)]),
        max_bond=0,
        discarded_weight=0.0,
    )
