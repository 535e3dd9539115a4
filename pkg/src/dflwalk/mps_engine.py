"""Matrix-product-state evolution of the walker and its on-site spins.

Local basis at every site is ``2*q + s`` with ``q`` in {0: no walker,
1: walker with coin 0, 2: walker with coin 1} and ``s`` the Z-basis spin.

With a single walker every bond carries a conserved label: whether the
walker sits to its left (1) or not (0).  Each site tensor is therefore
stored as three dense blocks

* ``v0[a0, s, b0]``    no walker here, walker further right,
* ``w[a0, c, s, b1]``  walker here with coin ``c``,
* ``v1[a1, s, b1]``    no walker here, walker further left,

and bond indices are ordered charge-0 first.  SVDs and QRs act blockwise,
which keeps matrices far smaller than the dense ``6D x 6D`` two-site form.
The dense rank-3 view ``(left, 6, right)`` is available via ``tensors``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from .errors import BondDimOverflow, CenterMisplaced, ValidationError
from .walk_core import WalkParams, coin_matrix

logger = logging.getLogger(__name__)

LOCAL_DIM = 6
DEFAULT_TRUNC_TOL = 1e-8
DEFAULT_TRUNC_RULE = "sigma"
TRUNC_RULES = ("sigma", "sigma2")
DEFAULT_MAX_BOND = 1024

_PAULI = {
    "X": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "Z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
}


def local_index(q: int, s: int) -> int:
    return 2 * q + s


def split_local_index(index: int) -> tuple[int, int]:
    return divmod(index, 2)


# ---------------------------------------------------------------- gates


@dataclass(frozen=True)
class GateMatrix:
    matrix: NDArray[np.complex128]
    tag: str

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.complex128)
        if m.shape not in ((6, 6), (36, 36)):
            raise ValidationError(f"gate must be 6x6 or 36x36, got {m.shape}")
        if np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))) > 1e-12:
            raise ValidationError(f"gate {self.tag!r} is not unitary")
        object.__setattr__(self, "matrix", m)

    @property
    def is_bond(self) -> bool:
        return self.matrix.shape == (36, 36)


def _onsite(walker_block: NDArray, vacuum_block: NDArray | None = None) -> NDArray:
    g = np.zeros((6, 6), dtype=np.complex128)
    g[:2, :2] = np.eye(2) if vacuum_block is None else vacuum_block
    g[2:, 2:] = walker_block
    return g


def coin_gate(theta: float) -> GateMatrix:
    return GateMatrix(_onsite(np.kron(coin_matrix(theta), np.eye(2))), "coin")


def interaction_gate(phi: float) -> GateMatrix:
    return GateMatrix(_onsite(np.kron(np.eye(2), coin_matrix(phi))), "interaction")


def coin_interaction_gate(theta: float, phi: float) -> GateMatrix:
    """Coin after interaction, merged into one on-site gate."""
    return GateMatrix(_onsite(np.kron(coin_matrix(theta), coin_matrix(phi))), "coin*interaction")


def field_gate(phi_prime: float) -> GateMatrix:
    rz = np.diag([np.exp(-1j * phi_prime), np.exp(1j * phi_prime)])
    return GateMatrix(np.kron(np.eye(3), rz), "field")


def _hop_gate(q_moving: int, to_right: bool, tag: str) -> GateMatrix:
    """Two-site permutation moving walker state ``q_moving`` across the bond.

    The exchange ``|q,0> <-> |0,q>`` (spins untouched) is the unitary
    completion of the one-way hop; swept in the matching direction it
    moves each amplitude exactly one site.
    """
    g = np.eye(36, dtype=np.complex128)
    for s1 in range(2):
        for s2 in range(2):
            left = 6 * local_index(q_moving, s1) + local_index(0, s2)
            right = 6 * local_index(0, s1) + local_index(q_moving, s2)
            g[[left, right], left] = (0, 1)
            g[[left, right], right] = (1, 0)
    return GateMatrix(g, tag)


def shift_right_gate() -> GateMatrix:
    """Coin-0 walker hops from the left site to the right site."""
    return _hop_gate(1, True, "shift_right")


def shift_left_gate() -> GateMatrix:
    """Coin-1 walker hops from the right site to the left site."""
    return _hop_gate(2, False, "shift_left")


def identity_gate(bond: bool = False) -> GateMatrix:
    return GateMatrix(np.eye(36 if bond else 6), "identity")


_VV = [6 * s1 + s2 for s1 in range(2) for s2 in range(2)]
_ONE = [6 * (2 + 2 * c + s1) + s2 for c in range(2) for s1 in range(2) for s2 in range(2)] + [
    6 * s1 + 2 + 2 * c + s2 for s1 in range(2) for c in range(2) for s2 in range(2)
]


def _gate_blocks(gate: GateMatrix) -> tuple[NDArray, NDArray]:
    """Cached :func:`_bond_blocks` of a bond gate."""
    blocks = gate.__dict__.get("_blocks")
    if blocks is None:
        blocks = _bond_blocks(gate.matrix)
        object.__setattr__(gate, "_blocks", blocks)
    return blocks


def _bond_blocks(g: NDArray[np.complex128]) -> tuple[NDArray, NDArray]:
    """Restrict a 36x36 gate to the no-walker and one-walker subspaces."""
    rest = sorted(set(range(36)) - set(_VV) - set(_ONE))
    for rows, cols in ((_VV, _ONE), (_ONE, _VV), (_VV, rest), (rest, _VV), (_ONE, rest), (rest, _ONE)):
        if np.max(np.abs(g[np.ix_(rows, cols)])) > 1e-14:
            raise ValidationError("bond gate does not conserve the walker number")
    return g[np.ix_(_VV, _VV)], g[np.ix_(_ONE, _ONE)]


# ---------------------------------------------------------------- state


@dataclass
class SiteTensor:
    v0: NDArray[np.complex128]
    w: NDArray[np.complex128]
    v1: NDArray[np.complex128]

    @property
    def left_dims(self) -> tuple[int, int]:
        return self.v0.shape[0], self.v1.shape[0]

    @property
    def right_dims(self) -> tuple[int, int]:
        return self.v0.shape[2], self.v1.shape[2]

    def dense(self) -> NDArray[np.complex128]:
        l0, l1 = self.left_dims
        r0, r1 = self.right_dims
        a = np.zeros((l0 + l1, 6, r0 + r1), dtype=np.complex128)
        a[:l0, 0:2, :r0] = self.v0
        a[:l0, 2:6, r0:] = self.w.reshape(l0, 4, r1)
        a[l0:, 0:2, r0:] = self.v1
        return a

    def copy(self) -> "SiteTensor":
        return SiteTensor(self.v0.copy(), self.w.copy(), self.v1.copy())


@dataclass
class Snapshot:
    """Per-time diagnostics shared by the MPS and exact engines."""

    t: int
    probabilities: NDArray[np.float64]
    x: NDArray[np.float64]
    y: NDArray[np.float64]
    z: NDArray[np.float64]
    entropies: NDArray[np.float64]
    max_bond: int
    discarded_weight: float


@dataclass
class MpsState:
    sites: list[SiteTensor]
    center: int
    origin: int
    trunc_tol: float = DEFAULT_TRUNC_TOL
    max_bond: int | None = DEFAULT_MAX_BOND
    hard_cap: bool = False
    discarded_weight: float = 0.0
    trunc_rule: str = DEFAULT_TRUNC_RULE
    # squared singular values recorded by the latest right-to-left sweep
    bond_spectra: dict[int, NDArray[np.float64]] = field(default_factory=dict)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def tensors(self) -> list[NDArray[np.complex128]]:
        return [s.dense() for s in self.sites]

    def bond_dims(self) -> list[int]:
        """Dimensions of the ``N + 1`` bonds, boundaries included."""
        dims = [sum(self.sites[0].left_dims)]
        dims += [sum(s.right_dims) for s in self.sites]
        return dims

    def max_bond_dim(self) -> int:
        return max(self.bond_dims())

    def copy(self) -> "MpsState":
        new = MpsState(
            [s.copy() for s in self.sites], self.center, self.origin, self.trunc_tol,
            self.max_bond, self.hard_cap, self.discarded_weight, self.trunc_rule,
        )
        new.bond_spectra = {k: v.copy() for k, v in self.bond_spectra.items()}
        return new


def mps_init(
    params: WalkParams,
    trunc_tol: float = DEFAULT_TRUNC_TOL,
    max_bond: int | None = DEFAULT_MAX_BOND,
    hard_cap: bool = False,
    trunc_rule: str = DEFAULT_TRUNC_RULE,
) -> MpsState:
    """Product state: walker with ``coin_init`` at the origin, Z-basis spins.

    ``trunc_rule`` selects what is compared with ``trunc_tol`` after the
    singular values are normalized: ``"sigma"`` drops ``sigma < tol`` and
    ``"sigma2"`` drops ``sigma**2 < tol``.
    """
    if trunc_rule not in TRUNC_RULES:
        raise ValidationError(f"trunc_rule must be one of {TRUNC_RULES}")
    n, o = params.n_sites, params.origin
    sites = []
    for j in range(n):
        spin = np.zeros(2, dtype=np.complex128)
        spin[params.spin_init[j]] = 1.0
        if j < o:
            st = SiteTensor(spin.reshape(1, 2, 1), np.zeros((1, 2, 2, 0), complex), np.zeros((0, 2, 0), complex))
        elif j == o:
            w = np.einsum("c,s->cs", np.asarray(params.coin_init), spin, optimize=True).reshape(1, 2, 2, 1)
            st = SiteTensor(np.zeros((1, 2, 0), complex), w, np.zeros((0, 2, 1), complex))
        else:
            st = SiteTensor(np.zeros((0, 2, 0), complex), np.zeros((0, 2, 2, 1), complex), spin.reshape(1, 2, 1))
        sites.append(st)
    return MpsState(sites, 0, o, trunc_tol, max_bond, hard_cap, trunc_rule=trunc_rule)


# ---------------------------------------------------------------- linear algebra helpers


def _svd(m: NDArray[np.complex128]):
    if m.size == 0:
        k = 0
        return (np.zeros((m.shape[0], k), complex), np.zeros(k), np.zeros((k, m.shape[1]), complex))
    try:
        return scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesdd", check_finite=False)
    except np.linalg.LinAlgError:
        return scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesvd", check_finite=False)


def _qr(m: NDArray[np.complex128]):
    if m.size == 0:
        k = 0
        return np.zeros((m.shape[0], k), complex), np.zeros((k, m.shape[1]), complex)
    return scipy.linalg.qr(m, mode="economic", check_finite=False)


def _lq(m: NDArray[np.complex128]):
    q, r = _qr(m.conj().T)
    return r.conj().T, q.conj().T


# ---------------------------------------------------------------- gate application


def apply_onsite(mps: MpsState, site: int, gate: GateMatrix) -> MpsState:
    """Contract a 6x6 gate with the physical index of one site, in place."""
    g = gate.matrix
    if g.shape != (6, 6):
        raise ValidationError("apply_onsite needs a 6x6 gate")
    if np.max(np.abs(g[:2, 2:])) > 1e-14 or np.max(np.abs(g[2:, :2])) > 1e-14:
        raise ValidationError("on-site gate must not create or destroy the walker")
    st = mps.sites[site]
    gv, gw = g[:2, :2], g[2:, 2:]
    st.v0 = gv @ st.v0
    st.v1 = gv @ st.v1
    l0 = st.w.shape[0]
    r1 = st.w.shape[3]
    st.w = (gw @ st.w.reshape(l0, 4, r1)).reshape(l0, 2, 2, r1)
    return mps


def _truncate(spectra: list[NDArray[np.float64]], mps: MpsState) -> list[int]:
    """Number of singular values to keep in each charge block."""
    total = sum(float(np.sum(s**2)) for s in spectra)
    power = 1.0 if mps.trunc_rule == "sigma" else 2.0
    cut = mps.trunc_tol ** (2.0 / power)
    keep = [int(np.count_nonzero(s**2 / total >= cut)) for s in spectra]
    if sum(keep) == 0:
        # keep the single largest value
        best = max(range(len(spectra)), key=lambda i: spectra[i][0] if len(spectra[i]) else -1.0)
        keep[best] = 1
    if mps.max_bond is not None and sum(keep) > mps.max_bond:
        if mps.hard_cap:
            raise BondDimOverflow(f"bond dimension {sum(keep)} exceeds max_bond={mps.max_bond}")
        logger.warning("bond dimension %d capped at %d", sum(keep), mps.max_bond)
        tagged = sorted(
            ((float(v), i) for i, s in enumerate(spectra) for v in s[: keep[i]]), reverse=True
        )[: mps.max_bond]
        keep = [sum(1 for _, i in tagged if i == b) for b in range(len(spectra))]
    kept = sum(float(np.sum(s[:k] ** 2)) for s, k in zip(spectra, keep))
    mps.discarded_weight += max(0.0, (total - kept) / total)
    return keep


def apply_bond_gate(
    mps: MpsState, bond: int, gate: GateMatrix, direction: str | None = None
) -> NDArray[np.float64]:
    """Apply a two-site gate on sites ``bond`` and ``bond + 1`` and re-split.

    The orthogonality center must sit on one of the two sites.  After the
    split it moves to ``bond + 1`` (``direction="right"``) or ``bond``
    (``"left"``); by default it moves away from where it started.  Returns
    the kept squared singular values of the new bond (unit sum).
    """
    if mps.center not in (bond, bond + 1):
        raise CenterMisplaced(f"center at {mps.center}, bond gate on ({bond}, {bond + 1})")
    if direction is None:
        direction = "right" if mps.center == bond else "left"
    gvv, g1 = _gate_blocks(gate)
    a, b = mps.sites[bond], mps.sites[bond + 1]
    l0, l1 = a.left_dims
    r0, r1 = b.right_dims

    m = a.v0.shape[2]
    k = a.v1.shape[2]
    # two-site blocks (left bond, physical pair, right bond); gates act on the middle axis
    t00 = gvv @ (a.v0.reshape(2 * l0, m) @ b.v0.reshape(m, 2 * r0)).reshape(l0, 4, r0)
    t11 = gvv @ (a.v1.reshape(2 * l1, k) @ b.v1.reshape(k, 2 * r1)).reshape(l1, 4, r1)
    tl = (a.w.reshape(4 * l0, k) @ b.v1.reshape(k, 2 * r1)).reshape(l0, 8, r1)
    tr = (a.v0.reshape(2 * l0, m) @ b.w.reshape(m, 4 * r1)).reshape(l0, 8, r1)
    t1 = g1 @ np.concatenate([tl, tr], axis=1)
    tl, tr = t1[:, :8], t1[:, 8:]

    m0 = np.concatenate([t00.reshape(2 * l0, 2 * r0), tr.reshape(2 * l0, 4 * r1)], axis=1)
    m1 = np.concatenate([t11.reshape(2 * l1, 2 * r1), tl.reshape(4 * l0, 2 * r1)], axis=0)
    u0, s0, vh0 = _svd(m0)
    u1, s1, vh1 = _svd(m1)
    k0, k1 = _truncate([s0, s1], mps)
    norm = math.sqrt(float(np.sum(s0[:k0] ** 2) + np.sum(s1[:k1] ** 2)))
    u0, s0, vh0 = u0[:, :k0], s0[:k0] / norm, vh0[:k0]
    u1, s1, vh1 = u1[:, :k1], s1[:k1] / norm, vh1[:k1]
    if direction == "right":
        vh0 = s0[:, None] * vh0
        vh1 = s1[:, None] * vh1
        mps.center = bond + 1
    else:
        u0 = u0 * s0[None, :]
        u1 = u1 * s1[None, :]
        mps.center = bond
    a.v0 = u0.reshape(l0, 2, k0)
    a.v1 = u1[: 2 * l1].reshape(l1, 2, k1)
    a.w = u1[2 * l1:].reshape(l0, 2, 2, k1)
    b.v0 = vh0[:, : 2 * r0].reshape(k0, 2, r0)
    b.w = vh0[:, 2 * r0:].reshape(k0, 2, 2, r1)
    b.v1 = vh1.reshape(k1, 2, r1)
    return np.concatenate([s0, s1]) ** 2


# ---------------------------------------------------------------- canonical form


def _lmul(r: NDArray, x: NDArray) -> NDArray:
    """Contract ``r`` with the left bond index of ``x``."""
    rest = x.shape[1:]
    return (r @ x.reshape(x.shape[0], math.prod(rest))).reshape(r.shape[0], *rest)


def _rmul(x: NDArray, r: NDArray) -> NDArray:
    """Contract the right bond index of ``x`` with ``r``."""
    rest = x.shape[:-1]
    return (x.reshape(math.prod(rest), x.shape[-1]) @ r).reshape(*rest, r.shape[1])


def move_center_right(mps: MpsState) -> None:
    i = mps.center
    if i >= mps.n_sites - 1:
        raise CenterMisplaced("center already at the right edge")
    a, b = mps.sites[i], mps.sites[i + 1]
    l0, l1 = a.left_dims
    r0, r1 = a.right_dims
    q0, rr0 = _qr(a.v0.reshape(2 * l0, r0))
    q1, rr1 = _qr(np.concatenate([a.w.reshape(4 * l0, r1), a.v1.reshape(2 * l1, r1)], axis=0))
    k0, k1 = q0.shape[1], q1.shape[1]
    a.v0 = q0.reshape(l0, 2, k0)
    a.w = q1[: 4 * l0].reshape(l0, 2, 2, k1)
    a.v1 = q1[4 * l0:].reshape(l1, 2, k1)
    b.v0 = _lmul(rr0, b.v0)
    b.w = _lmul(rr0, b.w)
    b.v1 = _lmul(rr1, b.v1)
    mps.center = i + 1


def move_center_left(mps: MpsState) -> None:
    i = mps.center
    if i <= 0:
        raise CenterMisplaced("center already at the left edge")
    a, b = mps.sites[i - 1], mps.sites[i]
    l0, l1 = b.left_dims
    r0, r1 = b.right_dims
    ll0, q0 = _lq(np.concatenate([b.v0.reshape(l0, 2 * r0), b.w.reshape(l0, 4 * r1)], axis=1))
    ll1, q1 = _lq(b.v1.reshape(l1, 2 * r1))
    k0, k1 = q0.shape[0], q1.shape[0]
    b.v0 = q0[:, : 2 * r0].reshape(k0, 2, r0)
    b.w = q0[:, 2 * r0:].reshape(k0, 2, 2, r1)
    b.v1 = q1.reshape(k1, 2, r1)
    a.v0 = _rmul(a.v0, ll0)
    a.w = _rmul(a.w, ll1)
    a.v1 = _rmul(a.v1, ll1)
    mps.center = i - 1


def move_center(mps: MpsState, site: int) -> None:
    while mps.center < site:
        move_center_right(mps)
    while mps.center > site:
        move_center_left(mps)


def recanonicalize(mps: MpsState) -> None:
    """Re-orthonormalize every tensor with a QR sweep out and back."""
    target = mps.center
    move_center(mps, 0)
    move_center(mps, mps.n_sites - 1)
    move_center(mps, target)


def orthonormality_error(mps: MpsState) -> float:
    """Largest deviation from left/right orthonormality around the center."""
    err = 0.0
    for j, a in enumerate(mps.tensors):
        if j < mps.center:
            g = np.einsum("asb,asc->bc", a.conj(), a, optimize=True)
        elif j > mps.center:
            g = np.einsum("asb,csb->ac", a, a.conj(), optimize=True)
        else:
            continue
        err = max(err, float(np.max(np.abs(g - np.eye(g.shape[0])), initial=0.0)))
    return err


# ---------------------------------------------------------------- stepping


def mps_step(mps: MpsState, params: WalkParams, phi_prime: float = 0.0, recanon: bool = True) -> MpsState:
    """One step ``T C M`` (after the field ``exp(-i phi' Z)`` when ``phi_prime``).

    On-site ``C M`` everywhere, a left-to-right sweep of the coin-1 hop, then
    a right-to-left sweep of the coin-0 hop.  Each sweep moves every
    amplitude once.  The squared singular values produced by the second
    sweep are those of the finished step (later gates act only to the left
    of each bond) and are stored in ``mps.bond_spectra``.
    """
    n = mps.n_sites
    move_center(mps, 0)
    if phi_prime:
        fg = field_gate(phi_prime)
        for j in range(n):
            apply_onsite(mps, j, fg)
    cm = coin_interaction_gate(params.theta, params.phi)
    for j in range(n):
        apply_onsite(mps, j, cm)
    if n == 1:
        return mps
    t_left, t_right = _SHIFT_LEFT, _SHIFT_RIGHT
    for b in range(n - 1):
        apply_bond_gate(mps, b, t_left, "right")
    for b in range(n - 2, -1, -1):
        mps.bond_spectra[b] = apply_bond_gate(mps, b, t_right, "left")
    if recanon:
        recanonicalize(mps)
    return mps


_SHIFT_LEFT = shift_left_gate()
_SHIFT_RIGHT = shift_right_gate()


# ---------------------------------------------------------------- measurement


def _left_envs(mps: MpsState, start: int, stop: int) -> list[tuple[NDArray, NDArray]]:
    """Left environments at the left bond of sites ``start..stop`` (inclusive).

    The environment at ``start`` is the identity, valid when all sites left
    of ``start`` are left-orthonormal.
    """
    st = mps.sites[start]
    l0, l1 = st.left_dims
    env = (np.eye(l0, dtype=complex), np.eye(l1, dtype=complex))
    out = [env]
    for j in range(start, stop):
        env = _left_env_step(mps.sites[j], env)
        out.append(env)
    return out


def _right_envs(mps: MpsState, start: int, stop: int) -> list[tuple[NDArray, NDArray]]:
    """Right environments at the right bond of sites ``stop..start`` (``start >= stop``).

    Returned in order of decreasing site.
    """
    st = mps.sites[start]
    r0, r1 = st.right_dims
    env = (np.eye(r0, dtype=complex), np.eye(r1, dtype=complex))
    out = [env]
    for j in range(start, stop, -1):
        env = _right_env_step(mps.sites[j], env)
        out.append(env)
    return out


def _left_env_step(st: SiteTensor, env) -> tuple[NDArray, NDArray]:
    """Carry ``(E0, E1)`` from the left bond of ``st`` to its right bond."""
    e0, e1 = env
    l0, l1 = st.left_dims
    r0, r1 = st.right_dims
    v0 = st.v0.reshape(l0, 2 * r0)
    w = st.w.reshape(l0, 4 * r1)
    v1 = st.v1.reshape(l1, 2 * r1)
    n0 = np.zeros((r0, r0), complex)
    if l0 and r0:
        n0 += v0.reshape(2 * l0, r0).conj().T @ (e0 @ v0).reshape(2 * l0, r0)
    n1 = np.zeros((r1, r1), complex)
    if l0 and r1:
        n1 += w.reshape(4 * l0, r1).conj().T @ (e0 @ w).reshape(4 * l0, r1)
    if l1 and r1:
        n1 += v1.reshape(2 * l1, r1).conj().T @ (e1 @ v1).reshape(2 * l1, r1)
    return n0, n1


def _right_env_step(st: SiteTensor, env) -> tuple[NDArray, NDArray]:
    """Carry ``(F0, F1)`` from the right bond of ``st`` to its left bond."""
    f0, f1 = env
    l0, l1 = st.left_dims
    r0, r1 = st.right_dims
    n0 = np.zeros((l0, l0), complex)
    if l0 and r0:
        n0 += (st.v0.reshape(2 * l0, r0) @ f0).reshape(l0, 2 * r0) @ st.v0.reshape(l0, 2 * r0).conj().T
    if l0 and r1:
        n0 += (st.w.reshape(4 * l0, r1) @ f1).reshape(l0, 4 * r1) @ st.w.reshape(l0, 4 * r1).conj().T
    n1 = np.zeros((l1, l1), complex)
    if l1 and r1:
        n1 += (st.v1.reshape(2 * l1, r1) @ f1).reshape(l1, 2 * r1) @ st.v1.reshape(l1, 2 * r1).conj().T
    return n0, n1


def _block_density(e: NDArray, a: NDArray, f: NDArray) -> NDArray[np.complex128]:
    """``sum e[c,a] a[a,s,b] f[b,d] conj(a[c,t,d])`` for a block of shape ``(l, k, r)``."""
    l, k, r = a.shape
    if not a.size:
        return np.zeros((k, k), complex)
    m = (e @ (a.reshape(l * k, r) @ f).reshape(l, k * r)).reshape(l, k, r)
    return m.transpose(1, 0, 2).reshape(k, l * r) @ a.conj().transpose(1, 0, 2).reshape(k, l * r).T


def _site_density(st: SiteTensor, left, right) -> NDArray[np.complex128]:
    """6x6 reduced density matrix ``rho[sigma, sigma']`` of one site."""
    e0, e1 = left
    f0, f1 = right
    rho = np.zeros((6, 6), dtype=np.complex128)
    rho[:2, :2] = _block_density(e0, st.v0, f0) + _block_density(e1, st.v1, f1)
    l0, r1 = st.w.shape[0], st.w.shape[3]
    rho[2:, 2:] = _block_density(e0, st.w.reshape(l0, 4, r1), f1)
    return rho


def site_densities(mps: MpsState) -> list[NDArray[np.complex128]]:
    """Reduced density matrices of every site, without moving the center."""
    n, c = mps.n_sites, mps.center
    last = mps.sites[-1]
    first = mps.sites[0]
    ident_r = (np.eye(last.right_dims[0], dtype=complex), np.eye(last.right_dims[1], dtype=complex))
    ident_l = (np.eye(first.left_dims[0], dtype=complex), np.eye(first.left_dims[1], dtype=complex))
    rhos: list[NDArray] = [None] * n  # type: ignore[list-item]
    lefts = _left_envs(mps, c, n - 1)
    for k, j in enumerate(range(c, n)):
        st = mps.sites[j]
        r = (np.eye(st.right_dims[0], dtype=complex), np.eye(st.right_dims[1], dtype=complex))
        rhos[j] = _site_density(st, lefts[k], r)
    if c > 0:
        rights = _right_envs(mps, c, 0)
        for k, j in enumerate(range(c, 0, -1)):
            st = mps.sites[j - 1]
            lft = (np.eye(st.left_dims[0], dtype=complex), np.eye(st.left_dims[1], dtype=complex))
            rhos[j - 1] = _site_density(st, lft, rights[k + 1])
    del ident_l, ident_r
    return rhos


def local_expectation(mps: MpsState, site: int, axis: str) -> float:
    """Expectation of the spin Pauli ``axis`` at ``site`` (identity on the walker)."""
    rho = _single_density(mps, site)
    op = np.kron(np.eye(3), _PAULI[axis.upper()])
    return float(np.real(np.trace(rho @ op)))


def _single_density(mps: MpsState, site: int) -> NDArray[np.complex128]:
    c = mps.center
    st = mps.sites[site]
    if site >= c:
        left = _left_envs(mps, c, site)[-1]
        right = (np.eye(st.right_dims[0], dtype=complex), np.eye(st.right_dims[1], dtype=complex))
    else:
        right = _right_envs(mps, c, site)[-1]
        left = (np.eye(st.left_dims[0], dtype=complex), np.eye(st.left_dims[1], dtype=complex))
    return _site_density(st, left, right)


def spin_expectations(mps: MpsState) -> dict[str, NDArray[np.float64]]:
    rhos = site_densities(mps)
    out = {}
    for axis, p in _PAULI.items():
        op = np.kron(np.eye(3), p)
        out[axis] = np.array([float(np.real(np.trace(r @ op))) for r in rhos])
    return out


def walker_distribution_mps(mps: MpsState) -> NDArray[np.float64]:
    return np.array([float(np.real(np.trace(r[2:, 2:]))) for r in site_densities(mps)])


def _entropy_bits(p: NDArray[np.float64]) -> float:
    p = np.asarray(p, dtype=np.float64)
    p = p[p > 1e-300]
    return float(-np.sum(p * np.log2(p)))


def bond_spectrum(mps: MpsState, bond: int) -> NDArray[np.float64]:
    """Squared Schmidt values across the cut between ``bond`` and ``bond + 1``."""
    if not 0 <= bond < mps.n_sites - 1:
        raise ValidationError(f"bond must lie in [0, {mps.n_sites - 2}]")
    c = mps.center
    if c <= bond:
        e0, e1 = _left_envs(mps, c, bond + 1)[-1]
    else:
        e0, e1 = _right_envs(mps, c, bond)[-1]
    vals = np.concatenate([np.linalg.eigvalsh(e0) if e0.size else [], np.linalg.eigvalsh(e1) if e1.size else []])
    return np.clip(np.real(vals), 0.0, None)


def bond_entropy(mps: MpsState, bond: int) -> float:
    """Von Neumann entropy in bits, ``-sum sigma^2 log2 sigma^2``."""
    return _entropy_bits(bond_spectrum(mps, bond))


def bond_entropies(mps: MpsState) -> NDArray[np.float64]:
    """Entropies of all ``N - 1`` internal bonds."""
    n, c = mps.n_sites, mps.center
    out = np.zeros(max(n - 1, 0))
    lefts = _left_envs(mps, c, n - 1)
    for k in range(1, len(lefts)):
        bond = c + k - 1
        e0, e1 = lefts[k]
        out[bond] = _entropy_bits(_eig_gram(e0, e1))
    if c > 0:
        rights = _right_envs(mps, c, 0)
        for k in range(1, len(rights)):
            bond = c - k
            e0, e1 = rights[k]
            out[bond] = _entropy_bits(_eig_gram(e0, e1))
    return out


def _eig_gram(e0, e1) -> NDArray[np.float64]:
    vals = [np.linalg.eigvalsh(e) for e in (e0, e1) if e.size]
    return np.clip(np.concatenate(vals), 0.0, None) if vals else np.zeros(0)


def entropy_from_spectrum(p: NDArray[np.float64]) -> float:
    return _entropy_bits(p)


def apply_field(mps: MpsState, phi_prime: float) -> MpsState:
    g = field_gate(phi_prime)
    for j in range(mps.n_sites):
        apply_onsite(mps, j, g)
    return mps


def norm_squared(mps: MpsState) -> float:
    st = mps.sites[mps.center]
    return float(
        np.sum(np.abs(st.v0) ** 2) + np.sum(np.abs(st.w) ** 2) + np.sum(np.abs(st.v1) ** 2)
    )


def snapshot(mps: MpsState, t: int) -> Snapshot:
    rhos = site_densities(mps)
    exps = {}
    for axis, p in _PAULI.items():
        op = np.kron(np.eye(3), p)
        exps[axis] = np.array([float(np.real(np.trace(r @ op))) for r in rhos])
    return Snapshot(
        t=t,
        probabilities=np.array([float(np.real(np.trace(r[2:, 2:]))) for r in rhos]),
        x=exps["X"],
        y=exps["Y"],
        z=exps["Z"],
        entropies=bond_entropies(mps),
        max_bond=mps.max_bond_dim(),
        discarded_weight=mps.discarded_weight,
    )


def to_exact_amplitudes(mps: MpsState) -> NDArray[np.complex128]:
    """Single-walker amplitudes in the ``(2, N, 2**N)`` exact-engine layout."""
    n = mps.n_sites
    if n > 14:
        raise ValidationError("dense reconstruction limited to N <= 14")
    out = np.zeros((2, n, 2**n), dtype=np.complex128)
    for pos in range(n):
        # vec[..., bond]: accumulated spin indices, trailing bond index
        vec = np.ones((1,), dtype=complex)
        for j in range(pos):
            vec = np.einsum("...a,asb->...sb", vec, mps.sites[j].v0, optimize=True)
        vec = np.einsum("...a,acsb->c...sb", vec, mps.sites[pos].w, optimize=True)
        for j in range(pos + 1, n):
            vec = np.einsum("...a,asb->...sb", vec, mps.sites[j].v1, optimize=True)
        out[:, pos, :] = vec.reshape(2, 2**n)
    return out


def evolve(
    mps: MpsState,
    params: WalkParams,
    steps: int,
    phi_prime: float = 0.0,
    recanon_every: int = 1,
    callback=None,
) -> MpsState:
    """Run ``steps`` steps; ``callback(mps, t)`` is called after each one."""
    for t in range(1, steps + 1):
        mps_step(mps, params, phi_prime, recanon=recanon_every > 0 and t % recanon_every == 0)
        if callback is not None:
            callback(mps, t)
    return mps
