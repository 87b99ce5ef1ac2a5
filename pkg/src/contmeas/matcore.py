"""Dense complex matrix helpers.

Operators are plain ``complex128`` ndarrays. The ``as_*`` validators check the
algebraic invariant once and hand back a read-only copy, so values can be
shared freely between threads.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .config import DEFAULT
from .errors import DomainError, InputError, NumericalError

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = {"I": I2, "X": X, "Y": Y, "Z": Z}

for _m in (I2, X, Y, Z):
    _m.setflags(write=False)


def kron(*ops: np.ndarray) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for op in ops:
        out = np.kron(out, op)
    return out


def pauli_string(label: str) -> np.ndarray:
    """``pauli_string("XI")`` is X (x) I."""
    return kron(*(PAULIS[c] for c in label.upper()))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.setflags(write=False)
    return a


def as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise InputError(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InputError("matrix has non-finite entries")
    return a


def is_hermitian(a: np.ndarray, rtol: float = DEFAULT.hermitian) -> bool:
    scale = max(np.max(np.abs(a)), np.finfo(float).tiny)
    return bool(np.max(np.abs(a - a.conj().T)) <= rtol * scale)


def as_hermitian(a, rtol: float = DEFAULT.hermitian) -> np.ndarray:
    """Validate ``a`` as Hermitian and return a symmetrized read-only copy."""
    a = as_matrix(a)
    if not is_hermitian(a, rtol):
        err = np.max(np.abs(a - a.conj().T))
        raise InputError(f"matrix is not Hermitian (max |H - H^dag| = {err:.3e})")
    return _frozen((a + a.conj().T) / 2)


def as_unitary(u, tol: float = DEFAULT.unitary) -> np.ndarray:
    u = as_matrix(u)
    n = u.shape[0]
    err = np.linalg.norm(u.conj().T @ u - np.eye(n))
    if err > tol * np.sqrt(n):
        raise InputError(f"matrix is not unitary (||U^dag U - I||_F = {err:.3e})")
    return _frozen(u)


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise InputError(f"dimension mismatch: {a.shape} vs {b.shape}")


def anticommutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Jordan product (AB + BA) / 2."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    _check_same_shape(a, b)
    return (a @ b + b @ a) / 2


def hs_inner(a: np.ndarray, b: np.ndarray) -> complex:
    """Hilbert-Schmidt inner product Tr(A^dag B)."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    _check_same_shape(a, b)
    return complex(np.vdot(a, b))


def fix_phase(v: np.ndarray, rtol: float = 1e-8) -> np.ndarray:
    """Rotate ``v`` so its first non-negligible entry is real and positive."""
    mags = np.abs(v)
    j = int(np.argmax(mags > rtol * mags.max()))
    return v * (np.conj(v[j]) / mags[j])


def canonical_basis(proj: np.ndarray, rank: int | None = None, rtol: float = 1e-8) -> np.ndarray:
    """Deterministic orthonormal basis (as columns) of the range of a projector.

    Standard basis vectors are projected in index order and Gram-Schmidt
    orthonormalized; each kept vector has a positive real pivot. The result
    depends only on the subspace, never on how it was computed.
    """
    n = proj.shape[0]
    if rank is None:
        rank = int(round(np.trace(proj).real))
    cols: list[np.ndarray] = []
    for i in range(n):
        if len(cols) == rank:
            break
        v = proj[:, i].copy()
        for _ in range(2):
            for c in cols:
                v -= c * np.vdot(c, v)
        nv = np.linalg.norm(v)
        if nv > rtol:
            cols.append(fix_phase(v / nv))
    if len(cols) != rank:
        raise NumericalError(f"projector rank {rank} but only {len(cols)} pivots found")
    return np.array(cols).T.reshape(n, rank)


@dataclass(frozen=True)
class EigenSystem:
    """Ascending eigenvalues and a unitary frame with ``H = U diag(values) U^dag``."""

    values: np.ndarray
    frame: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.frame * self.values) @ self.frame.conj().T


def clusters(values: np.ndarray, gap: float) -> list[np.ndarray]:
    """Split ascending values into runs whose consecutive gaps are <= ``gap``."""
    groups = [[0]]
    for i in range(1, len(values)):
        if values[i] - values[i - 1] <= gap:
            groups[-1].append(i)
        else:
            groups.append([i])
    return [np.array(g) for g in groups]


def eigensystem(h, cluster_tol: float = DEFAULT.eig_cluster) -> EigenSystem:
    """Eigendecomposition with a deterministic frame.

    Degenerate clusters (gap <= cluster_tol * ||H||) get the canonical basis of
    their eigenspace; simple eigenvectors get a fixed phase.
    """
    h = as_matrix(h)
    try:
        vals, vecs = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(h)
        raise NumericalError(f"eigendecomposition failed (condition number {cond:.3e})") from exc
    scale = max(np.max(np.abs(vals)), 1.0) if vals.size else 1.0
    frame = np.empty_like(vecs)
    for grp in clusters(vals, cluster_tol * scale):
        if len(grp) == 1:
            frame[:, grp[0]] = fix_phase(vecs[:, grp[0]])
        else:
            sub = vecs[:, grp]
            frame[:, grp] = canonical_basis(sub @ sub.conj().T, rank=len(grp))
    vals.setflags(write=False)
    frame.setflags(write=False)
    return EigenSystem(vals, frame)


def scalar_function(h, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Apply a real function to a Hermitian matrix through its spectrum."""
    es = eigensystem(h)
    with np.errstate(all="ignore"):
        fv = np.asarray(f(es.values), dtype=float)
    if fv.shape != es.values.shape or not np.all(np.isfinite(fv)):
        bad = es.values[~np.isfinite(fv)] if fv.shape == es.values.shape else es.values
        raise DomainError(f"function undefined at eigenvalue(s) {bad}")
    out = (es.frame * fv) @ es.frame.conj().T
    return (out + out.conj().T) / 2


def herm_to_real(a: np.ndarray) -> np.ndarray:
    """Real coordinates whose dot product is the HS inner product (last two axes)."""
    a = np.asarray(a)
    flat = a.reshape(a.shape[:-2] + (-1,))
    return np.concatenate([flat.real, flat.imag], axis=-1)


def real_to_herm(v: np.ndarray, n: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    half = v.shape[-1] // 2
    return (v[..., :half] + 1j * v[..., half:]).reshape(v.shape[:-1] + (n, n))


def standard_hermitian_basis(n: int) -> np.ndarray:
    """The n^2 orthonormal elementary Hermitian matrices."""
    out = []
    for j in range(n):
        e = np.zeros((n, n), dtype=complex)
        e[j, j] = 1
        out.append(e)
    s = 1 / np.sqrt(2)
    for j in range(n):
        for k in range(j + 1, n):
            e = np.zeros((n, n), dtype=complex)
            e[j, k] = e[k, j] = s
            out.append(e)
            e = np.zeros((n, n), dtype=complex)
            e[j, k], e[k, j] = -1j * s, 1j * s
            out.append(e)
    return np.array(out)


@dataclass(frozen=True)
class HermitianBasis:
    """HS-orthonormal Hermitian matrices; the first ``n_span`` span the inputs.

    ``kept`` lists the input indices that survived pruning, in order.
    """

    elements: np.ndarray
    n_span: int
    kept: tuple[int, ...] = ()
    pruned: tuple[int, ...] = field(default=())

    @property
    def dim(self) -> int:
        return self.elements.shape[-1]

    @property
    def count(self) -> int:
        return self.elements.shape[0]

    def gram(self) -> np.ndarray:
        v = herm_to_real(self.elements)
        return v @ v.T


def orthonormalize(mats: np.ndarray, rtol: float = DEFAULT.prune):
    """Modified Gram-Schmidt in HS geometry.

    Returns ``(orthonormal, kept_indices)``. A matrix is dropped when its
    residual norm is below ``rtol`` times its original norm.
    """
    mats = np.asarray(mats, dtype=complex)
    if mats.shape[0] == 0:
        return np.zeros((0,) + mats.shape[1:], dtype=complex), []
    n = mats.shape[-1]
    vecs = herm_to_real(mats)
    basis: list[np.ndarray] = []
    kept = []
    for i, v in enumerate(vecs):
        norm0 = np.linalg.norm(v)
        if norm0 == 0:
            continue
        w = v.copy()
        for _ in range(2):
            for b in basis:
                w -= b * (b @ w)
        nw = np.linalg.norm(w)
        if nw > rtol * norm0:
            basis.append(w / nw)
            kept.append(i)
    if not basis:
        return np.zeros((0, n, n), dtype=complex), kept
    return real_to_herm(np.array(basis), n), kept


def complete_basis(
    controls: Sequence[np.ndarray],
    prune_tol: float = DEFAULT.prune,
    preferred: np.ndarray | None = None,
) -> HermitianBasis:
    """Orthonormalize ``controls`` and extend them to a basis of all n x n Hermitian matrices.

    Linearly dependent controls are dropped with a warning. Completion draws
    from ``preferred`` first (when given), then from the elementary basis.
    """
    controls = np.asarray([as_hermitian(c) for c in controls])
    if controls.size == 0:
        raise InputError("need at least one control")
    n = controls.shape[-1]
    span, kept = orthonormalize(controls, prune_tol)
    pruned = tuple(i for i in range(len(controls)) if i not in kept)
    if pruned:
        warnings.warn(f"dropped linearly dependent controls {list(pruned)}", stacklevel=2)
    pool = [span]
    if preferred is not None and len(preferred):
        pool.append(np.asarray(preferred, dtype=complex).reshape(-1, n, n))
    pool.append(standard_hermitian_basis(n))
    full, _ = orthonormalize(np.concatenate(pool), 1e-6)
    if full.shape[0] != n * n:
        raise NumericalError(f"basis completion produced {full.shape[0]} elements, expected {n * n}")
    full.setflags(write=False)
    return HermitianBasis(full, span.shape[0], tuple(kept), pruned)


def span_coefficients(basis: np.ndarray, mats: np.ndarray) -> np.ndarray:
    """HS coefficients of ``mats`` (..., n, n) on an orthonormal ``basis`` (r, n, n)."""
    return herm_to_real(np.asarray(mats)) @ herm_to_real(basis).T


def span_residual(basis: np.ndarray, mats: np.ndarray) -> np.ndarray:
    """Frobenius norm of the part of each matrix orthogonal to an orthonormal span."""
    v = herm_to_real(np.asarray(mats))
    b = herm_to_real(basis)
    r = v - (v @ b.T) @ b
    return np.linalg.norm(r, axis=-1)


def random_hermitian(n: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return scale * (a + a.conj().T) / 2


def random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary via QR with phase correction."""
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    q, r = np.linalg.qr(a)
    d = np.diag(r)
    return q * (d / np.abs(d))
