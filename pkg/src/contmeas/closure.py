"""Enumeration of anticommutation-closed control subspaces.

A control set that is not closed under the Jordan product forces the control
vector onto the common zero set of the forms ``p^T Gamma^(k) p`` for every
off-span direction k. Each such form is split (Witt decomposition) into
hyperbolic planes plus a radical and anisotropic remainder; choosing one
isotropic line per plane gives a candidate subspace, and the search recurses
until the span closes.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import DEFAULT
from .errors import InputError, ResourceLimitError
from .matcore import herm_to_real, orthonormalize, span_residual
from .structure import GammaTensor, compute_gamma, control_form, violating_indices, with_identity

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WittDecomposition:
    """Canonical coordinates for a real quadratic form.

    Columns of ``transform`` are, in order: ``u_1, w_1, ..., u_N, w_N`` (each
    hyperbolic pair with form values +1 and -1), the radical, then the
    anisotropic directions with form values ``aniso_signs``.
    """

    transform: np.ndarray
    n_hyperbolic: int
    null_basis: np.ndarray
    aniso_basis: np.ndarray
    aniso_signs: np.ndarray
    signature: tuple[int, int, int]

    def canonical_form(self) -> np.ndarray:
        n = self.n_hyperbolic
        diag = [1.0, -1.0] * n + [0.0] * self.null_basis.shape[1] + list(self.aniso_signs)
        return np.diag(diag)


def witt_decompose(q: np.ndarray, tol: float = DEFAULT.witt_null) -> WittDecomposition:
    q = np.asarray(q, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise InputError(f"quadratic form must be square, got {q.shape}")
    if np.max(np.abs(q - q.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(q), initial=0.0)):
        raise InputError("quadratic form is not symmetric")
    q = (q + q.T) / 2
    vals, vecs = np.linalg.eigh(q)
    scale = np.max(np.abs(vals), initial=0.0)
    null = np.abs(vals) <= tol * scale if scale > 0 else np.ones(len(vals), dtype=bool)
    pos = [i for i in np.argsort(-vals) if vals[i] > 0 and not null[i]]
    neg = [i for i in np.argsort(vals) if vals[i] < 0 and not null[i]]
    n_hyp = min(len(pos), len(neg))
    cols = []
    for i, j in zip(pos[:n_hyp], neg[:n_hyp]):
        cols.append(vecs[:, i] / np.sqrt(vals[i]))
        cols.append(vecs[:, j] / np.sqrt(-vals[j]))
    null_basis = vecs[:, np.flatnonzero(null)]
    rest = pos[n_hyp:] + neg[n_hyp:]
    aniso = np.array([vecs[:, i] / np.sqrt(abs(vals[i])) for i in rest]).T.reshape(len(q), len(rest))
    signs = np.sign(vals[rest]) if rest else np.zeros(0)
    hyp = np.array(cols).T.reshape(len(q), 2 * n_hyp)
    transform = np.concatenate([hyp, null_basis, aniso], axis=1)
    return WittDecomposition(
        transform=transform,
        n_hyperbolic=n_hyp,
        null_basis=null_basis,
        aniso_basis=aniso,
        aniso_signs=signs,
        signature=(len(pos), len(neg), int(null.sum())),
    )


@dataclass(frozen=True)
class Branch:
    signs: tuple[int, ...]
    basis: np.ndarray  # (dim, k) columns span the isotropic subspace

    def residual(self, q: np.ndarray) -> float:
        if self.basis.shape[1] == 0:
            return 0.0
        return float(np.max(np.abs(self.basis.T @ q @ self.basis)))


def isotropic_branches(w: WittDecomposition, cap: int = 16) -> list[Branch]:
    """One totally isotropic subspace per sign choice ``x_i = +-1``.

    Each is ``span{u_i + x_i w_i} + radical``.
    """
    n = w.n_hyperbolic
    if n > cap:
        raise ResourceLimitError(f"{n} hyperbolic planes exceed the branch cap {cap} (2^{n} branches)")
    t = w.transform
    out = []
    for signs in itertools.product((1, -1), repeat=n):
        lines = [t[:, 2 * i] + s * t[:, 2 * i + 1] for i, s in enumerate(signs)]
        lines = [v / np.linalg.norm(v) for v in lines]
        basis = np.concatenate([np.array(lines).T.reshape(t.shape[0], n), w.null_basis], axis=1)
        out.append(Branch(tuple(signs), basis))
    return out


def closure_residual(basis: np.ndarray) -> float:
    """Largest off-span Frobenius norm among pairwise Jordan products."""
    basis = np.asarray(basis, dtype=complex)
    ortho, _ = orthonormalize(basis)
    worst = 0.0
    for i in range(len(basis)):
        a = basis[i]
        prods = (a @ basis[i:] + basis[i:] @ a) / 2
        worst = max(worst, float(np.max(span_residual(ortho, prods))))
    return worst


def closure_check(basis: Sequence[np.ndarray], tol: float = DEFAULT.closure) -> tuple[bool, float]:
    basis = np.asarray(basis, dtype=complex)
    if basis.ndim != 3 or len(basis) == 0:
        raise InputError("closure_check needs a non-empty stack of matrices")
    res = closure_residual(basis)
    return res <= tol, res


@dataclass(frozen=True)
class ClosedSubspace:
    """An anticommutation-closed span.

    ``basis`` holds plain I first, then HS-orthonormal traceless elements.
    ``provenance`` records ``(k, signs)`` for every branching step taken.
    """

    basis: np.ndarray
    residual: float
    provenance: tuple[tuple[int, tuple[int, ...]], ...] = ()

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def n(self) -> int:
        return self.basis.shape[-1]

    def projector(self) -> np.ndarray:
        return span_projector(self.basis)

    def contains(self, mats: np.ndarray, tol: float = DEFAULT.span_equal) -> bool:
        ortho, _ = orthonormalize(self.basis)
        return bool(np.all(span_residual(ortho, np.asarray(mats).reshape(-1, self.n, self.n)) <= tol))


def span_projector(mats: np.ndarray) -> np.ndarray:
    """Orthogonal projector (on real HS coordinates) onto span(mats)."""
    ortho, _ = orthonormalize(mats)
    v = herm_to_real(ortho)
    return v.T @ v


def normalized_span(mats: np.ndarray) -> np.ndarray:
    """Basis with plain I first and orthonormal traceless elements after it."""
    mats = np.asarray(mats, dtype=complex)
    n = mats.shape[-1]
    ident = np.eye(n, dtype=complex)
    ortho, _ = orthonormalize(np.concatenate([ident[None] / np.sqrt(n), mats]))
    ortho[0] = ident
    return ortho


@dataclass
class ClosureLimits:
    max_depth: int = 64
    max_nodes: int = 20000
    branch_cap: int = 16
    exhaustive: bool = False
    keep_all: bool = False


@dataclass
class _Search:
    tol: float
    witt_tol: float
    limits: ClosureLimits
    nodes: int = 0
    found: list = field(default_factory=list)

    def visit(self, basis: np.ndarray, provenance: tuple, depth: int) -> None:
        self.nodes += 1
        if self.nodes > self.limits.max_nodes or depth > self.limits.max_depth:
            raise ResourceLimitError(
                f"closure search exceeded limits (nodes={self.nodes}, depth={depth})", self.found
            )
        ok, res = closure_check(basis, self.tol)
        if ok:
            self.found.append(ClosedSubspace(basis, res, provenance))
            return
        gamma = compute_gamma(basis)
        ks = violating_indices(gamma, self.tol)
        if not ks:
            # off-span mass below the entry threshold but above the residual tolerance
            ks = [gamma.n_controls + int(np.argmax(np.max(np.abs(gamma.values[:, :, gamma.n_controls:]), axis=(0, 1))))]
        if not self.limits.exhaustive:
            ks = ks[:1]
        for k in ks:
            q = control_form(gamma, k)
            w = witt_decompose(q, self.witt_tol)
            log.debug("depth %d k=%d signature=%s", depth, k, w.signature)
            for br in isotropic_branches(w, self.limits.branch_cap):
                child = _restrict(gamma, br.basis)
                self.visit(child, provenance + ((k, br.signs),), depth + 1)


def _restrict(gamma: GammaTensor, coords: np.ndarray) -> np.ndarray:
    mats = np.tensordot(coords.T, gamma.controls, axes=1)
    return normalized_span(mats)


def _dedupe(found: list[ClosedSubspace], tol: float, keep_all: bool) -> list[ClosedSubspace]:
    uniq: list[ClosedSubspace] = []
    projs: list[np.ndarray] = []
    for cs in found:
        p = cs.projector()
        if any(np.linalg.norm(p - q) <= tol for q in projs):
            continue
        uniq.append(cs)
        projs.append(p)
    if keep_all:
        return uniq
    out = []
    for i, cs in enumerate(uniq):
        p = projs[i]
        contained = any(
            j != i and uniq[j].dim > cs.dim and np.linalg.norm(projs[j] @ p - p) <= tol for j in range(len(uniq))
        )
        if not contained:
            out.append(cs)
    return out


def find_closed_subspaces(
    controls: Sequence[np.ndarray],
    tol: float = DEFAULT.closure,
    limits: ClosureLimits | None = None,
    witt_tol: float = DEFAULT.witt_null,
    span_tol: float = DEFAULT.span_equal,
) -> list[ClosedSubspace]:
    """All maximal closed subspaces reachable from span(controls).

    Results are ordered by discovery (depth-first over ascending violating
    index and ``+1`` before ``-1`` signs), with duplicates and strictly
    contained subspaces removed unless ``limits.keep_all`` is set.
    """
    limits = limits or ClosureLimits()
    root = normalized_span(with_identity(controls))
    search = _Search(tol, witt_tol, limits)
    try:
        search.visit(root, (), 0)
    except ResourceLimitError as exc:
        raise ResourceLimitError(str(exc), _dedupe(search.found, span_tol, limits.keep_all)) from None
    return _dedupe(search.found, span_tol, limits.keep_all)
