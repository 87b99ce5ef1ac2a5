"""Structure constants of the Jordan product over a set of controls.

Control coordinates put the identity at index 0 and the (pruned) user controls
after it. Index ``k <= d`` of a :class:`GammaTensor` refers to a control
itself; ``k > d`` refers to an orthonormal completion element. With that
convention ``(1/2){H_i, H_j} = sum_k gamma[i, j, k] H_k`` holds exactly and
the control flow is ``p_k' = p^T gamma[:, :, k] p`` (times two, see
:mod:`contmeas.dynamics`).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .config import DEFAULT
from .errors import InputError
from .matcore import (
    HermitianBasis,
    as_hermitian,
    complete_basis,
    herm_to_real,
)


def is_identity_multiple(h: np.ndarray, tol: float = 1e-12) -> bool:
    n = h.shape[0]
    tr = np.trace(h) / n
    return abs(tr) > tol and np.linalg.norm(h - tr * np.eye(n)) <= tol * max(1.0, abs(tr)) * n


def with_identity(controls: Sequence[np.ndarray]) -> np.ndarray:
    """Controls as an array with plain I at index 0 (prepended when missing)."""
    mats = [as_hermitian(c) for c in controls]
    if not mats:
        raise InputError("need at least one control")
    n = mats[0].shape[0]
    for m in mats:
        if m.shape != (n, n):
            raise InputError(f"dimension mismatch: {m.shape} vs {(n, n)}")
    if is_identity_multiple(mats[0]):
        mats[0] = np.eye(n, dtype=complex)
    else:
        mats.insert(0, np.eye(n, dtype=complex))
    return np.array(mats)


@dataclass(frozen=True)
class GammaTensor:
    """``values[i, j, k]`` for control indices i, j and every basis index k."""

    basis: HermitianBasis
    controls: np.ndarray
    values: np.ndarray
    pruned: tuple[int, ...] = ()

    @property
    def n_controls(self) -> int:
        return self.controls.shape[0]

    @property
    def d(self) -> int:
        return self.n_controls - 1

    @property
    def n_basis(self) -> int:
        return self.values.shape[2]

    def element(self, k: int) -> np.ndarray:
        """The matrix attached to index ``k``."""
        if k < self.n_controls:
            return self.controls[k]
        return self.basis.elements[k]

    def operator(self, p: np.ndarray) -> np.ndarray:
        """sum_i p_i H_i over control coordinates."""
        return np.tensordot(np.asarray(p, dtype=float), self.controls, axes=1)

    def coordinates(self, h: np.ndarray) -> np.ndarray:
        """Control coordinates of a matrix inside span(controls) (least squares)."""
        a = herm_to_real(self.controls).T
        coef, *_ = np.linalg.lstsq(a, herm_to_real(np.asarray(h)), rcond=None)
        return coef

    def reconstruction_error(self) -> float:
        worst = 0.0
        elems = np.array([self.element(k) for k in range(self.n_basis)])
        for i in range(self.n_controls):
            for j in range(i, self.n_controls):
                a, b = self.controls[i], self.controls[j]
                target = (a @ b + b @ a) / 2
                approx = np.tensordot(self.values[i, j], elems, axes=1)
                worst = max(worst, float(np.linalg.norm(target - approx)))
        return worst


def compute_gamma(controls: Sequence[np.ndarray], prune_tol: float = DEFAULT.prune) -> GammaTensor:
    """Project every pairwise Jordan product onto the completed basis.

    The identity is prepended when the first control is not a multiple of it;
    dependent controls are pruned (with a warning) before anything else.
    """
    mats = with_identity(controls)
    # completing with the Jordan products first keeps each off-span product on few elements
    prods = (np.einsum("iab,jbc->ijac", mats, mats) + np.einsum("jab,ibc->ijac", mats, mats)) / 2
    iu = np.triu_indices(len(mats))
    basis = complete_basis(mats, prune_tol, preferred=prods[iu])
    pruned = basis.pruned
    kept = list(basis.kept)
    mats = mats[kept]
    prods = prods[np.ix_(kept, kept)]
    r = basis.n_span
    n2 = basis.count
    # controls = basis[:r] @ coord; invert to express span components in control coordinates
    bvec = herm_to_real(basis.elements)
    coord = bvec[:r] @ herm_to_real(mats).T
    coord_inv = np.linalg.inv(coord)
    proj = herm_to_real(prods) @ bvec.T
    values = np.empty((r, r, n2))
    values[:, :, :r] = proj[:, :, :r] @ coord_inv.T
    values[:, :, r:] = proj[:, :, r:]
    values = (values + values.transpose(1, 0, 2)) / 2
    values.setflags(write=False)
    mats.setflags(write=False)
    return GammaTensor(basis, mats, values, pruned)


def control_form(gamma: GammaTensor, k: int) -> np.ndarray:
    """The symmetric (d+1) x (d+1) matrix of ``gamma[:, :, k]``."""
    if not 0 <= k < gamma.n_basis:
        raise IndexError(f"basis index {k} out of range [0, {gamma.n_basis})")
    q = np.array(gamma.values[:, :, k])
    return (q + q.T) / 2


def constraint_residual(p, gamma: GammaTensor, keep: Iterable[int] | None = None) -> float:
    """max over k not in ``keep`` of |p^T Gamma^(k) p|; ``keep`` defaults to the controls."""
    p = np.asarray(p, dtype=float)
    if p.shape != (gamma.n_controls,):
        raise InputError(f"coordinate vector has length {p.shape}, expected {gamma.n_controls}")
    keep = set(range(gamma.n_controls) if keep is None else keep)
    ks = [k for k in range(gamma.n_basis) if k not in keep]
    if not ks:
        return 0.0
    vals = np.einsum("i,ijk,j->k", p, gamma.values[:, :, ks], p)
    return float(np.max(np.abs(vals)))


def violating_indices(gamma: GammaTensor, tol: float) -> list[int]:
    """Completion indices whose form does not vanish identically."""
    tail = gamma.values[:, :, gamma.n_controls:]
    big = np.max(np.abs(tail), axis=(0, 1)) > tol
    return [gamma.n_controls + int(k) for k in np.flatnonzero(big)]
