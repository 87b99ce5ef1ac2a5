"""Simple-block structure of a closed control subspace.

The finest unitary block partition is read off the commutant: a generic
Hermitian element commuting with every basis matrix has one eigenspace per
irreducible block. Blocks carrying the same simple component (equal spectra
under an isomorphism) are grouped into components by a dimension test.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np

from .closure import ClosedSubspace, closure_check
from .config import DEFAULT
from .errors import ClassificationError, InputError, NumericalError
from .matcore import canonical_basis, clusters, herm_to_real


class TypeTag(str, enum.Enum):
    REAL_SYM = "RealSym"
    COMPLEX_HERM = "ComplexHerm"
    COMPLEX_IN_REAL = "ComplexInReal"
    QUAT_IN_COMPLEX = "QuatInComplex"
    QUAT_IN_REAL = "QuatInReal"


# (tag, size(n), algebra dim(n), multiplicity), in tie-break preference order
_TABLE = (
    (TypeTag.REAL_SYM, lambda n: n, lambda n: n * (n + 1) // 2, 1),
    (TypeTag.COMPLEX_HERM, lambda n: n, lambda n: n * n, 1),
    (TypeTag.COMPLEX_IN_REAL, lambda n: 2 * n, lambda n: n * n, 2),
    (TypeTag.QUAT_IN_COMPLEX, lambda n: 2 * n, lambda n: n * (2 * n - 1), 2),
    (TypeTag.QUAT_IN_REAL, lambda n: 4 * n, lambda n: n * (2 * n - 1), 4),
)


def classify_block(m: int, d_block: int) -> tuple[TypeTag, int, int]:
    """Match (block size, algebra dimension) against the representation table.

    Returns ``(tag, rank, multiplicity)``; the first matching row wins.
    """
    if m < 1 or d_block < 1:
        raise InputError(f"block size and dimension must be positive, got m={m}, d={d_block}")
    matches = []
    for tag, size, dim, mult in _TABLE:
        if m % (size(1)) == 0:
            n = m // size(1)
            if dim(n) == d_block:
                matches.append((tag, n, mult))
    if not matches:
        raise ClassificationError(f"no representation type has block size {m} and dimension {d_block}")
    if len({mult for _, _, mult in matches}) > 1:
        warnings.warn(f"block (m={m}, d={d_block}) matches rows with different multiplicities: {matches}", stacklevel=2)
    return matches[0]


@dataclass(frozen=True)
class JordanBlock:
    indices: tuple[int, ...]  # frame columns
    type: TypeTag
    rank: int
    multiplicity: int
    algebra_dim: int
    component: int

    @property
    def size(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class BlockDecomposition:
    frame: np.ndarray
    blocks: tuple[JordanBlock, ...]
    n_components: int
    subspace: np.ndarray  # basis of the decomposed span

    @property
    def count(self) -> int:
        return self.n_components

    def component_blocks(self, c: int) -> list[JordanBlock]:
        return [b for b in self.blocks if b.component == c]

    def rotated(self, a: np.ndarray) -> np.ndarray:
        return self.frame.conj().T @ a @ self.frame

    def off_block_mass(self, a: np.ndarray) -> float:
        r = self.rotated(a)
        mask = np.ones(r.shape, dtype=bool)
        for b in self.blocks:
            mask[np.ix_(b.indices, b.indices)] = False
        return float(np.linalg.norm(r[mask]))


def commutant(basis: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
    """Complex basis of all matrices commuting with each element of ``basis``."""
    basis = np.asarray(basis, dtype=complex)
    n = basis.shape[-1]
    eye = np.eye(n)
    rows = [np.kron(b, eye) - np.kron(eye, b.T) for b in basis]
    _, s, vh = np.linalg.svd(np.concatenate(rows), full_matrices=True)
    scale = max(s[0], 1.0) if s.size else 1.0
    rank = int(np.sum(s > rtol * scale))
    null = vh[rank:].conj()
    if null.shape[0] == 0:
        raise NumericalError("commutant is empty; identity should always commute")
    return null.reshape(-1, n, n)


def real_span_dim(mats: np.ndarray, rtol: float = 1e-8) -> int:
    return _rank(herm_to_real(np.asarray(mats)), rtol)


def _rank(v: np.ndarray, rtol: float = 1e-8) -> int:
    if v.size == 0:
        return 0
    s = np.linalg.svd(v, compute_uv=False)
    return int(np.sum(s > rtol * max(s[0], 1e-300)))


def _restrict(basis: np.ndarray, cols: np.ndarray) -> np.ndarray:
    return np.einsum("ai,kab,bj->kij", cols.conj(), basis, cols)


def _split(basis: np.ndarray, rng: np.random.Generator, tol: float) -> list[np.ndarray]:
    """Projectors onto the invariant subspaces found from one random probe."""
    comm = commutant(basis)
    z = rng.normal(size=len(comm)) + 1j * rng.normal(size=len(comm))
    h = np.tensordot(z, comm, axes=1)
    h = h + h.conj().T
    vals, vecs = np.linalg.eigh(h)
    spread = max(np.ptp(vals), 1.0)
    groups = [vecs[:, g] for g in clusters(vals, 1e-6 * spread)]
    projs = [g @ g.conj().T for g in groups]
    # merge any pair coupled by a basis element
    parent = list(range(len(projs)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(groups)):
        for j in range(i + 1, len(groups)):
            c = max(np.linalg.norm(groups[i].conj().T @ b @ groups[j]) for b in basis)
            if c > tol:
                parent[find(i)] = find(j)
    merged: dict[int, np.ndarray] = {}
    for i, p in enumerate(projs):
        r = find(i)
        merged[r] = merged.get(r, 0) + p
    return list(merged.values())


def _irreducible(block_basis: np.ndarray) -> bool:
    return commutant(block_basis).shape[0] == 1


def _linked(basis: np.ndarray, fi: np.ndarray, fj: np.ndarray, direct_dim: int) -> bool:
    pair = np.concatenate([herm_to_real(_restrict(basis, fi)), herm_to_real(_restrict(basis, fj))], axis=1)
    return _rank(pair) < direct_dim


def _block_key(p: np.ndarray) -> tuple:
    w = np.round(np.diag(p).real, 8)
    first = int(np.argmax(w > 1e-8))
    return (first,) + tuple(-w)


def block_decompose(
    subspace: ClosedSubspace | np.ndarray,
    seed: int = 0,
    tol: float = DEFAULT.block,
    retries: int = 5,
) -> BlockDecomposition:
    """Finest block-diagonal frame for a closed subspace, with type tags."""
    basis = subspace.basis if isinstance(subspace, ClosedSubspace) else np.asarray(subspace, dtype=complex)
    ok, res = closure_check(basis)
    if not ok:
        raise InputError(f"subspace is not closed under anticommutation (residual {res:.3e})")
    n = basis.shape[-1]
    rng = np.random.default_rng(seed)
    for _ in range(retries + 1):
        projs = _split(basis, rng, tol)
        projs.sort(key=_block_key)
        frames = [canonical_basis(p) for p in projs]
        if all(_irreducible(_restrict(basis, f)) for f in frames):
            break
    else:
        raise NumericalError(f"could not find an irreducible block partition after {retries} retries")

    frame = np.concatenate(frames, axis=1)
    if np.linalg.norm(frame.conj().T @ frame - np.eye(n)) > 1e-8 * n:
        raise NumericalError("block frames are not mutually orthogonal")
    dims = [real_span_dim(_restrict(basis, f)) for f in frames]

    # blocks carrying the same simple component have a linked (non-direct) joint image
    comp_of = list(range(len(frames)))
    for j in range(len(frames)):
        for i in range(j):
            if comp_of[i] != i or frames[i].shape[1] != frames[j].shape[1] or dims[i] != dims[j]:
                continue
            if _linked(basis, frames[i], frames[j], dims[i] + dims[j]):
                comp_of[j] = i
                break
    roots = sorted(set(comp_of))
    comp_of = [roots.index(c) for c in comp_of]

    # scalar copies can be split along any basis of their joint space; pick the canonical one
    for c in range(len(roots)):
        members = [i for i, ci in enumerate(comp_of) if ci == c]
        if len(members) > 1 and all(frames[i].shape[1] == 1 for i in members):
            joint = sum(frames[i] @ frames[i].conj().T for i in members)
            cols = canonical_basis(joint, len(members))
            for i, col in zip(members, cols.T):
                frames[i] = col[:, None]
    order = sorted(range(len(frames)), key=lambda i: _block_key(frames[i] @ frames[i].conj().T))
    frames = [frames[i] for i in order]
    dims = [dims[i] for i in order]
    comp_of = [comp_of[i] for i in order]
    relabel = {c: k for k, c in enumerate(dict.fromkeys(comp_of))}
    comp_of = [relabel[c] for c in comp_of]
    frame = np.concatenate(frames, axis=1)

    blocks = []
    start = 0
    for f, d, c in zip(frames, dims, comp_of):
        m = f.shape[1]
        tag, rank, mult = classify_block(m, d)
        blocks.append(JordanBlock(tuple(range(start, start + m)), tag, rank, mult, d, c))
        start += m
    frame.setflags(write=False)
    dec = BlockDecomposition(frame, tuple(blocks), len(roots), np.array(basis))
    worst = max(dec.off_block_mass(b) for b in basis)
    if worst > tol * max(1.0, np.sqrt(n)):
        raise NumericalError(f"rotated basis is not block diagonal (off-block mass {worst:.3e})")
    return dec


def spectrum_capacity(dec: BlockDecomposition) -> int:
    """Number of independent eigenvalues: sum of ranks over simple components."""
    total = 0
    for c in range(dec.n_components):
        total += dec.component_blocks(c)[0].rank
    return total
