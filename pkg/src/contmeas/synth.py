"""Achievability tests and schedule synthesis for target two-outcome measurements.

A target ``M1`` is reduced to its positive part ``P1 = (M1^dag M1)^{1/2}``.
The walk can realize ``P1`` when it lies in the closed control algebra with
eigenvalues strictly inside (0, 1); each eigenvalue then fixes one tanh
center, and the conditional unitaries of the polar split finish the job.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .closure import ClosedSubspace
from .config import DEFAULT
from .dynamics import CENTER_CAP, ClosedFormSchedule, derive_scale
from .errors import DomainError, InputError, NumericalError, SaturationError
from .jordan import BlockDecomposition, block_decompose, spectrum_capacity
from .matcore import as_matrix, canonical_basis, clusters, eigensystem, orthonormalize, span_residual
from .walk import endpoint_pair, grid_size, total_walk_operator


@dataclass(frozen=True)
class TargetMeasurement:
    m1: np.ndarray
    tolerance: float = DEFAULT.achievable

    def __post_init__(self):
        m = as_matrix(self.m1).copy()
        m.setflags(write=False)
        object.__setattr__(self, "m1", m)
        if not self.tolerance > 0:
            raise InputError("tolerance must be positive")

    @property
    def n(self) -> int:
        return self.m1.shape[0]

    def positive_part(self) -> np.ndarray:
        return _psd_sqrt(self.m1.conj().T @ self.m1)

    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.m1, compute_uv=False)[::-1]


@dataclass
class AchievabilityReport:
    achievable: bool
    block_assignment: list
    violations: list[str]
    spectrum_count: int
    distinct_values: int
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "achievable": self.achievable,
            "block_assignment": self.block_assignment,
            "violations": list(self.violations),
            "spectrum_count": self.spectrum_count,
            "distinct_values": self.distinct_values,
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class PolarPlan:
    w1: np.ndarray
    w2: np.ndarray
    p1: np.ndarray
    p2: np.ndarray

    def residuals(self, m1: np.ndarray, m2: np.ndarray) -> tuple[float, float]:
        return (
            float(np.linalg.norm(self.w1 @ self.p1 - m1)),
            float(np.linalg.norm(self.w2 @ self.p2 - m2)),
        )


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    es = eigensystem((a + a.conj().T) / 2)
    vals = np.sqrt(np.clip(es.values, 0.0, None))
    out = (es.frame * vals) @ es.frame.conj().T
    return (out + out.conj().T) / 2


def _value_groups(values: np.ndarray, tol: float) -> list[tuple[float, int]]:
    return [(float(values[g].mean()), len(g)) for g in clusters(np.sort(values), tol)]


def check_achievable(
    target: TargetMeasurement,
    dec: BlockDecomposition,
    tol: float | None = None,
) -> AchievabilityReport:
    """Check every realizability clause and collect all failures.

    Clauses: positive Hermitian up to the polar split, eigenvalues inside the
    open interval, per-block multiplicity and rank, the eigenframe respecting
    the block partition, membership in the control algebra, and the overall
    spectrum capacity.
    """
    tol = target.tolerance if tol is None else tol
    n = dec.frame.shape[0]
    if target.n != n:
        raise InputError(f"target acts on dimension {target.n}, control algebra on {n}")
    violations: list[str] = []
    notes: list[str] = []
    capacity = spectrum_capacity(dec)

    p1 = target.positive_part()
    if np.linalg.norm(target.m1 - p1) > tol:
        notes.append("M1 is not positive Hermitian; its positive part is realized and W1 applied afterwards")

    values = eigensystem(p1).values
    outside = [float(v) for v in values if not tol < v < 1 - tol]
    if outside:
        violations.append(f"eigenvalue outside open interval (0, 1): {outside}")

    off = dec.off_block_mass(p1)
    if off > tol:
        violations.append(f"eigenframe does not commute with the block partition (off-block mass {off:.3e})")

    assignment = []
    spectra: dict[int, list] = {}
    for i, b in enumerate(dec.blocks):
        sub = dec.rotated(p1)[np.ix_(b.indices, b.indices)]
        groups = _value_groups(np.linalg.eigvalsh(sub), tol)
        assignment.append(
            {
                "block": i,
                "type": b.type.value,
                "rank": b.rank,
                "multiplicity": b.multiplicity,
                "component": b.component,
                "eigenvalues": [{"value": v, "count": c} for v, c in groups],
            }
        )
        bad = [c for _, c in groups if c % b.multiplicity]
        if bad:
            violations.append(f"block {i} ({b.type.value}) has eigenvalue multiplicities {bad}, not multiples of {b.multiplicity}")
        if len(groups) > b.rank:
            violations.append(f"block {i} ({b.type.value}) needs {len(groups)} distinct values but has rank {b.rank}")
        spectrum = [v for v, c in groups for _ in range(c // b.multiplicity or 1)]
        ref = spectra.setdefault(b.component, spectrum)
        if len(ref) != len(spectrum) or np.max(np.abs(np.subtract(ref, spectrum)), initial=0.0) > tol:
            violations.append(f"block {i} carries a different spectrum from its linked copy in component {b.component}")

    ortho, _ = orthonormalize(dec.subspace)
    res = float(span_residual(ortho, p1[None])[0])
    if res > tol:
        violations.append(f"positive part is not in control algebra (residual {res:.3e})")

    distinct = len(_value_groups(values, tol))
    if distinct > capacity:
        violations.append(f"spectrum capacity exceeded: {distinct} distinct values, capacity {capacity}")

    return AchievabilityReport(not violations, assignment, violations, capacity, distinct, notes)


# -- centers -----------------------------------------------------------------


def _scalar_products(c: float, x_max: float, delta: float) -> tuple[float, float]:
    """Boundary products of ``sqrt 2 * M_+-`` for one eigen-direction."""
    n = grid_size(x_max, delta)
    s, _ = derive_scale()
    j = np.arange(n) * delta
    e_up = s * np.tanh(j - c)
    e_down = s * np.tanh(-j - c)
    up = np.prod(np.cos(delta * e_up) - np.sin(delta * e_up))
    down = np.prod(np.cos(delta * e_down) + np.sin(delta * e_down))
    return float(up), float(down)


def _normalization(ups: np.ndarray, downs: np.ndarray) -> tuple[float, float]:
    # same least squares as endpoint_pair, restricted to the diagonal
    a2, b2 = ups**2, downs**2
    g = np.array([[a2 @ a2, a2 @ b2], [b2 @ a2, b2 @ b2]])
    rhs = np.array([a2.sum(), b2.sum()])
    if np.linalg.det(g) > 1e-10 * g[0, 0] * g[1, 1]:
        u, v = np.linalg.solve(g, rhs)
    else:
        s = a2 + b2
        u = v = s.sum() / (s @ s)
    return float(u), float(v)


def _solve_center(lam: float, a: float, x_max: float, delta: float, tol: float) -> float:
    """Bisect ``a * P_+(c) = lam``; ``P_+`` falls as ``c`` grows."""
    lo, hi = -CENTER_CAP, CENTER_CAP
    f_lo = a * _scalar_products(lo, x_max, delta)[0] - lam
    f_hi = a * _scalar_products(hi, x_max, delta)[0] - lam
    if f_lo < 0 or f_hi > 0:
        reach = (a * _scalar_products(hi, x_max, delta)[0], a * _scalar_products(lo, x_max, delta)[0])
        raise SaturationError(
            f"eigenvalue {lam} needs |c| > {CENTER_CAP}; reachable range at X = {x_max} is ({reach[0]:.6g}, {reach[1]:.6g})"
        )
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if a * _scalar_products(mid, x_max, delta)[0] - lam > 0:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def centers_from_eigenvalues(
    lams,
    x_max: float,
    delta: float,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> np.ndarray:
    """Tanh centers whose walk endpoint ``M1`` has eigenvalues ``lams``.

    The common endpoint normalization depends on every center, so it is
    updated by fixed-point iteration with a bisection per eigenvalue inside.
    """
    lams = np.asarray(lams, dtype=float).ravel()
    if lams.size == 0:
        raise InputError("need at least one eigenvalue")
    if np.any(~np.isfinite(lams)) or np.any(lams <= 0) or np.any(lams >= 1):
        raise DomainError(f"eigenvalues must lie in the open interval (0, 1), got {lams}")
    grid_size(x_max, delta)
    # continuum normalization as the starting point
    a = 1.0 / np.sqrt(2 * np.cosh(x_max))
    uniq, inverse = np.unique(lams, return_inverse=True)
    for _ in range(max_iter):
        cs = np.array([_solve_center(lam, a, x_max, delta, tol) for lam in uniq])
        prods = np.array([_scalar_products(c, x_max, delta) for c in cs])
        counts = np.bincount(inverse, minlength=len(uniq))
        ups = np.repeat(prods[:, 0], counts)
        downs = np.repeat(prods[:, 1], counts)
        u, _ = _normalization(ups, downs)
        a_new = np.sqrt(u)
        if abs(a_new - a) <= 1e-15 * a:
            a = a_new
            break
        a = a_new
    else:
        raise NumericalError(f"normalization did not settle after {max_iter} iterations")
    cs = np.array([_solve_center(lam, a, x_max, delta, tol) for lam in uniq])
    return cs[inverse]


def polar_plan(m1, m2, tol: float = 1e-6) -> PolarPlan:
    """``M_i = W_i P_i`` with ``P_i = (M_i^dag M_i)^{1/2}``.

    On the kernel of ``P_i`` the isometry is completed by the canonical
    orthonormal complement of its range, taken in index order.
    """
    m1 = as_matrix(m1)
    m2 = as_matrix(m2)
    n = m1.shape[0]
    comp = np.linalg.norm(m1.conj().T @ m1 + m2.conj().T @ m2 - np.eye(n))
    if comp > tol:
        raise InputError(f"M1, M2 are not complete (residual {comp:.3e})")
    return _plan(m1, m2)


def _plan(m1, m2) -> PolarPlan:
    w1, p1 = _polar(m1)
    w2, p2 = _polar(m2)
    return PolarPlan(w1, w2, p1, p2)


def _polar(m: np.ndarray, rtol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    n = m.shape[0]
    es = eigensystem(m.conj().T @ m)
    s = np.sqrt(np.clip(es.values, 0.0, None))
    p = (es.frame * s) @ es.frame.conj().T
    p = (p + p.conj().T) / 2
    keep = s > rtol * max(1.0, s.max(initial=0.0))
    v = es.frame[:, keep]
    u = (m @ v) / s[keep]
    if keep.all():
        return u @ v.conj().T, p
    # complete both sides with index-ordered complements
    eye = np.eye(n)
    u_rest = canonical_basis(eye - u @ u.conj().T, n - u.shape[1])
    v_rest = canonical_basis(eye - v @ v.conj().T, n - v.shape[1])
    w = u @ v.conj().T + u_rest @ v_rest.conj().T
    return w, p


# -- pipeline ----------------------------------------------------------------


@dataclass(frozen=True)
class SynthesisResult:
    report: AchievabilityReport
    centers: np.ndarray | None = None
    schedule: ClosedFormSchedule | None = None
    plan: PolarPlan | None = None
    target_values: np.ndarray | None = None
    predicted_values: np.ndarray | None = None
    roundtrip_error: float | None = None
    completeness_residual: float | None = None


def synthesize(
    target: TargetMeasurement,
    subspace: ClosedSubspace | BlockDecomposition,
    x_max: float,
    delta: float,
    seed: int = 0,
) -> SynthesisResult:
    """Full pipeline: check, solve centers, rebuild the walk and report the error."""
    dec = subspace if isinstance(subspace, BlockDecomposition) else block_decompose(subspace, seed=seed)
    report = check_achievable(target, dec)
    if not report.achievable:
        return SynthesisResult(report)
    p1 = target.positive_part()
    es = eigensystem(p1)
    centers = centers_from_eigenvalues(es.values, x_max, delta)
    sched = ClosedFormSchedule.from_centers(centers, frame=es.frame, x_max=x_max)
    pair = endpoint_pair(total_walk_operator(sched, x_max, delta))
    got = es.frame.conj().T @ pair.m1 @ es.frame
    predicted = np.real(np.diag(got))
    err = float(np.max(np.abs(predicted - es.values)))
    m2 = _psd_sqrt(np.eye(target.n) - target.m1.conj().T @ target.m1)
    plan = _plan(target.m1, m2)
    return SynthesisResult(report, centers, sched, plan, np.array(es.values), predicted, err, pair.completeness_residual)


def result_to_dict(res: SynthesisResult) -> dict:
    out = {"report": res.report.to_dict()}
    if res.centers is None:
        return out
    out.update(
        {
            "centers": [float(c) for c in res.centers],
            "target_eigenvalues": [float(v) for v in res.target_values],
            "predicted_eigenvalues": [float(v) for v in res.predicted_values],
            "roundtrip_error": res.roundtrip_error,
            "completeness_residual": res.completeness_residual,
        }
    )
    return out
