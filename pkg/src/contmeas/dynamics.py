"""Control schedules that keep the probe walk reversible.

A schedule is a Hermitian-valued function ``eps(x)`` on ``[-X, X]`` obeying
``eps' = 2 eps^2 + alpha I``. Two representations are provided: the
closed-form tanh eigenflow in a constant frame, and a table of control
coefficients produced by integrating the flow numerically.
"""
from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy.interpolate import PchipInterpolator

from .config import DEFAULT
from .errors import DriftError, InputError, RangeError, SingularityError
from .matcore import as_hermitian, as_unitary
from .structure import GammaTensor, constraint_residual

CENTER_CAP = 10.0


def derive_scale() -> tuple[float, float]:
    """Amplitude and offset that make ``s * tanh(x - c)`` an exact solution.

    Substituting ``a * tanh(b (x - c))`` into ``d' = 2 d^2 + alpha`` gives
    ``a b = alpha`` and ``-b / a = 2``. Fixing ``b = 1`` leaves
    ``s = a = -1/2`` and ``alpha = -2 a^2 = -1/2`` for every center.
    """
    b = 1.0
    a = -b / 2.0
    alpha = a * b
    return a, alpha


@dataclass(frozen=True)
class ClosedFormSchedule:
    """``eps(x) = F diag(s tanh(x - c_i)) F^dag`` with a constant frame F.

    ``blocks`` optionally lists ``(columns, multiplicity)``; centers inside a
    block must then repeat in runs of that multiplicity.
    """

    frame: np.ndarray
    centers: np.ndarray
    scale: float
    alpha: float
    x_max: float
    blocks: tuple[tuple[tuple[int, ...], int], ...] = ()

    def __post_init__(self):
        frame = as_unitary(self.frame)
        centers = np.array(self.centers, dtype=float)
        if centers.shape != (frame.shape[0],):
            raise InputError(f"need {frame.shape[0]} centers, got {centers.shape}")
        if not np.all(np.isfinite(centers)):
            raise InputError("centers must be finite")
        if self.x_max <= 0:
            raise InputError("x_max must be positive")
        for cols, mult in self.blocks:
            c = centers[list(cols)]
            if len(c) % mult or np.any(np.ptp(c.reshape(-1, mult), axis=1) != 0):
                raise InputError(f"centers {c} do not repeat in groups of {mult}")
        centers.setflags(write=False)
        object.__setattr__(self, "frame", frame)
        object.__setattr__(self, "centers", centers)

    @classmethod
    def from_centers(cls, centers, frame=None, x_max: float = CENTER_CAP, blocks=()) -> "ClosedFormSchedule":
        s, alpha = derive_scale()
        centers = np.asarray(centers, dtype=float)
        if frame is None:
            frame = np.eye(len(centers), dtype=complex)
        return cls(frame, centers, s, alpha, x_max, tuple(blocks))

    @property
    def n(self) -> int:
        return self.frame.shape[0]

    @property
    def x_range(self) -> tuple[float, float]:
        return (-self.x_max, self.x_max)

    def eigenvalues(self, x: float) -> np.ndarray:
        _check_range(self, x)
        return self.scale * np.tanh(x - self.centers)

    def evaluate(self, x: float) -> np.ndarray:
        d = self.eigenvalues(x)
        out = (self.frame * d) @ self.frame.conj().T
        return (out + out.conj().T) / 2

    __call__ = evaluate

    def derivative(self, x: float) -> np.ndarray:
        _check_range(self, x)
        d = self.scale / np.cosh(x - self.centers) ** 2
        return (self.frame * d) @ self.frame.conj().T

    def alpha_at(self, x: float) -> float:
        return self.alpha


@dataclass(frozen=True)
class TabulatedSchedule:
    """``eps(x) = sum_i p_i(x) H_i`` with monotone cubic interpolation of ``p``."""

    grid: np.ndarray
    coefficients: np.ndarray
    controls: np.ndarray
    alpha: np.ndarray = field(default=None)

    def __post_init__(self):
        grid = np.array(self.grid, dtype=float)
        coef = np.array(self.coefficients, dtype=float)
        controls = np.array([as_hermitian(c) for c in self.controls])
        if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
            raise InputError("grid must be strictly increasing with at least two points")
        if coef.shape != (len(grid), len(controls)):
            raise InputError(f"coefficients must have shape {(len(grid), len(controls))}, got {coef.shape}")
        alpha = np.zeros(len(grid)) if self.alpha is None else np.array(self.alpha, dtype=float)
        if np.ndim(alpha) == 0:
            alpha = np.full(len(grid), float(alpha))
        for a in (grid, coef, controls, alpha):
            a.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "alpha", alpha)

    @functools.cached_property
    def _interp(self) -> PchipInterpolator:
        return PchipInterpolator(self.grid, self.coefficients, axis=0)

    @property
    def n(self) -> int:
        return self.controls.shape[-1]

    @property
    def x_range(self) -> tuple[float, float]:
        return (float(self.grid[0]), float(self.grid[-1]))

    def coordinates(self, x: float) -> np.ndarray:
        _check_range(self, x)
        return self._interp(x)

    def evaluate(self, x: float) -> np.ndarray:
        out = np.tensordot(self.coordinates(x), self.controls, axes=1)
        return (out + out.conj().T) / 2

    __call__ = evaluate

    def alpha_at(self, x: float) -> float:
        return float(np.interp(x, self.grid, self.alpha))


Schedule = Union[ClosedFormSchedule, TabulatedSchedule]


def constant_schedule(e: np.ndarray, x_max: float) -> TabulatedSchedule:
    """A schedule frozen at ``e`` on ``[-x_max, x_max]``."""
    e = as_hermitian(e)
    n = e.shape[0]
    return TabulatedSchedule(
        grid=[-x_max, x_max],
        coefficients=[[0.0, 1.0], [0.0, 1.0]],
        controls=[np.eye(n), e],
    )


def _check_range(schedule, x: float) -> None:
    lo, hi = schedule.x_range
    span = hi - lo
    if not (lo - 1e-12 * span <= x <= hi + 1e-12 * span):
        raise RangeError(f"x = {x} outside schedule range [{lo}, {hi}]")


def evaluate(schedule: Schedule, x: float) -> np.ndarray:
    return schedule.evaluate(x)


@dataclass(frozen=True)
class OdeReport:
    constraint_drift: float
    step: float
    order_estimate: float | None = None


def _flow(gamma: GammaTensor, alpha: Callable[[float], float]):
    r = gamma.n_controls
    g = np.array(gamma.values[:, :, :r])

    def rhs(x, p):
        dp = 2.0 * np.einsum("i,ijk,j->k", p, g, p)
        dp[0] += alpha(x)
        return dp

    return rhs


def _rk4(rhs, x0: float, p0: np.ndarray, h: float, steps: int, monitor) -> np.ndarray:
    out = np.empty((steps + 1, len(p0)))
    out[0] = p = p0
    x = x0
    for j in range(steps):
        k1 = rhs(x, p)
        k2 = rhs(x + h / 2, p + h / 2 * k1)
        k3 = rhs(x + h / 2, p + h / 2 * k2)
        k4 = rhs(x + h, p + h * k3)
        p = p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        x = x0 + (j + 1) * h
        monitor(x, p)
        out[j + 1] = p
    return out


def _as_alpha(alpha) -> Callable[[float], float]:
    if callable(alpha):
        return alpha
    value = float(alpha)
    return lambda x: value


def integrate_controls(
    p0: Sequence[float],
    gamma: GammaTensor,
    x_range: tuple[float, float],
    h: float,
    alpha: float | Callable[[float], float] = 0.0,
    closed_set: Sequence[int] | None = None,
    x0: float | None = None,
    drift_tol: float = DEFAULT.ode_drift,
    blowup: float = 1e6,
    estimate_order: bool = False,
) -> tuple[TabulatedSchedule, OdeReport]:
    """Integrate the control flow with classical RK4 on a uniform grid.

    ``p0`` is given at ``x0`` (default: the left end) and the flow is
    integrated toward both ends of ``x_range``. Every step re-checks the
    off-span constraints ``p^T Gamma^(k) p = 0`` for ``k`` outside
    ``closed_set``.
    """
    p0 = np.asarray(p0, dtype=float)
    if p0.shape != (gamma.n_controls,):
        raise InputError(f"p0 has shape {p0.shape}, expected ({gamma.n_controls},)")
    xa, xb = map(float, x_range)
    if not xb > xa or h <= 0:
        raise InputError("need x_range[0] < x_range[1] and h > 0")
    steps = (xb - xa) / h
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        raise InputError(f"interval length {xb - xa} is not a multiple of h = {h}")
    steps = int(round(steps))
    x0 = xa if x0 is None else float(x0)
    j0 = (x0 - xa) / h
    if abs(j0 - round(j0)) > 1e-9 * max(1.0, steps) or not 0 <= round(j0) <= steps:
        raise InputError(f"x0 = {x0} is not on the grid")
    j0 = int(round(j0))
    keep = list(range(gamma.n_controls)) if closed_set is None else list(closed_set)
    start = constraint_residual(p0, gamma, keep)
    if start > 1e-8:
        raise InputError(f"initial controls violate the closure constraints (residual {start:.3e})")

    alpha_fn = _as_alpha(alpha)
    rhs = _flow(gamma, alpha_fn)
    drift = [start]

    def monitor(x, p):
        if not np.all(np.isfinite(p)) or np.max(np.abs(p)) > blowup:
            raise SingularityError(f"controls blew up near x = {x:.6g}", x=x)
        res = constraint_residual(p, gamma, keep)
        drift.append(res)
        if res > drift_tol:
            raise DriftError(f"constraint drift {res:.3e} at x = {x:.6g}", x=x)

    grid = xa + h * np.arange(steps + 1)
    coef = np.empty((steps + 1, len(p0)))
    coef[j0:] = _rk4(rhs, x0, p0, h, steps - j0, monitor)
    if j0 > 0:
        coef[: j0 + 1] = _rk4(rhs, x0, p0, -h, j0, monitor)[::-1]
    alpha_tab = np.array([alpha_fn(x) for x in grid])
    sched = TabulatedSchedule(grid, coef, gamma.controls, alpha_tab)

    order = None
    if estimate_order:
        fine = integrate_controls(p0, gamma, x_range, h / 2, alpha, closed_set, x0, drift_tol, blowup)[0]
        finer = integrate_controls(p0, gamma, x_range, h / 4, alpha, closed_set, x0, drift_tol, blowup)[0]
        e1 = np.max(np.abs(coef - fine.coefficients[::2]))
        e2 = np.max(np.abs(fine.coefficients - finer.coefficients[::2]))
        order = float(np.log2(e1 / e2)) if e2 > 0 else float("inf")
    return sched, OdeReport(float(max(drift)), float(h), order)


def reversibility_residual(schedule: Schedule, x: float, delta: float) -> float:
    """Traceless part of ``M_-+(x +- delta) M_+-(x)``, maximized over the sign."""
    from .walk import step_operators

    if delta < 0:
        raise InputError("delta must be non-negative")
    if delta == 0:
        return 0.0
    here = step_operators(schedule.evaluate(x), delta)
    ahead = step_operators(schedule.evaluate(x + delta), delta)
    behind = step_operators(schedule.evaluate(x - delta), delta)
    n = schedule.n
    worst = 0.0
    for prod in (ahead[1] @ here[0], behind[0] @ here[1]):
        traceless = prod - np.trace(prod) / n * np.eye(n)
        worst = max(worst, float(np.linalg.norm(traceless)))
    return worst


def reversibility_order(schedule: Schedule, xs: Sequence[float], delta: float) -> float:
    """Mean residual ratio under delta-halving, as a log2 order."""
    r1 = np.array([reversibility_residual(schedule, x, delta) for x in xs])
    r2 = np.array([reversibility_residual(schedule, x, delta / 2) for x in xs])
    mask = r2 > 0
    if not np.any(mask):
        return float("inf")
    return float(np.log2(np.sum(r1[mask]) / np.sum(r2[mask])))


# -- serialization -----------------------------------------------------------


def _matrix_to_pairs(a: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(a)]


def _pairs_to_matrix(rows) -> np.ndarray:
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 3 or arr.shape[-1] != 2:
        raise InputError("matrix must be given as rows of [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def schedule_to_dict(schedule: Schedule) -> dict:
    if isinstance(schedule, ClosedFormSchedule):
        return {
            "variant": "closed_form",
            "frame": _matrix_to_pairs(schedule.frame),
            "centers": [float(c) for c in schedule.centers],
            "scale": float(schedule.scale),
            "alpha": float(schedule.alpha),
            "x_max": float(schedule.x_max),
            "blocks": [{"columns": list(c), "multiplicity": m} for c, m in schedule.blocks],
        }
    return {
        "variant": "tabulated",
        "grid": [float(x) for x in schedule.grid],
        "coefficients": [[float(v) for v in row] for row in schedule.coefficients],
        "controls": [_matrix_to_pairs(c) for c in schedule.controls],
        "alpha": [float(a) for a in schedule.alpha],
    }


def schedule_from_dict(doc: dict) -> Schedule:
    try:
        variant = doc["variant"]
        if variant == "closed_form":
            return ClosedFormSchedule(
                frame=_pairs_to_matrix(doc["frame"]),
                centers=doc["centers"],
                scale=float(doc["scale"]),
                alpha=float(doc["alpha"]),
                x_max=float(doc["x_max"]),
                blocks=tuple((tuple(b["columns"]), int(b["multiplicity"])) for b in doc.get("blocks", [])),
            )
        if variant == "tabulated":
            return TabulatedSchedule(
                grid=doc["grid"],
                coefficients=doc["coefficients"],
                controls=[_pairs_to_matrix(c) for c in doc["controls"]],
                alpha=doc.get("alpha"),
            )
    except KeyError as exc:
        raise InputError(f"schedule document is missing field {exc}") from None
    raise InputError(f"unknown schedule variant {doc.get('variant')!r}")


def dumps(schedule: Schedule) -> str:
    return json.dumps(schedule_to_dict(schedule))


def loads(text: str) -> Schedule:
    return schedule_from_dict(json.loads(text))
