"""Probe-feedback random walk.

Each step couples a fresh probe qubit in |0> to the system through
``exp(i delta Y (x) eps(x))`` and reads it out in the |+>/|-> basis, giving
the Kraus pair ``M_+- = (cos(delta eps) -+ sin(delta eps)) / sqrt(2)``. The
pointer moves one grid step up or down with the outcome and the walk stops
on the first visit to ``+-X``. Step operators are always evaluated at the
pre-step pointer position.
"""
from __future__ import annotations

import csv
import enum
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .config import DEFAULT
from .dynamics import ClosedFormSchedule, Schedule
from .errors import (
    ConsistencyError,
    InputError,
    NormalizationError,
    ResourceLimitError,
    SimulationError,
)
from .matcore import as_hermitian, eigensystem

RUNAWAY_FACTOR = 100
MAX_ENUMERATE_N = 12


class Outcome(str, enum.Enum):
    PLUS = "Plus"
    MINUS = "Minus"


def step_operators(e: np.ndarray, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact Kraus pair ``(M_plus, M_minus)`` for one probe interaction."""
    if delta < 0:
        raise InputError("delta must be non-negative")
    es = eigensystem(as_hermitian(e))
    f = es.frame
    c = np.cos(delta * es.values)
    s = np.sin(delta * es.values)
    m_plus = (f * ((c - s) / np.sqrt(2))) @ f.conj().T
    m_minus = (f * ((c + s) / np.sqrt(2))) @ f.conj().T
    return m_plus, m_minus


def grid_size(x_max: float, delta: float) -> int:
    """N = X / delta, which must be a positive integer."""
    if delta <= 0 or x_max <= 0:
        raise InputError("delta and X must be positive")
    ratio = x_max / delta
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
        raise InputError(f"X / delta = {ratio} is not a positive integer")
    return n


def step_table(schedule: Schedule, delta: float, n_half: int) -> tuple[np.ndarray, np.ndarray]:
    """Step operators at every interior pointer position ``j delta``, ``|j| < N``."""
    positions = np.arange(-(n_half - 1), n_half) * delta
    pairs = [step_operators(schedule.evaluate(x), delta) for x in positions]
    plus = np.ascontiguousarray([p for p, _ in pairs], dtype=np.complex128)
    minus = np.ascontiguousarray([m for _, m in pairs], dtype=np.complex128)
    return plus, minus


@dataclass(frozen=True)
class WalkConfig:
    delta: float
    x_max: float
    psi0: np.ndarray
    schedule: Schedule
    seed: int = 0
    trajectories: int = 1000

    def __post_init__(self):
        psi = np.array(self.psi0, dtype=complex).ravel()
        if abs(np.linalg.norm(psi) - 1) > 1e-12:
            raise InputError(f"initial state must be normalized (norm {np.linalg.norm(psi):.15f})")
        if psi.shape[0] != self.schedule.n:
            raise InputError(f"state has dimension {psi.shape[0]}, schedule acts on {self.schedule.n}")
        n = grid_size(self.x_max, self.delta)
        lo, hi = self.schedule.x_range
        reach = (n - 1) * self.delta
        if -reach < lo - 1e-12 or reach > hi + 1e-12:
            raise InputError(f"schedule range [{lo}, {hi}] does not cover the walk [-{reach}, {reach}]")
        if self.seed < 0 or self.seed >= 2**64:
            raise InputError("seed must be a 64-bit unsigned integer")
        if self.trajectories < 0:
            raise InputError("trajectories must be non-negative")
        psi.setflags(write=False)
        object.__setattr__(self, "psi0", psi)

    @property
    def n_half(self) -> int:
        return grid_size(self.x_max, self.delta)


@dataclass(frozen=True)
class TrajectoryRecord:
    index: int
    outcome: Outcome
    steps: int
    final_state: np.ndarray
    path_checksum: int
    seed: int = 0


def walk_step(x: float, psi: np.ndarray, schedule: Schedule, delta: float, rng: np.random.Generator):
    """One feedback step. Returns ``(x_new, psi_new, outcome)``."""
    m_plus, m_minus = step_operators(schedule.evaluate(x), delta)
    up = m_plus @ psi
    down = m_minus @ psi
    p_up = float(np.vdot(up, up).real)
    p_down = float(np.vdot(down, down).real)
    if abs(p_up + p_down - 1) > 1e-9:
        raise ConsistencyError(f"step probabilities sum to {p_up + p_down}")
    if rng.random() < p_up:
        return x + delta, up / np.sqrt(p_up), Outcome.PLUS
    return x - delta, down / np.sqrt(p_down), Outcome.MINUS


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _run(tables, n_half: int, psi0: np.ndarray, seed: int, index: int) -> TrajectoryRecord:
    rng = trajectory_rng(seed, index)
    plus, minus = tables
    cap = RUNAWAY_FACTOR * n_half * n_half
    chunk = max(64, 4 * n_half * n_half)
    psi = np.array(psi0, dtype=np.complex128)
    pos, total = 0, 0
    checksum = np.uint64(_kernels.FNV_OFFSET)
    while total < cap:
        u = rng.random(min(chunk, cap - total))
        pos, steps, checksum, status = _kernels.trajectory_chunk(
            plus, minus, n_half, pos, psi, u, np.uint64(checksum), 1e-9
        )
        total += steps
        if status == _kernels.INCONSISTENT:
            raise ConsistencyError(f"step probabilities do not sum to 1 at pointer index {pos}")
        if status != _kernels.RUNNING:
            outcome = Outcome.PLUS if status == _kernels.PLUS else Outcome.MINUS
            psi.setflags(write=False)
            return TrajectoryRecord(index, outcome, total, psi, int(checksum), int(seed))
    raise SimulationError(f"trajectory {index} not absorbed after {cap} steps")


def run_trajectory(config: WalkConfig, index: int = 0, seed: int | None = None, tables=None) -> TrajectoryRecord:
    """Iterate steps from x = 0 until absorption; deterministic in (seed, index)."""
    n_half = config.n_half
    if tables is None:
        tables = step_table(config.schedule, config.delta, n_half)
    return _run(tables, n_half, config.psi0, config.seed if seed is None else seed, index)


def thread_count() -> int:
    raw = os.environ.get("CONTMEAS_THREADS", "")
    if raw.strip():
        return max(1, int(raw))
    return max(1, min(8, os.cpu_count() or 1))


def run_trajectories(config: WalkConfig, threads: int | None = None) -> list[TrajectoryRecord]:
    """All ``config.trajectories`` runs, in index order."""
    n_half = config.n_half
    tables = step_table(config.schedule, config.delta, n_half)
    threads = thread_count() if threads is None else threads

    def one(i):
        return _run(tables, n_half, config.psi0, config.seed, i)

    if threads == 1 or config.trajectories < 64:
        return [one(i) for i in range(config.trajectories)]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(one, range(config.trajectories), chunksize=64))


# -- total walk operators ----------------------------------------------------


@dataclass(frozen=True)
class WalkOperators:
    """Straight-path products toward each boundary (each factor times sqrt 2).

    ``ode_plus`` / ``ode_minus`` integrate ``dM/dx = -eps M`` with RK4 on the
    same grid; ``discrepancy`` is the relative mismatch after the best scalar
    rescaling, since the two only agree up to a normalization.
    """

    m_plus: np.ndarray
    m_minus: np.ndarray
    diag_frame: np.ndarray
    n_diagonal_plus: np.ndarray
    n_diagonal_minus: np.ndarray
    ode_plus: np.ndarray
    ode_minus: np.ndarray
    discrepancy: float
    off_diagonal: float
    delta: float
    x_max: float

    @property
    def n_diagonal(self) -> np.ndarray:
        return self.n_diagonal_plus

    @property
    def M_at_plus_X(self) -> np.ndarray:
        return self.m_plus

    @property
    def M_at_minus_X(self) -> np.ndarray:
        return self.m_minus


def _ode_walk(schedule: Schedule, delta: float, steps: int, sign: int) -> np.ndarray:
    n = schedule.n
    h = sign * delta
    m = np.eye(n, dtype=complex)
    x = 0.0
    for _ in range(steps):
        k1 = -schedule.evaluate(x) @ m
        mid = schedule.evaluate(x + h / 2)
        k2 = -mid @ (m + h / 2 * k1)
        k3 = -mid @ (m + h / 2 * k2)
        k4 = -schedule.evaluate(x + h) @ (m + h * k3)
        m = m + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        x += h
    return m


def _scalar_mismatch(a: np.ndarray, b: np.ndarray) -> float:
    c = np.vdot(b, a) / np.vdot(b, b)
    return float(np.linalg.norm(a - c * b) / np.linalg.norm(a))


def total_walk_operator(schedule: Schedule, x_max: float, delta: float, check: bool = True) -> WalkOperators:
    n_half = grid_size(x_max, delta)
    lo, hi = schedule.x_range
    if x_max > hi + 1e-12 or -x_max < lo - 1e-12:
        raise InputError(f"schedule range [{lo}, {hi}] does not cover [-{x_max}, {x_max}]")
    plus, minus = step_table(schedule, delta, n_half)
    mid = n_half - 1
    root2 = np.sqrt(2)
    m_plus = _kernels.ordered_product(np.ascontiguousarray(root2 * plus[mid:]))
    m_minus = _kernels.ordered_product(np.ascontiguousarray(root2 * minus[: mid + 1][::-1]))

    if isinstance(schedule, ClosedFormSchedule):
        frame = schedule.frame
    else:
        frame = eigensystem(schedule.evaluate(0.0)).frame
    rot_p = frame.conj().T @ m_plus @ frame
    rot_m = frame.conj().T @ m_minus @ frame
    off = 0.0
    for r in (rot_p, rot_m):
        off = max(off, float(np.linalg.norm(r - np.diag(np.diag(r))) / np.linalg.norm(r)))

    ode_p = _ode_walk(schedule, delta, n_half, +1)
    ode_m = _ode_walk(schedule, delta, n_half, -1)
    disc = max(_scalar_mismatch(m_plus, ode_p), _scalar_mismatch(m_minus, ode_m))
    if check:
        lim = 10 * delta * (1 + x_max * max(np.linalg.norm(schedule.evaluate(x), 2) ** 2 for x in (-x_max, 0, x_max)))
        if disc > lim:
            raise ConsistencyError(f"step product and ODE walk operator disagree ({disc:.3e} > {lim:.3e})")
    return WalkOperators(
        m_plus, m_minus, frame, np.diag(rot_p).copy(), np.diag(rot_m).copy(), ode_p, ode_m, disc, off, delta, x_max
    )


@dataclass(frozen=True)
class MeasurementPair:
    m1: np.ndarray
    m2: np.ndarray
    a: float
    b: float
    completeness_residual: float

    def born(self, psi: np.ndarray) -> tuple[float, float]:
        u = self.m1 @ psi
        v = self.m2 @ psi
        return float(np.vdot(u, u).real), float(np.vdot(v, v).real)


def endpoint_pair(w: WalkOperators, tol: float = DEFAULT.completeness) -> MeasurementPair:
    """Rescale the two boundary products into a (nearly) complete pair.

    Least squares in ``(a^2, b^2)`` on ``a^2 A + b^2 B = I`` with
    ``A = M_+^dag M_+`` and ``B = M_-^dag M_-``. When A and B are
    proportional the problem is degenerate and ``a = b`` is imposed.
    """
    pa = w.m_plus.conj().T @ w.m_plus
    pb = w.m_minus.conj().T @ w.m_minus
    n = pa.shape[0]
    g = np.array([[np.vdot(pa, pa), np.vdot(pa, pb)], [np.vdot(pb, pa), np.vdot(pb, pb)]]).real
    rhs = np.array([np.trace(pa), np.trace(pb)]).real
    det = np.linalg.det(g)
    if det > 1e-10 * g[0, 0] * g[1, 1]:
        u, v = np.linalg.solve(g, rhs)
    else:
        s = pa + pb
        u = v = float(np.trace(s).real / np.vdot(s, s).real)
    if u <= 0 or v <= 0:
        raise NormalizationError(f"no positive normalization exists (a^2 = {u:.3e}, b^2 = {v:.3e})")
    res = float(np.linalg.norm(u * pa + v * pb - np.eye(n)))
    if res > tol:
        raise NormalizationError(f"endpoint completeness residual {res:.3e} exceeds {tol:.1e}")
    a, b = np.sqrt(u), np.sqrt(v)
    return MeasurementPair(a * w.m_plus, b * w.m_minus, float(a), float(b), res)


# -- exact enumeration -------------------------------------------------------


@dataclass(frozen=True)
class FinalState:
    state: np.ndarray
    probability: float
    multiplicity: int


@dataclass(frozen=True)
class PathEnumeration:
    p_plus: float
    p_minus: float
    plus_states: list = field(default_factory=list)
    minus_states: list = field(default_factory=list)
    max_length: int = 0
    unresolved_mass: float = 0.0

    def spread(self, outcome: Outcome) -> float:
        """1 - min pairwise fidelity among the conditioned final states."""
        states = self.plus_states if outcome == Outcome.PLUS else self.minus_states
        if len(states) < 2:
            return 0.0
        v = np.array([f.state for f in states])
        fid = np.abs(v.conj() @ v.T) ** 2
        return float(1 - fid.min())


def absorption_probabilities(config: WalkConfig, tables=None) -> tuple[float, float]:
    """Exact P(Plus), P(Minus) summed over all paths of every length.

    Solves for the total unnormalized density ``G_j`` accumulated at each
    interior site: ``G = rho0 e_0 + sum_neighbours M G M^dag``.
    """
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    n_half = config.n_half
    plus, minus = tables if tables is not None else step_table(config.schedule, config.delta, n_half)
    sites = 2 * n_half - 1
    n = plus.shape[-1]
    nn = n * n
    rows = []
    for j in range(sites):
        if j + 1 < sites:
            rows.append(((j + 1, j), np.kron(plus[j], plus[j].conj())))
        if j - 1 >= 0:
            rows.append(((j - 1, j), np.kron(minus[j], minus[j].conj())))
    blocks = [[None] * sites for _ in range(sites)]
    for (dst, src), sup in rows:
        blocks[dst][src] = sp.csr_matrix(-sup)
    for j in range(sites):
        blocks[j][j] = sp.identity(nn, dtype=complex, format="csr")
    system = sp.bmat(blocks, format="csc")
    rho0 = np.outer(config.psi0, config.psi0.conj()).ravel()
    rhs = np.zeros(sites * nn, dtype=complex)
    rhs[(n_half - 1) * nn : n_half * nn] = rho0
    g = spla.spsolve(system, rhs).reshape(sites, n, n)
    top = plus[-1] @ g[-1] @ plus[-1].conj().T
    bottom = minus[0] @ g[0] @ minus[0].conj().T
    return float(np.trace(top).real), float(np.trace(bottom).real)


def enumerate_paths(
    config: WalkConfig,
    states: bool = True,
    extra_steps: int = 8,
    merge_tol: float = 1e-14,
    max_states: int = 1 << 16,
) -> PathEnumeration:
    """Exact outcome statistics, plus every conditioned final state.

    Probabilities cover all path lengths. Final states are collected from all
    paths of length at most ``N + 2 * extra_steps``; states closer than
    ``merge_tol`` in infidelity are merged and counted. The probability not
    absorbed within that length is reported as ``unresolved_mass``.
    """
    n_half = config.n_half
    tables = step_table(config.schedule, config.delta, n_half)
    p_plus, p_minus = absorption_probabilities(config, tables)
    if not states:
        return PathEnumeration(p_plus, p_minus)
    if n_half > MAX_ENUMERATE_N:
        raise ResourceLimitError(f"path enumeration needs N <= {MAX_ENUMERATE_N}, got {n_half}")
    plus, minus = tables
    max_len = n_half + 2 * extra_steps
    frontier: dict[int, list] = {0: [[np.array(config.psi0), 1.0, 1]]}
    finals = {1: [], -1: []}

    def add(bucket, psi, prob, mult):
        for entry in bucket:
            if 1 - abs(np.vdot(entry[0], psi)) ** 2 <= merge_tol:
                entry[1] += prob
                entry[2] += mult
                return
        bucket.append([psi, prob, mult])

    for _ in range(max_len):
        nxt: dict[int, list] = {}
        for pos, entries in frontier.items():
            j = pos + n_half - 1
            for sign, m in ((1, plus[j]), (-1, minus[j])):
                for psi, prob, mult in entries:
                    phi = m @ psi
                    w = float(np.vdot(phi, phi).real)
                    if w == 0:
                        continue
                    phi = phi / np.sqrt(w)
                    dest = pos + sign
                    if abs(dest) >= n_half:
                        add(finals[sign], phi, prob * w, mult)
                    else:
                        add(nxt.setdefault(dest, []), phi, prob * w, mult)
        frontier = nxt
        if sum(len(v) for v in frontier.values()) > max_states:
            raise ResourceLimitError(f"more than {max_states} distinct intermediate states")
        if not frontier:
            break
    unresolved = sum(e[1] for entries in frontier.values() for e in entries)

    def pack(bucket):
        return [FinalState(psi, prob, mult) for psi, prob, mult in bucket]

    return PathEnumeration(p_plus, p_minus, pack(finals[1]), pack(finals[-1]), max_len, float(unresolved))


# -- output ------------------------------------------------------------------


def csv_header(n: int) -> list[str]:
    return (
        ["seed", "index", "outcome", "steps", "path_checksum"]
        + [f"final_state_re_{i}" for i in range(n)]
        + [f"final_state_im_{i}" for i in range(n)]
    )


def trajectories_to_csv(records: list[TrajectoryRecord], n: int) -> str:
    """Fixed column order, doubles at 17 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header(n))
    for r in records:
        w.writerow(
            [r.seed, r.index, r.outcome.value, r.steps, r.path_checksum]
            + ["%.17g" % v for v in r.final_state.real]
            + ["%.17g" % v for v in r.final_state.imag]
        )
    return buf.getvalue()
