import csv
import io

import numpy as np
import pytest

from contmeas.dynamics import ClosedFormSchedule, constant_schedule
from contmeas.errors import ConsistencyError, InputError, NormalizationError, ResourceLimitError
from contmeas.matcore import Z, random_hermitian, random_unitary
from contmeas.walk import (
    Outcome,
    WalkConfig,
    absorption_probabilities,
    csv_header,
    endpoint_pair,
    enumerate_paths,
    run_trajectories,
    run_trajectory,
    step_operators,
    total_walk_operator,
    trajectories_to_csv,
    walk_step,
)

PSI = np.array([0.6, 0.8j])
ZERO = constant_schedule(np.zeros((2, 2)), 4)
CLOSED = ClosedFormSchedule.from_centers([1.0, -1.0], x_max=4)


def test_step_operators_zero():
    mp, mm = step_operators(np.zeros((3, 3)), 0.1)
    assert np.allclose(mp, np.eye(3) / np.sqrt(2)) and np.allclose(mm, np.eye(3) / np.sqrt(2))


def test_step_operators_z():
    mp, mm = step_operators(Z, 0.1)
    assert mp[0, 0] == pytest.approx((np.cos(0.1) - np.sin(0.1)) / np.sqrt(2), abs=1e-15)
    assert mm[0, 0] == pytest.approx((np.cos(0.1) + np.sin(0.1)) / np.sqrt(2), abs=1e-15)


def test_step_operators_match_probe_unitary(rng):
    from scipy.linalg import expm

    e = random_hermitian(3, rng)
    y = np.array([[0, -1j], [1j, 0]])
    u = expm(1j * 0.07 * np.kron(y, e))
    plus = np.array([1, 1]) / np.sqrt(2)
    minus = np.array([1, -1]) / np.sqrt(2)
    zero = np.array([1, 0])
    want_p = np.kron(plus, np.eye(3)) @ u @ np.kron(zero, np.eye(3)).T
    want_m = np.kron(minus, np.eye(3)) @ u @ np.kron(zero, np.eye(3)).T
    mp, mm = step_operators(e, 0.07)
    assert np.allclose(mp, want_p, atol=1e-13) and np.allclose(mm, want_m, atol=1e-13)


def test_step_expansion_is_third_order(rng):
    e = random_hermitian(3, rng)
    errs = []
    for d in (1e-2, 5e-3):
        approx = (np.eye(3) - d * e - d * d * e @ e / 2) / np.sqrt(2)
        errs.append(np.linalg.norm(step_operators(e, d)[0] - approx))
    assert errs[0] / errs[1] == pytest.approx(8, rel=0.05)


def test_step_completeness_exact(rng):
    e = random_hermitian(6, rng, scale=3)
    mp, mm = step_operators(e, 0.2)
    assert np.linalg.norm(mp.conj().T @ mp + mm.conj().T @ mm - np.eye(6)) <= 1e-12
    with pytest.raises(InputError):
        step_operators(e, -0.1)


def test_walk_step_unbiased(rng):
    x, psi, out = walk_step(0.0, PSI, ZERO, 0.1, rng)
    assert np.allclose(psi, PSI)
    assert abs(x) == pytest.approx(0.1)


def test_walk_step_probability():
    sch = constant_schedule(Z, 1)
    psi0 = np.array([1.0, 0.0])
    ups = 0
    gen = np.random.default_rng(0)
    for _ in range(4000):
        _, _, out = walk_step(0.0, psi0, sch, 0.1, gen)
        ups += out == Outcome.PLUS
    p = (np.cos(0.1) - np.sin(0.1)) ** 2 / 2
    assert abs(ups / 4000 - p) <= 4 * np.sqrt(p * (1 - p) / 4000)


def test_walk_step_inconsistent(rng, monkeypatch):
    import contmeas.walk as walk

    with pytest.raises(InputError):
        step_operators(np.array([[0, 1], [0, 0]]), 0.1)
    monkeypatch.setattr(walk, "step_operators", lambda e, d: (0.9 * np.eye(2) / np.sqrt(2), np.eye(2) / np.sqrt(2)))
    with pytest.raises(ConsistencyError):
        walk_step(0.0, PSI, CLOSED, 0.5, rng)


def test_forward_back_returns_state():
    d, x = 0.01, 0.3
    up = step_operators(CLOSED.evaluate(x), d)[0] @ PSI
    back = step_operators(CLOSED.evaluate(x + d), d)[1] @ up
    back /= np.linalg.norm(back)
    assert 1 - abs(np.vdot(back, PSI)) ** 2 <= 1e-12


def test_config_validation():
    with pytest.raises(InputError):
        WalkConfig(0.1, 1.0, np.array([1.0, 1.0]), CLOSED)
    with pytest.raises(InputError):
        WalkConfig(0.3, 1.0, PSI, CLOSED)
    with pytest.raises(InputError):
        WalkConfig(0.1, 5.0, PSI, CLOSED)
    with pytest.raises(InputError):
        WalkConfig(0.1, 1.0, np.array([1.0, 0, 0]), CLOSED)


def test_single_step_walk():
    cfg = WalkConfig(0.5, 0.5, PSI, CLOSED, seed=3, trajectories=2000)
    recs = run_trajectories(cfg)
    assert all(r.steps == 1 for r in recs)
    pe = enumerate_paths(cfg)
    mp, _ = step_operators(CLOSED.evaluate(0.0), 0.5)
    p = np.linalg.norm(mp @ PSI) ** 2
    assert pe.p_plus == pytest.approx(p, abs=1e-14)
    emp = np.mean([r.outcome == Outcome.PLUS for r in recs])
    assert abs(emp - p) <= 4 * np.sqrt(p * (1 - p) / 2000)


def test_unbiased_walk_probability():
    pe = enumerate_paths(WalkConfig(0.25, 1.0, PSI, ZERO))
    assert pe.p_plus == pytest.approx(0.5, abs=1e-14)
    assert pe.p_plus + pe.p_minus == pytest.approx(1.0, abs=1e-14)


def test_records_are_unit_and_deterministic():
    cfg = WalkConfig(0.25, 1.0, PSI, CLOSED, seed=11, trajectories=50)
    a = run_trajectories(cfg, threads=1)
    b = run_trajectories(cfg, threads=4)
    for r, s in zip(a, b):
        assert abs(np.linalg.norm(r.final_state) - 1) <= 1e-10
        assert (r.outcome, r.steps, r.path_checksum) == (s.outcome, s.steps, s.path_checksum)
        assert np.array_equal(r.final_state, s.final_state)
    one = run_trajectory(cfg, index=7)
    assert one.path_checksum == a[7].path_checksum


def test_runaway_cap(monkeypatch):
    import contmeas.walk as walk

    monkeypatch.setattr(walk, "RUNAWAY_FACTOR", 0)
    from contmeas.errors import SimulationError

    with pytest.raises(SimulationError):
        run_trajectory(WalkConfig(0.25, 1.0, PSI, ZERO))


def test_enumerated_states_match_trajectories():
    cfg = WalkConfig(0.1, 0.4, PSI, CLOSED, seed=5, trajectories=200)
    pe = enumerate_paths(cfg)
    ref = {Outcome.PLUS: pe.plus_states[0].state, Outcome.MINUS: pe.minus_states[0].state}
    for r in run_trajectories(cfg):
        assert 1 - abs(np.vdot(ref[r.outcome], r.final_state)) ** 2 <= 1e-6


def test_enumerate_limit():
    with pytest.raises(ResourceLimitError):
        enumerate_paths(WalkConfig(0.1, 1.3, PSI, CLOSED))
    # probabilities alone have no such limit
    assert enumerate_paths(WalkConfig(0.01, 1.3, PSI, CLOSED), states=False).p_plus > 0


def test_total_walk_operator_zero():
    w = total_walk_operator(ZERO, 1.0, 0.1)
    assert np.allclose(w.m_plus, np.eye(2)) and np.allclose(w.m_minus, np.eye(2))
    pair = endpoint_pair(w)
    assert np.allclose(pair.m1, np.eye(2) / np.sqrt(2)) and np.allclose(pair.m2, np.eye(2) / np.sqrt(2))
    assert pair.a == pytest.approx(1 / np.sqrt(2))


def test_n_diagonal_analytic():
    # d/dx log N_i = -eps_i = (1/2) tanh(x - c_i), so N_i(x) = sqrt(cosh(x - c_i) / cosh(c_i))
    c = np.array([0.8, -0.3])
    sch = ClosedFormSchedule.from_centers(c, x_max=4)
    w = total_walk_operator(sch, 2.0, 0.01)
    analytic = np.sqrt(np.cosh(2.0 - c) / np.cosh(c))
    ode = np.real(np.diag(w.ode_plus))
    assert np.max(np.abs(ode - analytic)) <= 1e-6
    # the step product equals the same thing up to one common scalar
    ratio = np.real(w.n_diagonal) / analytic
    assert np.ptp(ratio) <= 1e-4 * ratio.mean()


def test_rotated_operator_is_diagonal(rng):
    sch = ClosedFormSchedule.from_centers([0.5, -1.0, 2.0], frame=random_unitary(3, rng), x_max=4)
    w = total_walk_operator(sch, 2.0, 0.02)
    assert w.off_diagonal <= 1e-8


def test_endpoint_pair_monotone_in_center():
    prev = None
    for c in np.linspace(0.1, 3, 8):
        sch = ClosedFormSchedule.from_centers([c, -c], x_max=4)
        pair = endpoint_pair(total_walk_operator(sch, 2.0, 0.02))
        lam = np.linalg.eigvalsh(pair.m1.real)
        assert np.all((lam > 0) & (lam < 1))
        assert pair.completeness_residual <= 1e-6
        if prev is not None:
            assert lam[0] < prev
        prev = lam[0]


def test_endpoint_open_interval_at_cap():
    sch = ClosedFormSchedule.from_centers([10.0, -10.0], x_max=10)
    lam = np.linalg.eigvalsh(endpoint_pair(total_walk_operator(sch, 2.0, 0.05)).m1.real)
    assert np.all((lam > 0) & (lam < 1))


def test_normalization_failure():
    bad = constant_schedule(np.diag([1.0, 0.25, -0.7]), 4)
    with pytest.raises(NormalizationError):
        endpoint_pair(total_walk_operator(bad, 2.0, 0.05))


def test_born_rule_small():
    cfg = WalkConfig(0.05, 2.0, PSI, CLOSED)
    p_plus, _ = absorption_probabilities(cfg)
    pair = endpoint_pair(total_walk_operator(CLOSED, 2.0, 0.05))
    assert abs(p_plus - pair.born(PSI)[0]) <= 1e-3


def test_csv_layout():
    cfg = WalkConfig(0.25, 1.0, PSI, CLOSED, seed=2, trajectories=3)
    text = trajectories_to_csv(run_trajectories(cfg), 2)
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == csv_header(2) == [
        "seed", "index", "outcome", "steps", "path_checksum",
        "final_state_re_0", "final_state_re_1", "final_state_im_0", "final_state_im_1",
    ]
    assert len(rows) == 4
    r = rows[1]
    assert float(r[5]) == run_trajectory(cfg, 0).final_state.real[0]
