"""contmeas command line: analyze | simulate | verify | synthesize.

All numerics come from a JSON config; flags only pick the seed, output
directory and tolerance overrides. Exit codes: 0 ok, 1 input, 2 resource
limit, 3 simulation failure, 4 not achievable.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import _kernels
from .closure import ClosureLimits, find_closed_subspaces
from .config import DEFAULT, Tolerances
from .dynamics import ClosedFormSchedule, constant_schedule, reversibility_order, schedule_from_dict, schedule_to_dict
from .errors import ContmeasError, InputError, NormalizationError, SaturationError, SimulationError
from .jordan import block_decompose, spectrum_capacity
from .walk import (
    Outcome,
    WalkConfig,
    absorption_probabilities,
    endpoint_pair,
    enumerate_paths,
    run_trajectories,
    step_operators,
    total_walk_operator,
    trajectories_to_csv,
)

log = logging.getLogger("contmeas")

EXIT_OK, EXIT_INPUT, EXIT_RESOURCE, EXIT_SIMULATION, EXIT_UNACHIEVABLE = 0, 1, 2, 3, 4
EXACT_MAX_N = 200
ORDER_THRESHOLD = 2.5
PATH_FIDELITY = 1e-8


def load_schema(name: str) -> dict:
    return json.loads(resources.files("contmeas").joinpath("schemas", name).read_text())


def validate(doc, schema_name: str) -> None:
    schema = load_schema(schema_name)
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/" + "/".join(str(p) for p in e.absolute_path)
        raise InputError(f"config field {where}: {e.message}")


def load_config(path: str, command: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"config {path} is not valid JSON: {exc}") from None
    validate(doc, f"{command}.input.json")
    return doc


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def dump_json(doc) -> str:
    # json writes floats with repr, the shortest string that round-trips exactly
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


# -- conversions -------------------------------------------------------------


def parse_matrix(doc: dict, what: str = "matrix") -> np.ndarray:
    re = np.asarray(doc["re"], dtype=float)
    im = np.asarray(doc.get("im", np.zeros_like(re)), dtype=float)
    if re.ndim != 2 or re.shape[0] != re.shape[1] or im.shape != re.shape:
        raise InputError(f"{what} must be square with matching re/im parts")
    return re + 1j * im


def parse_vector(doc: dict) -> np.ndarray:
    re = np.asarray(doc["re"], dtype=float)
    im = np.asarray(doc.get("im", np.zeros_like(re)), dtype=float)
    if im.shape != re.shape:
        raise InputError("state re/im parts differ in length")
    return re + 1j * im


def matrix_pairs(a: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(a)]


def build_schedule(doc: dict, x_max: float):
    if "centers" in doc:
        frame = parse_matrix(doc["frame"], "frame") if "frame" in doc else None
        return ClosedFormSchedule.from_centers(doc["centers"], frame=frame, x_max=doc.get("x_max", x_max))
    if "constant" in doc:
        return constant_schedule(parse_matrix(doc["constant"], "constant schedule"), x_max)
    return schedule_from_dict(doc["document"])


def tolerances(cfg: dict, overrides: list[str]) -> Tolerances:
    tol = DEFAULT
    try:
        if cfg.get("tolerances"):
            tol = tol.override([f"{k}={v}" for k, v in cfg["tolerances"].items()])
        return tol.override(overrides or [])
    except (KeyError, ValueError) as exc:
        raise InputError(f"bad tolerance override: {exc}") from None


def limits(cfg: dict, exhaustive: bool) -> ClosureLimits:
    return ClosureLimits(exhaustive=exhaustive, **cfg.get("limits", {}))


def block_dicts(dec) -> list[dict]:
    return [
        {
            "type": b.type.value,
            "size": b.size,
            "rank": b.rank,
            "multiplicity": b.multiplicity,
            "algebra_dim": b.algebra_dim,
            "component": b.component,
        }
        for b in dec.blocks
    ]


# -- commands ----------------------------------------------------------------


def cmd_analyze(cfg: dict, args, tol: Tolerances) -> tuple[int, dict]:
    controls = [parse_matrix(m, f"controls[{i}]") for i, m in enumerate(cfg["controls"])]
    found = find_closed_subspaces(
        controls, tol.closure, limits(cfg, args.exhaustive), witt_tol=tol.witt_null, span_tol=tol.span_equal
    )
    subs = []
    for cs in found:
        dec = block_decompose(cs, seed=args.seed or 0, tol=tol.block)
        subs.append(
            {
                "dim": cs.dim,
                "residual": cs.residual,
                "provenance": [[k, list(signs)] for k, signs in cs.provenance],
                "basis": [matrix_pairs(b) for b in cs.basis],
                "blocks": block_dicts(dec),
                "n_components": dec.n_components,
                "capacity": spectrum_capacity(dec),
            }
        )
    return EXIT_OK, {"n_controls": len(controls), "subspaces": subs}


def cmd_simulate(cfg: dict, args, tol: Tolerances) -> tuple[int, dict]:
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    x_max, delta = float(cfg["X"]), float(cfg["delta"])
    sched = build_schedule(cfg["schedule"], x_max)
    config = WalkConfig(delta, x_max, parse_vector(cfg["psi0"]), sched, seed, cfg.get("trajectories", 1000))
    pair = endpoint_pair(total_walk_operator(sched, x_max, delta), tol.completeness)
    born = pair.born(config.psi0)
    exact = None
    if cfg.get("exact", config.n_half <= EXACT_MAX_N):
        pp, pm = absorption_probabilities(config)
        exact = {"Plus": pp, "Minus": pm}
    records = run_trajectories(config)
    atomic_write(Path(args.out) / "trajectories.csv", trajectories_to_csv(records, sched.n))
    total = len(records)
    plus = sum(r.outcome == Outcome.PLUS for r in records)
    p = plus / total if total else 0.0
    summary = {
        "seed": seed,
        "trajectories": total,
        "delta": delta,
        "X": x_max,
        "N": config.n_half,
        "backend": _kernels.backend(),
        "empirical": {"Plus": p, "Minus": 1 - p if total else 0.0},
        "sigma": float(np.sqrt(p * (1 - p) / total)) if total else 0.0,
        "born": {"Plus": born[0], "Minus": born[1]},
        "exact": exact,
        "completeness_residual": pair.completeness_residual,
        "endpoint_scale": [pair.a, pair.b],
        "mean_steps": float(np.mean([r.steps for r in records])) if total else 0.0,
    }
    return EXIT_OK, summary


def _check(name, passed, value=None, threshold=None, detail=""):
    return {"name": name, "passed": bool(passed), "value": value, "threshold": threshold, "detail": detail}


def cmd_verify(cfg: dict, args, tol: Tolerances) -> tuple[int, dict]:
    x_max, delta = float(cfg["X"]), float(cfg["delta"])
    sched = build_schedule(cfg["schedule"], x_max)
    n = sched.n
    checks = []

    xs = np.linspace(-x_max, x_max, 41)
    worst = 0.0
    for x in xs:
        mp, mm = step_operators(sched.evaluate(x), delta)
        worst = max(worst, float(np.linalg.norm(mp.conj().T @ mp + mm.conj().T @ mm - np.eye(n))))
    checks.append(_check("step_completeness", worst <= 1e-12, worst, 1e-12))

    h = 1e-4
    pts = [float(x) for x in cfg.get("points", np.linspace(-x_max / 2, x_max / 2, 5))]
    ode = 0.0
    for x in pts:
        e = sched.evaluate(x)
        d = (sched.evaluate(x + h) - sched.evaluate(x - h)) / (2 * h)
        ode = max(ode, float(np.linalg.norm(d - 2 * e @ e - sched.alpha_at(x) * np.eye(n))))
    checks.append(_check("reversibility_ode", ode <= tol.ode_drift, ode, tol.ode_drift, "central differences, h = 1e-4"))

    # keep x +- delta inside the schedule for the halving test
    probe = [x for x in pts if abs(x) + delta <= x_max]
    order = reversibility_order(sched, probe, delta) if probe else float("nan")
    checks.append(
        _check(
            "reversibility_order",
            order >= ORDER_THRESHOLD,
            order,
            ORDER_THRESHOLD,
            "log2 of the residual ratio under delta halving; second order means the condition fails",
        )
    )

    psi0 = parse_vector(cfg["psi0"]) if "psi0" in cfg else np.eye(n, dtype=complex)[0]
    small = WalkConfig(delta, 4 * delta, psi0, sched, trajectories=0) if 4 * delta <= x_max else None
    if small is None:
        checks.append(_check("path_independence", False, None, PATH_FIDELITY, "need X >= 4 delta"))
    else:
        pe = enumerate_paths(small)
        spread = max(pe.spread(Outcome.PLUS), pe.spread(Outcome.MINUS))
        checks.append(_check("path_independence", spread <= PATH_FIDELITY, spread, PATH_FIDELITY, "N = 4 enumeration"))

    try:
        pair = endpoint_pair(total_walk_operator(sched, x_max, delta), tol.completeness)
        checks.append(_check("endpoint_completeness", pair.completeness_residual <= 1e-6, pair.completeness_residual, 1e-6))
    except (NormalizationError, SimulationError) as exc:
        checks.append(_check("endpoint_completeness", False, None, 1e-6, str(exc)))

    passed = all(c["passed"] for c in checks)
    return (EXIT_OK if passed else EXIT_SIMULATION), {"passed": passed, "checks": checks}


def cmd_synthesize(cfg: dict, args, tol: Tolerances) -> tuple[int, dict]:
    from .synth import TargetMeasurement, synthesize

    controls = [parse_matrix(m, f"controls[{i}]") for i, m in enumerate(cfg["controls"])]
    target = TargetMeasurement(parse_matrix(cfg["target"], "target"), cfg.get("tolerance", tol.achievable))
    x_max, delta = float(cfg["X"]), float(cfg["delta"])
    found = find_closed_subspaces(
        controls, tol.closure, limits(cfg, args.exhaustive), witt_tol=tol.witt_null, span_tol=tol.span_equal
    )
    reports = []
    for i, cs in enumerate(found):
        dec = block_decompose(cs, seed=args.seed or 0, tol=tol.block)
        try:
            res = synthesize(target, dec, x_max, delta)
        except SaturationError as exc:
            from .synth import check_achievable

            rep = check_achievable(target, dec)
            rep.achievable = False
            rep.violations.append(f"saturation: {exc}")
            reports.append(rep.to_dict())
            continue
        reports.append(res.report.to_dict())
        if not res.report.achievable:
            continue
        doc = {
            "achievable": True,
            "subspace": i,
            "reports": reports,
            "centers": [float(c) for c in res.centers],
            "target_eigenvalues": [float(v) for v in res.target_values],
            "predicted_eigenvalues": [float(v) for v in res.predicted_values],
            "roundtrip_error": res.roundtrip_error,
            "completeness_residual": res.completeness_residual,
            "blocks": block_dicts(dec),
            "polar_plan": {
                "W1": matrix_pairs(res.plan.w1),
                "W2": matrix_pairs(res.plan.w2),
                "P1": matrix_pairs(res.plan.p1),
                "P2": matrix_pairs(res.plan.p2),
            },
            "schedule": schedule_to_dict(res.schedule),
        }
        atomic_write(Path(args.out) / "schedule.json", dump_json(doc["schedule"]))
        code = EXIT_OK if res.roundtrip_error <= 1e-4 else EXIT_SIMULATION
        return code, doc
    return EXIT_UNACHIEVABLE, {"achievable": False, "subspace": None, "reports": reports}


COMMANDS = {
    "analyze": (cmd_analyze, "analyze.json"),
    "simulate": (cmd_simulate, "summary.json"),
    "verify": (cmd_verify, "verify.json"),
    "synthesize": (cmd_synthesize, "plan.json"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="contmeas", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--exhaustive", action="store_true", help="branch on every violating direction")
        p.add_argument("--tol-override", action="append", default=[], metavar="NAME=VALUE")
        p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def run(argv=None) -> tuple[int, dict | None]:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    fn, out_name = COMMANDS[args.command]
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise InputError("--seed must be a 64-bit unsigned integer")
        cfg = load_config(args.config, args.command)
        tol = tolerances(cfg, args.tol_override)
        code, doc = fn(cfg, args, tol)
    except ContmeasError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code, None
    validate_output = load_schema(f"{args.command}.output.json")
    jsonschema.validate(doc, validate_output)
    atomic_write(Path(args.out) / out_name, dump_json(doc))
    return code, doc


def main(argv=None) -> int:
    return run(argv)[0]


if __name__ == "__main__":
    sys.exit(main())
