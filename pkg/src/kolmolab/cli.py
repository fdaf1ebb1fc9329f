"""Command-line front end: ``run``, ``verify`` and ``study``.

Exit codes: 0 all checks pass, 1 a check failed, 2 input error,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
from pathlib import Path

from . import __version__
from .core import Splitting, validate_scenario
from .errors import CheckpointError, InputError, KolmoError, ValidationError

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_INPUT = 2
EXIT_RUNTIME = 3


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _kv(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise InputError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _load(path, overrides):
    from .io import apply_overrides, load_scenario
    s = load_scenario(path)
    if overrides:
        s = apply_overrides(s, overrides)
    bad = validate_scenario(s)
    if bad:
        raise ValidationError(bad)
    return s


def cmd_run(args) -> int:
    from .io import RunWriter, scenario_hash, write_energy_csv
    from .core import checkpoint_save
    from .stepper import RunAborted, run

    scenario = _load(args.scenario, args.override)
    out = Path(args.out) if args.out else Path("out") / scenario.name
    start = _now()
    writer = RunWriter(out, scenario)
    manifest = {"scenario_hash": scenario_hash(scenario), "code_version": __version__,
                "start": start, "out_dir": str(out)}
    try:
        result = run(scenario, on_snapshot=writer.snapshot, report=True)
    except RunAborted as exc:
        ckpt = out / f"abort_{exc.last_state.step:08d}.bin"
        checkpoint_save(exc.last_state, ckpt, scenario.grid.mode)
        write_energy_csv(exc.rows, out / "energy.csv")
        abort = {"step": exc.step, "reason": exc.reason, "checkpoint": ckpt.name}
        (out / "ABORT.json").write_text(json.dumps(abort, indent=2) + "\n")
        manifest.update(end=_now(), exit_status=EXIT_RUNTIME,
                        outputs=sorted(p.name for p in out.iterdir()))
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    writer.finish(result.rows)
    rep = result.report
    (out / "report.json").write_text(rep.to_json() + "\n")
    (out / "report.txt").write_text(rep.to_text())
    status = EXIT_OK if rep.passed else EXIT_CHECK
    manifest.update(end=_now(), exit_status=status,
                    outputs=sorted(p.name for p in out.iterdir()) + ["manifest.json"])
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(rep.to_text(), end="")
    return status


def cmd_verify(args) -> int:
    from .diagnostics import DiagnosticsReport, build_report
    from .io import load_run

    out = Path(args.out_dir)
    if not out.is_dir() or not any(out.iterdir()):
        raise InputError(f"{out} is empty or not a directory")
    try:
        scenario, states, rows = load_run(out)
    except CheckpointError as exc:
        print(f"FAIL corrupt dump: {exc}", file=sys.stderr)
        return EXIT_CHECK
    rep = build_report(scenario, states, rows)
    print(rep.to_text(), end="")
    stored = out / "report.json"
    if stored.is_file():
        old = DiagnosticsReport.from_json(stored.read_text())
        if old.to_json() != rep.to_json():
            print("FAIL report differs from the in-run report", file=sys.stderr)
            return EXIT_CHECK
        print("report identical to the in-run report")
    return EXIT_OK if rep.passed else EXIT_CHECK


def _study_convergence(scenario, params, jobs):
    from .diagnostics import convergence_study
    levels = int(params.pop("levels", 3))
    split = params.pop("splitting", None)
    if split:
        scenario = scenario.with_scheme(splitting=split)
    table = convergence_study(scenario, levels=levels, jobs=jobs)
    need = 1.9 if scenario.scheme.splitting is Splitting.STRANG else 0.9
    rows = table.rows
    print(f"{'level':>5} {'dt':>12} {'error':>14} {'order':>8}")
    for r in rows:
        order = "" if r["order"] is None else f"{r['order']:.3f}"
        print(f"{r['level']:>5} {r['h']:>12.4e} {r['error']:>14.6e} {order:>8}")
    ok = table.kind == "temporal-self" or table.min_order >= need
    verdict = "info" if table.kind == "temporal-self" else ("PASS" if ok else "FAIL")
    print(f"{verdict} observed order {table.min_order:.3f} (need {need})")
    return ok, {"kind": table.kind, "rows": rows}


def _study_scaling(scenario, params, jobs):
    from .diagnostics import ScalingExponents, check_scaling_commutation
    theta = float(params.pop("theta", 2.0))
    e = ScalingExponents(theta, int(params.pop("a", 1)), int(params.pop("b", 0)))
    mode = params.pop("mode", "auto")
    bit = None if mode == "auto" else mode == "bitexact"
    rec = check_scaling_commutation(scenario, e, bit)
    print(f"{'PASS' if rec.passed else 'FAIL'} {rec.name} worst={rec.worst:.3e} "
          f"tol={rec.tolerance:.1e} {rec.detail}" + (f" at {rec.where}" if rec.where else ""))
    return rec.passed, {"record": rec.__dict__}


def _study_cascade(scenario, params, jobs):
    from .diagnostics import cascade_study
    ks = [float(x) for x in params.pop("ks", "10,100,1000").split(",")]
    level = params.pop("level", "k")
    rep = cascade_study(scenario, ks, level, jobs)
    print(f"{'level':>8} {'value':>10} {'diff':>14} {'kinetic':>14} {'dissipation':>14}")
    for r in rep.tables["cascade"]:
        diff = "" if r["diff"] is None else f"{r['diff']:.6e}"
        print(f"{r['level']:>8} {r['value']:>10g} {diff:>14} {r['kinetic']:>14.6e} "
              f"{r['dissipation']:>14.6e}")
    rec = rep.records[0]
    print(f"info {rec.detail}")
    return True, rep.to_dict()


def cmd_study(args) -> int:
    scenario = _load(args.scenario, args.override)
    params = _kv(args.param)
    fn = {"convergence": _study_convergence, "scaling": _study_scaling,
          "cascade": _study_cascade}[args.kind]
    ok, payload = fn(scenario, params, args.jobs)
    if params:
        raise InputError(f"unknown study parameter(s): {', '.join(sorted(params))}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"study_{args.kind}.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")
    return EXIT_OK if ok else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kolmolab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write its outputs")
    r.add_argument("scenario")
    r.add_argument("--out", help="run directory (default out/<name>)")
    r.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="rebuild the report of a run directory")
    v.add_argument("out_dir")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("study", help="convergence, scaling or cascade study")
    s.add_argument("kind", choices=("convergence", "scaling", "cascade"))
    s.add_argument("scenario")
    s.add_argument("--out")
    s.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_study)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except KolmoError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
