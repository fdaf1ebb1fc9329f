"""Scenario files and run-directory artifacts.

Scenario files are flat JSON objects with dotted keys, for example::

    {
      "name": "shear",
      "mode": "channel1d",
      "grid.ny": 32,
      "wall.y0.kind": "gamma",
      "wall.y0.b": "0.5 + 0.1*sin(t)",
      "init.u": "cos(pi*y)"
    }

Nested objects are accepted and flattened. Unknown keys, duplicate keys
and ill-typed values raise :class:`ScenarioError` naming the key and line.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import re
from pathlib import Path

import numpy as np

from .core import (BoundarySpec, FieldExpr, Grid, ModelParams, OutputPlan, PrandtlParams,
                   RegLevels, Scenario, SchemeOptions, SimState, WallSpec, checkpoint_load,
                   checkpoint_save)
from .errors import CheckpointError, InputError, ScenarioError, UnsupportedLawError
from .slipbc import LawKind, SlipLaw

__all__ = [
    "parse_scenario",
    "load_scenario",
    "scenario_to_dict",
    "dump_scenario",
    "scenario_hash",
    "apply_overrides",
    "write_energy_csv",
    "read_energy_csv",
    "RunWriter",
    "load_run",
]

_WALL_KEYS = {"kind": str, "b": "expr", "omega": "expr", "law": str, "gamma_star": float,
              "sigma_star": float, "traction_scale": float, "C_g": float, "beta_g": float,
              "C": float, "sigma_max": float}

KEYS: dict[str, object] = {
    "name": str,
    "mode": str,
    "model": str,
    "grid.ny": int, "grid.nx": int, "grid.height": float, "grid.length": float,
    "params.preset": str, "params.nu0": float, "params.kappa1": float,
    "params.kappa2": float, "params.kappa3": float, "params.kappa4": float,
    "params.normalized": bool,
    "levels.k": float, "levels.n": float, "levels.m": float,
    "bounds.b_min": float, "bounds.b_max": float,
    "bounds.omega_min": float, "bounds.omega_max": float,
    "init.u": "expr", "init.v": "expr", "init.b": "expr", "init.omega": "expr",
    "init.shift_b": bool,
    "time.dt": float, "time.t_end": float,
    "scheme.splitting": str, "scheme.formulation": str, "scheme.cfl_guard": float,
    "scheme.max_wall_iters": int,
    "output.snapshot_every": int, "output.report_every": int, "output.pressure_parts": bool,
    "prandtl.ell": float, "prandtl.c": float,
}
for _w in ("y0", "y1"):
    for _k, _t in _WALL_KEYS.items():
        KEYS[f"wall.{_w}.{_k}"] = _t

_LAWS = {"navier", "free", "threshold", "noslip"}


def _line_of(text: str | None, key: str) -> int | None:
    if text is None:
        return None
    leaf = key.split(".")[-1]
    for cand in (key, leaf):
        pat = re.compile(r'"' + re.escape(cand) + r'"\s*:')
        m = pat.search(text)
        if m:
            return text.count("\n", 0, m.start()) + 1
    return None


class _Pairs(list):
    """Key/value pairs of one JSON object, in file order (keeps duplicates)."""


def _flatten(obj: _Pairs, prefix: str, out: dict, text: str | None) -> None:
    for k, v in obj:
        key = f"{prefix}{k}"
        if isinstance(v, _Pairs) and key not in KEYS:
            _flatten(v, key + ".", out, text)
            continue
        if key in out:
            raise ScenarioError("duplicate key", key, _line_of(text, key))
        out[key] = v


def _pairs(pairs):
    return _Pairs(pairs)


def _coerce(key: str, kind, value, text):
    line = _line_of(text, key)
    if kind is bool:
        if not isinstance(value, bool):
            raise ScenarioError(f"expected true/false, got {value!r}", key, line)
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ScenarioError(f"expected an integer, got {value!r}", key, line)
        return value
    if kind is float:
        if isinstance(value, str) and value.strip().lower() in ("inf", "infinity"):
            return math.inf
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ScenarioError(f"expected a number, got {value!r}", key, line)
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ScenarioError(f"expected a string, got {value!r}", key, line)
        return value
    # field expression: number, expression string or (nested) list of numbers
    if isinstance(value, (bool, _Pairs)):
        raise ScenarioError("expected a number, expression or table", key, line)
    if isinstance(value, (int, float)):
        return FieldExpr(float(value))
    if isinstance(value, str):
        fe = FieldExpr(value)
        try:
            fe.evaluate(0.0, 0.5, 0.5)
        except ScenarioError as exc:
            raise ScenarioError(str(exc), key, line) from None
        return fe
    if isinstance(value, list):
        try:
            arr = np.asarray(value, dtype=float)
        except (TypeError, ValueError):
            raise ScenarioError("table entries must be numbers", key, line) from None
        return FieldExpr(tuple(arr.ravel().tolist()))
    raise ScenarioError(f"unsupported value {value!r}", key, line)


def parse_scenario(text: str) -> Scenario:
    """Parse scenario text.

    Raises
    ------
    ScenarioError
        Malformed JSON, unknown or duplicate key, bad value; the message
        names the key and line.
    """
    try:
        raw = json.loads(text, object_pairs_hook=_pairs)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc.msg}", None, exc.lineno) from None
    if not isinstance(raw, _Pairs):
        raise ScenarioError("scenario must be a JSON object", None, 1)
    flat: dict = {}
    _flatten(raw, "", flat, text)
    return scenario_from_dict(flat, text)


def load_scenario(path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read scenario {path}: {exc}") from exc
    return parse_scenario(text)


def _law(prefix: str, d: dict, text) -> SlipLaw:
    name = d.get(f"{prefix}.law", "free")
    key = f"{prefix}.law"
    if name not in _LAWS:
        raise ScenarioError(f"unknown law {name!r} (expected one of {sorted(_LAWS)})",
                            key, _line_of(text, key))
    extra = {k: d[f"{prefix}.{k}"] for k in ("C_g", "beta_g", "C", "sigma_max")
             if f"{prefix}.{k}" in d}
    gamma = d.get(f"{prefix}.gamma_star", 0.0)
    try:
        if name == "free":
            return SlipLaw.free(**extra)
        if name == "navier":
            return SlipLaw.navier(gamma, **extra)
        if name == "threshold":
            return SlipLaw.threshold(d.get(f"{prefix}.sigma_star", 0.0), gamma, **extra)
        return SlipLaw.no_slip_limit(d.get(f"{prefix}.traction_scale", 1.0), gamma, **extra)
    except ValueError as exc:
        raise ScenarioError(str(exc), key, _line_of(text, key)) from None


def scenario_from_dict(flat: dict, text: str | None = None) -> Scenario:
    """Build a scenario from a flat key mapping (see :data:`KEYS`)."""
    d = {}
    for key, value in flat.items():
        if key not in KEYS:
            raise ScenarioError("unknown key", key, _line_of(text, key))
        d[key] = _coerce(key, KEYS[key], value, text)

    def get(key, default):
        return d.get(key, default)

    def guard(key, fn):
        try:
            return fn()
        except (ValueError, TypeError) as exc:
            raise ScenarioError(str(exc), key, _line_of(text, key)) from None

    mode = get("mode", "channel1d")
    grid = guard("mode", lambda: Grid(mode, get("grid.ny", 32), get("grid.nx", 1),
                                      get("grid.height", 1.0), get("grid.length", 1.0)))
    preset = get("params.preset", "custom")
    pkeys = {k: d[f"params.{k}"] for k in ("nu0", "kappa1", "kappa2", "kappa3", "kappa4")
             if f"params.{k}" in d}
    if preset == "kolmogorov":
        extra = set(pkeys) - {"nu0", "kappa1", "kappa3"}
        if extra:
            key = f"params.{sorted(extra)[0]}"
            raise ScenarioError("fixed by the kolmogorov preset", key, _line_of(text, key))
        params = guard("params.preset", lambda: ModelParams.kolmogorov(**pkeys))
    elif preset in ("custom", "normalized"):
        norm = get("params.normalized", preset == "normalized")
        params = guard("params.nu0", lambda: ModelParams(**pkeys, normalized=norm))
    else:
        raise ScenarioError(f"unknown preset {preset!r}", "params.preset",
                            _line_of(text, "params.preset"))
    levels = guard("levels.k", lambda: RegLevels(get("levels.k", math.inf),
                                                 get("levels.n", math.inf),
                                                 get("levels.m", math.inf)))
    walls = []
    for w in ("y0", "y1"):
        pre = f"wall.{w}"
        law = _law(pre, d, text)
        walls.append(guard(f"{pre}.kind", lambda: WallSpec(
            get(f"{pre}.kind", "gammac"), get(f"{pre}.b", None), get(f"{pre}.omega", None), law)))
    boundary = BoundarySpec(walls[0], walls[1], get("bounds.b_min", 1e-3),
                            get("bounds.b_max", 1e3), get("bounds.omega_min", 1e-3),
                            get("bounds.omega_max", 1e3))
    scheme = guard("scheme.splitting", lambda: SchemeOptions(
        get("time.dt", 1e-3), get("scheme.splitting", "lie"),
        get("scheme.formulation", "bform"), get("scheme.cfl_guard", 1.0),
        get("scheme.max_wall_iters", 200)))
    output = OutputPlan(get("output.snapshot_every", 10), get("output.report_every", 1),
                        get("output.pressure_parts", False))
    model = get("model", "kolmogorov")
    if model not in ("kolmogorov", "prandtl"):
        raise ScenarioError(f"unknown model {model!r}", "model", _line_of(text, "model"))
    prandtl = None
    if "prandtl.ell" in d or "prandtl.c" in d or model == "prandtl":
        prandtl = guard("prandtl.ell", lambda: PrandtlParams(get("prandtl.ell", 1.0),
                                                             get("prandtl.c", 1.0)))
    return Scenario(grid, params, levels, boundary,
                    get("init.u", FieldExpr(0.0)), get("init.v", FieldExpr(0.0)),
                    get("init.b", FieldExpr(1.0)), get("init.omega", FieldExpr(1.0)),
                    get("time.t_end", 1.0), scheme, output, model, prandtl,
                    get("init.shift_b", True), get("name", "run"))


def _expr_value(fe: FieldExpr):
    if fe.tabulated:
        return [x * fe.scale for x in fe.source]
    if fe.scale != 1.0 or fe.time_scale != 1.0 or fe.space_scale != 1.0:
        if isinstance(fe.source, (int, float)):
            return float(fe.source) * fe.scale
        src = fe.source
        if fe.time_scale != 1.0 or fe.space_scale != 1.0:
            src = (f"(lambda t, x, y: {src})({fe.time_scale!r}*t, "
                   f"{fe.space_scale!r}*x, {fe.space_scale!r}*y)")
        return f"{fe.scale!r}*({src})"
    return fe.source if isinstance(fe.source, str) else float(fe.source)


def _num(x: float):
    return "inf" if math.isinf(x) else x


def scenario_to_dict(s: Scenario) -> dict:
    """Flat canonical mapping; ``parse_scenario`` of its JSON rebuilds ``s``."""
    p = s.params
    d = {
        "name": s.name, "mode": s.grid.mode.value, "model": s.model,
        "grid.ny": s.grid.ny, "grid.nx": s.grid.nx,
        "grid.height": s.grid.height, "grid.length": s.grid.length,
        "params.preset": "custom", "params.nu0": p.nu0, "params.kappa1": p.kappa1,
        "params.kappa2": p.kappa2, "params.kappa3": p.kappa3, "params.kappa4": p.kappa4,
        "params.normalized": p.normalized,
        "levels.k": _num(s.levels.k), "levels.n": _num(s.levels.n), "levels.m": _num(s.levels.m),
        "bounds.b_min": s.boundary.b_min, "bounds.b_max": s.boundary.b_max,
        "bounds.omega_min": s.boundary.omega_min, "bounds.omega_max": s.boundary.omega_max,
        "init.u": _expr_value(s.init_u), "init.v": _expr_value(s.init_v),
        "init.b": _expr_value(s.init_b), "init.omega": _expr_value(s.init_omega),
        "init.shift_b": s.shift_initial_b,
        "time.dt": s.scheme.dt, "time.t_end": s.t_end,
        "scheme.splitting": s.scheme.splitting.value,
        "scheme.formulation": s.scheme.formulation.value,
        "scheme.cfl_guard": s.scheme.cfl_guard, "scheme.max_wall_iters": s.scheme.max_wall_iters,
        "output.snapshot_every": s.output.snapshot_every,
        "output.report_every": s.output.report_every,
        "output.pressure_parts": s.output.pressure_parts,
    }
    if s.prandtl is not None:
        d["prandtl.ell"] = s.prandtl.ell
        d["prandtl.c"] = s.prandtl.c
    for tag, w in (("y0", s.boundary.bottom), ("y1", s.boundary.top)):
        pre = f"wall.{tag}"
        law = w.law
        if law.kind is LawKind.CUSTOM:
            raise UnsupportedLawError("custom wall laws cannot be written to a scenario file")
        d[f"{pre}.kind"] = w.kind.value
        if w.b is not None:
            d[f"{pre}.b"] = _expr_value(w.b)
            d[f"{pre}.omega"] = _expr_value(w.omega)
        d[f"{pre}.law"] = law.kind.value
        d[f"{pre}.gamma_star"] = law.gamma_star
        if law.kind is LawKind.THRESHOLD:
            d[f"{pre}.sigma_star"] = law.sigma_star
        if law.kind is LawKind.NOSLIP:
            d[f"{pre}.traction_scale"] = law.traction_scale
        d[f"{pre}.C_g"] = law.C_g
        d[f"{pre}.beta_g"] = law.beta_g
        d[f"{pre}.C"] = law.C
        d[f"{pre}.sigma_max"] = _num(law.sigma_max)
    return d


def dump_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=2, sort_keys=True) + "\n"


def scenario_hash(s: Scenario) -> str:
    """SHA-256 of the canonical scenario without its display name."""
    d = scenario_to_dict(s)
    d.pop("name")
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def apply_overrides(s: Scenario, overrides) -> Scenario:
    """Apply ``key=value`` strings (value parsed as JSON, else as a string)."""
    d = scenario_to_dict(s)
    for item in overrides:
        if "=" not in item:
            raise ScenarioError(f"override {item!r} is not key=value")
        key, val = item.split("=", 1)
        key = key.strip()
        if key not in KEYS:
            raise ScenarioError("unknown key in override", key)
        try:
            d[key] = json.loads(val)
        except json.JSONDecodeError:
            d[key] = val
    return scenario_from_dict(d)


# energy table ------------------------------------------------------------------------------

_INT_COLUMNS = {"step", "b_nonpositive", "wall_iters"}


def write_energy_csv(rows, path) -> None:
    """Rows with ``repr`` floats so the file reads back bit-exactly."""
    from .stepper import ENERGY_COLUMNS
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ENERGY_COLUMNS)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else str(r[c])
                        for c in ENERGY_COLUMNS])


def read_energy_csv(path) -> list:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        out = []
        for r in rd:
            out.append({k: int(v) if k in _INT_COLUMNS else float(v) for k, v in r.items()})
    return out


# run directory -------------------------------------------------------------------------------

class RunWriter:
    """Writes field dumps, the index and the energy table of one run.

    Layout: ``scenario.json``, ``fields_<step>.bin`` (checkpoint format),
    ``index.csv`` (step, t, file), ``energy.csv`` and, in 2D with
    ``output.pressure_parts``, ``pressure_<step>.npz``.
    """

    def __init__(self, out_dir, scenario: Scenario):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.scenario = scenario
        self.index = []
        (self.dir / "scenario.json").write_text(dump_scenario(scenario))

    def snapshot(self, st: SimState) -> None:
        name = f"fields_{st.step:08d}.bin"
        checkpoint_save(st, self.dir / name, self.scenario.grid.mode)
        self.index.append((st.step, st.t, name))
        scn = self.scenario
        if scn.grid.is2d and scn.output.pressure_parts:
            from .pressure import decompose_pressure
            parts = decompose_pressure(st, scn)
            np.savez(self.dir / f"pressure_{st.step:08d}.npz", p1=parts.p1, p2=parts.p2,
                     p3=parts.p3, total=parts.total, p3_direct=parts.p3_direct)

    def finish(self, rows) -> None:
        with open(self.dir / "index.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("step", "t", "file"))
            for step, t, name in self.index:
                w.writerow((step, repr(t), name))
        write_energy_csv(rows, self.dir / "energy.csv")


def load_run(out_dir):
    """Read ``(scenario, states, rows)`` back from a run directory.

    Raises
    ------
    InputError
        Missing run files.
    CheckpointError
        Corrupt dumps.
    """
    d = Path(out_dir)
    needed = ("scenario.json", "index.csv", "energy.csv")
    missing = [n for n in needed if not (d / n).is_file()]
    if missing:
        raise InputError(f"{d} is not a run directory (missing {', '.join(missing)})")
    scenario = load_scenario(d / "scenario.json")
    states = []
    with open(d / "index.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            st = checkpoint_load(d / row["file"], scenario.grid)
            if st.step != int(row["step"]):
                raise CheckpointError(f"{row['file']}: step {st.step} does not match index")
            states.append(st)
    rows = read_energy_csv(d / "energy.csv")
    return scenario, states, rows
