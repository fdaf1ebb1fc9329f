"""Invariant monitors, scaling harness, convergence studies and the run report."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core import (BoundarySpec, FieldExpr, Formulation, Grid, RegLevels, Scenario, SimState,
                   Splitting, WallKind, WallSpec, scenario_notes)
from .energy import energy_identity
from .errors import KolmoError, ScalingError
from .operators import tridiag_solve
from .stepper import RunResult, run

__all__ = [
    "CheckRecord",
    "DiagnosticsReport",
    "check_bounds",
    "ScalingExponents",
    "scaling_transform",
    "check_scaling_commutation",
    "ConvergenceTable",
    "convergence_study",
    "manufactured_study",
    "FormulationComparison",
    "compare_formulations",
    "cascade_study",
    "build_report",
    "homogeneous_solution",
]

BOUND_TOL = 1e-9


@dataclass
class CheckRecord:
    """Outcome of one monitored check.

    ``worst`` is the worst observed value of the monitored quantity and
    ``tolerance`` the threshold it is compared against; the comparison
    direction is part of the check. Informational records never fail a run.
    """

    name: str
    tag: str
    worst: float
    tolerance: float
    passed: bool
    where: str | None = None
    when: float | None = None
    informational: bool = False
    detail: str = ""


@dataclass
class DiagnosticsReport:
    """Per-check records plus budgets, tables and notes of one run or study."""

    name: str = "run"
    records: list = field(default_factory=list)
    budgets: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def add(self, rec: CheckRecord) -> None:
        if any(r.name == rec.name for r in self.records):
            raise ValueError(f"check {rec.name!r} recorded twice")
        self.records.append(rec)

    def get(self, name: str) -> CheckRecord:
        for r in self.records:
            if r.name == name:
                return r
        raise KeyError(name)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records if not r.informational)

    @property
    def failures(self) -> list:
        return [r for r in self.records if not r.passed and not r.informational]

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed,
                "records": [asdict(r) for r in self.records],
                "budgets": dict(self.budgets), "tables": dict(self.tables),
                "notes": list(self.notes)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DiagnosticsReport":
        raw = json.loads(text)
        recs = [CheckRecord(**r) for r in raw["records"]]
        return cls(raw["name"], recs, raw["budgets"], raw["tables"], raw["notes"])

    def to_text(self) -> str:
        lines = [f"report: {self.name}", f"status: {'PASS' if self.passed else 'FAIL'}", ""]
        for r in self.records:
            status = "info" if r.informational else ("PASS" if r.passed else "FAIL")
            loc = []
            if r.where:
                loc.append(r.where)
            if r.when is not None:
                loc.append(f"t={r.when:.6g}")
            extra = f" [{', '.join(loc)}]" if loc else ""
            lines.append(f"{status:4s}  {r.name:<22s} ({r.tag}) worst={r.worst:.6e} "
                         f"tol={r.tolerance:.1e}{extra}")
            if r.detail:
                lines.append(f"      {r.detail}")
        if self.budgets:
            lines += ["", "budgets:"]
            lines += [f"  {k} = {v!r}" for k, v in sorted(self.budgets.items())]
        for name, rows in sorted(self.tables.items()):
            lines += ["", f"table {name}:"]
            lines += ["  " + json.dumps(row, sort_keys=True) for row in rows]
        if self.notes:
            lines += ["", "notes:"] + [f"  {n}" for n in self.notes]
        return "\n".join(lines) + "\n"


# bounds -----------------------------------------------------------------------

def _as_states(trajectory):
    if isinstance(trajectory, RunResult):
        return trajectory.states
    return list(trajectory)


def check_bounds(trajectory, bounds: BoundarySpec, k: float = math.inf,
                 kappa2: float = 1.0, tol: float = BOUND_TOL) -> list:
    """Margins of the omega bounds and of the b floor over a trajectory.

    Parameters
    ----------
    trajectory : RunResult, sequence of SimState, or sequence of energy rows
    bounds : BoundarySpec
        Supplies ``omega_min`` and ``omega_max``.
    k : float
        Viscosity level; the b floor ``exp(-t omega_max) / k`` is checked
        when finite.
    kappa2 : float
        Sink constant; the lower omega bound decays with
        ``max(kappa2, 1) omega_max``.

    Returns
    -------
    list of CheckRecord
        ``omega_upper`` (``omega_max - omega``), ``omega_lower`` and, at
        finite ``k``, ``b_floor``; each passes iff its worst margin is
        ``>= -tol``.
    """
    items = _as_states(trajectory)
    if not items:
        raise ValueError("empty trajectory")
    wmax, wmin = bounds.omega_max, bounds.omega_min
    rate = max(kappa2, 1.0) * wmax
    worst = {"omega_upper": (math.inf, None, None), "omega_lower": (math.inf, None, None),
             "b_floor": (math.inf, None, None)}

    def update(name, margin, where, t):
        if margin < worst[name][0] or (math.isnan(margin) and not math.isnan(worst[name][0])):
            worst[name] = (margin, where, t)

    for it in items:
        if isinstance(it, SimState):
            t = it.t
            j = np.unravel_index(int(np.argmax(it.omega)), it.omega.shape)
            update("omega_upper", wmax - float(it.omega[j]), _cell(j, it), t)
            j = np.unravel_index(int(np.argmin(it.omega)), it.omega.shape)
            update("omega_lower", float(it.omega[j]) - wmin * math.exp(-rate * t), _cell(j, it), t)
            j = np.unravel_index(int(np.argmin(it.b)), it.b.shape)
            # argmax/argmin land on the first NaN, so NaNs surface as NaN margins
            bmin, where_b = float(it.b[j]), _cell(j, it)
        else:
            t = it["t"]
            where_b = f"step {it['step']}"
            update("omega_upper", wmax - it["omega_max"], where_b, t)
            update("omega_lower", it["omega_min"] - wmin * math.exp(-rate * t), where_b, t)
            bmin = it["b_min"]
        if math.isfinite(k):
            update("b_floor", bmin - math.exp(-wmax * t) / k, where_b, t)
    out = []
    for name, tag in (("omega_upper", "minmaxokT"), ("omega_lower", "minmaxokT"),
                      ("b_floor", "minbk")):
        if name == "b_floor" and not math.isfinite(k):
            continue
        m, where, t = worst[name]
        ok = bool(m >= -tol)
        out.append(CheckRecord(name, tag, float(m), tol, ok, where, t))
    return out


def _cell(j, st: SimState) -> str:
    return f"step {st.step} cell (j={int(j[0])}, i={int(j[1])})"


# scaling ------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingExponents:
    """Scale factor ``theta`` and integer exponents ``a`` (time) and ``b_exp`` (space).

    Fields map as ``v -> theta^(a-b) v``, ``p, b -> theta^(2(a-b))``,
    ``omega -> theta^a omega``; time shrinks by ``theta^a`` and lengths
    by ``theta^b``.
    """

    theta: float
    a: int = 1
    b_exp: int = 0

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")

    @property
    def power_of_two(self) -> bool:
        m, _ = math.frexp(self.theta)
        return m == 0.5

    @property
    def exact(self) -> bool:
        """Every factor is exact in binary floating point."""
        return self.power_of_two and isinstance(self.a, int) and isinstance(self.b_exp, int)

    def factor(self, p) -> float:
        return float(self.theta ** p)

    @property
    def velocity(self) -> float:
        return self.factor(self.a - self.b_exp)

    @property
    def energy(self) -> float:
        return self.factor(2 * (self.a - self.b_exp))

    @property
    def frequency(self) -> float:
        return self.factor(self.a)

    @property
    def time(self) -> float:
        return self.factor(self.a)

    @property
    def space(self) -> float:
        return self.factor(self.b_exp)

    def inverse(self) -> "ScalingExponents":
        return ScalingExponents(1.0 / self.theta, self.a, self.b_exp)


def _scale_state(st: SimState, e: ScalingExponents) -> SimState:
    return SimState(st.t / e.time, st.step, st.u * e.velocity, st.v * e.velocity,
                    st.b * e.energy, st.omega * e.frequency, st.p * e.energy,
                    st.wall_s * e.energy, st.wall_vt * e.velocity)


def _scale_wall(w: WallSpec, e: ScalingExponents) -> WallSpec:
    law = w.law.scaled(e.velocity, e.energy)
    b = None if w.b is None else w.b.rescaled(e.energy, e.time, e.space)
    om = None if w.omega is None else w.omega.rescaled(e.frequency, e.time, e.space)
    return replace(w, b=b, omega=om, law=law)


def _scale_scenario(s: Scenario, e: ScalingExponents) -> Scenario:
    if e.theta != 1.0 and not s.levels.all_infinite:
        raise ScalingError("finite truncation levels are not invariant under the scaling")
    g = s.grid
    grid = replace(g, height=g.height / e.space, length=g.length / e.space)
    bd = s.boundary
    boundary = replace(bd, bottom=_scale_wall(bd.bottom, e), top=_scale_wall(bd.top, e),
                       b_min=bd.b_min * e.energy, b_max=bd.b_max * e.energy,
                       omega_min=bd.omega_min * e.frequency, omega_max=bd.omega_max * e.frequency)
    prandtl = s.prandtl
    if prandtl is not None:
        prandtl = replace(prandtl, ell=prandtl.ell / e.space)

    def fe(f: FieldExpr, value: float) -> FieldExpr:
        return f.rescaled(value, e.time, e.space)

    return replace(
        s, grid=grid, boundary=boundary,
        init_u=fe(s.init_u, e.velocity), init_v=fe(s.init_v, e.velocity),
        init_b=fe(s.init_b, e.energy), init_omega=fe(s.init_omega, e.frequency),
        t_end=s.t_end / e.time, scheme=replace(s.scheme, dt=s.scheme.dt / e.time),
        prandtl=prandtl)


def scaling_transform(obj, e: ScalingExponents):
    """Apply the scaling family to a state, a scenario, a run or a list of states.

    Raises
    ------
    ScalingError
        The object is a scenario with finite truncation levels (and
        ``theta != 1``), or of an unsupported type.
    """
    if isinstance(obj, SimState):
        return _scale_state(obj, e)
    if isinstance(obj, Scenario):
        return _scale_scenario(obj, e)
    if isinstance(obj, RunResult):
        return [_scale_state(s, e) for s in obj.states]
    if isinstance(obj, (list, tuple)) and all(isinstance(s, SimState) for s in obj):
        return [_scale_state(s, e) for s in obj]
    raise ScalingError(f"cannot rescale an object of type {type(obj).__name__}")


def _max_rel(a: np.ndarray, b: np.ndarray, scale: float | None = None) -> float:
    if scale is None:
        scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    diff = float(np.max(np.abs(a - b)))
    if diff == 0.0:
        return 0.0
    return diff / scale if scale > 0 else math.inf


# fields sharing physical units share a yardstick, so a field that is zero up
# to roundoff (a free-slip traction, say) is not judged against its own noise
_UNITS = {"t": ("t",), "u": ("u", "v", "wall_vt"), "v": ("u", "v", "wall_vt"),
          "wall_vt": ("u", "v", "wall_vt"), "b": ("b", "p", "wall_s"),
          "p": ("b", "p", "wall_s"), "wall_s": ("b", "p", "wall_s"), "omega": ("omega",)}


def _unit_scale(st: SimState, f: str) -> float:
    return max(float(np.max(np.abs(np.asarray(getattr(st, g), dtype=float))))
               for g in _UNITS[f])


def check_scaling_commutation(scenario: Scenario, e: ScalingExponents,
                              bit_exact: bool | None = None) -> CheckRecord:
    """Compare ``solve(transform(s))`` with ``transform(solve(s))`` snapshot by snapshot.

    Bit-exact mode (default when ``e.exact``) requires identical bits in
    every field; otherwise the worst max-norm gap, relative to the largest
    field of the same units, must be ``<= 1e-10``.
    """
    if bit_exact is None:
        bit_exact = e.exact
    if bit_exact and not e.exact:
        raise ScalingError("bit-exact mode needs a power-of-two theta and integer exponents")
    ref = scaling_transform(run(scenario), e)
    got = run(scaling_transform(scenario, e)).states
    tol = 0.0 if bit_exact else 1e-10
    name = "scaling_bitexact" if bit_exact else "scaling"
    if len(ref) != len(got):
        return CheckRecord(name, "scaling", math.inf, tol, False,
                           detail=f"{len(ref)} vs {len(got)} snapshots")
    worst, where, when = 0.0, None, None
    for a, b in zip(ref, got):
        for f in ("t",) + SimState.FIELDS:
            x, y = np.asarray(getattr(a, f), dtype=float), np.asarray(getattr(b, f), dtype=float)
            gap = _max_rel(x, y, max(_unit_scale(a, f), _unit_scale(b, f)))
            differs = x.tobytes() != y.tobytes()
            if bit_exact and differs and where is None:
                where, when = f"step {a.step} field {f}", a.t
            if gap > worst:
                worst = gap
                if not bit_exact:
                    where, when = f"step {a.step} field {f}", a.t
    ok = where is None if bit_exact else worst <= tol
    detail = f"theta={e.theta:g} a={e.a} b={e.b_exp} ({len(ref)} snapshots)"
    return CheckRecord(name, "scaling", worst, tol, ok, where, when, detail=detail)


# convergence ----------------------------------------------------------------------

def homogeneous_solution(b0: float, omega0: float, t, kappa2: float = 1.0):
    """Closed-form spatially homogeneous decay ``(b(t), omega(t))``.

    ``omega' = -kappa2 omega^2`` and ``b' = -b omega`` give
    ``omega = omega0 / (1 + kappa2 omega0 t)`` and
    ``b = b0 (1 + kappa2 omega0 t)^(-1 / kappa2)``.
    """
    q = 1.0 + kappa2 * omega0 * np.asarray(t, dtype=float)
    return b0 * q ** (-1.0 / kappa2), omega0 / q


@dataclass
class ConvergenceTable:
    """Rows ``(level, h, error, order)``; ``order`` is None on the first row."""

    kind: str
    rows: list

    @property
    def orders(self) -> list:
        return [r["order"] for r in self.rows if r["order"] is not None]

    @property
    def min_order(self) -> float:
        return min(self.orders)


def _orders(hs, errs):
    rows = []
    for i, (h, e) in enumerate(zip(hs, errs)):
        order = None
        if i:
            prev = errs[i - 1]
            order = math.log(prev / e) / math.log(hs[i - 1] / h) if e > 0 and prev > 0 else math.inf
        rows.append({"level": i, "h": h, "error": e, "order": order})
    return rows


def _homogeneous_data(s: Scenario):
    if s.grid.is2d:
        return None
    if any(w.kind is WallKind.GAMMA for w in s.boundary.walls):
        return None
    consts = [f.source for f in (s.init_u, s.init_v, s.init_b, s.init_omega)]
    if not all(isinstance(c, (int, float)) for c in consts):
        return None
    fe = (s.init_u, s.init_v, s.init_b, s.init_omega)
    u, v, b, om = (float(f.source) * f.scale for f in fe)
    if u != 0 or v != 0 or not s.levels.all_infinite or s.model != "kolmogorov":
        return None
    return b, om


def _run_many(scenarios, jobs: int = 1):
    if jobs <= 1 or len(scenarios) < 2:
        return [run(s) for s in scenarios]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run, scenarios))


def convergence_study(scenario: Scenario, levels: int = 3, ratio: int = 2,
                      jobs: int = 1) -> ConvergenceTable:
    """Temporal convergence by halving ``dt``.

    Homogeneous scenarios are measured against the closed-form decay at
    ``t_end``; any other scenario uses successive differences of the final
    ``b`` and ``u`` (self-convergence, one level fewer).
    """
    if levels < 3:
        raise ValueError("need at least three levels")
    hs = [scenario.dt / ratio**i for i in range(levels)]
    scns = [scenario.with_scheme(dt=h) for h in hs]
    finals = [r.final for r in _run_many(scns, jobs)]
    data = _homogeneous_data(scenario)
    if data is not None:
        kappa2 = scenario.params.effective().kappa2
        errs = []
        for st in finals:
            b_ex, om_ex = homogeneous_solution(data[0], data[1], st.t, kappa2)
            errs.append(max(float(np.max(np.abs(st.b - b_ex))),
                            float(np.max(np.abs(st.omega - om_ex)))))
        return ConvergenceTable("temporal", _orders(hs, errs))
    errs = [max(float(np.max(np.abs(a.b - b.b))), float(np.max(np.abs(a.u - b.u))))
            for a, b in zip(finals, finals[1:])]
    return ConvergenceTable("temporal-self", _orders(hs[:-1], errs))


def _mms_fields(y):
    b = 1.0 + 0.5 * np.sin(np.pi * y)
    db = 0.5 * np.pi * np.cos(np.pi * y)
    d2b = -0.5 * np.pi**2 * np.sin(np.pi * y)
    om = 1.0 + y
    mu = b / om
    dmu = (db * om - b) / om**2
    source = -(dmu * db + mu * d2b)
    return b, om, source


def manufactured_study(ladder=(16, 32, 64, 128), kappa3: float = 1.0,
                       tol: float = 1e-13, max_iter: int = 200) -> ConvergenceTable:
    """Spatial order of the steady b-diffusion operator with frozen omega.

    Solves ``-div(kappa3 (b / omega) grad b) = f`` by Picard iteration with
    ``b = 1 + sin(pi y) / 2``, ``omega = 1 + y`` and Dirichlet data on both
    walls; errors are max-norm against the exact profile.
    """
    from .operators import diffusion_stencil, face_y
    hs, errs = [], []
    for ny in ladder:
        g = Grid("channel1d", ny)
        y = g.yc[:, None]
        b_ex, om, f = _mms_fields(y)
        walls_b = [np.array([1.0]), np.array([1.0])]
        walls_om = [np.array([1.0]), np.array([2.0])]
        om_y = face_y(om, walls_om)
        b = np.ones_like(b_ex)
        for _ in range(max_iter):
            cy = kappa3 * face_y(b, walls_b) / om_y
            st = diffusion_stencil(cy, None, walls_b, g)
            rhs = -(kappa3 * f) - st.r
            new = tridiag_solve(st.S[1:, 0], st.C[:, 0], st.N[:-1, 0], rhs[:, 0]).reshape(b.shape)
            done = float(np.max(np.abs(new - b))) <= tol
            b = new
            if done:
                break
        hs.append(g.dy)
        errs.append(float(np.max(np.abs(b - b_ex))))
    return ConvergenceTable("spatial", _orders(hs, errs))


# formulations -------------------------------------------------------------------------

def _restrict(a: np.ndarray, grid: Grid, factor: int = 2) -> np.ndarray:
    ny, nx = a.shape
    out = a.reshape(ny // factor, factor, nx).mean(axis=1)
    if grid.is2d:
        out = out.reshape(ny // factor, nx // factor, factor).mean(axis=2)
    return out


@dataclass
class FormulationComparison:
    """Max-norm gap between b-form and E-form runs and its refinement yardstick."""

    discrepancy: float
    estimate: float
    ratio: float
    b_min: float
    applicable: bool
    factor: float = 10.0

    @property
    def passed(self) -> bool:
        return (not self.applicable) or self.ratio <= self.factor

    def record(self) -> CheckRecord:
        detail = (f"discrepancy={self.discrepancy:.3e} estimate={self.estimate:.3e} "
                  f"b_min={self.b_min:.3e}")
        if not self.applicable:
            detail = "not applicable: b floor violated; " + detail
        return CheckRecord("formulations", "BKE", self.ratio, self.factor, self.passed,
                           informational=not self.applicable, detail=detail)


def compare_formulations(scenario: Scenario, b_floor: float = 1e-8,
                         factor: float = 10.0, jobs: int = 1) -> FormulationComparison:
    """Compare b-form and E-form (Lie) trajectories.

    The yardstick is the b-form refinement estimate
    ``max |X(h) - R X(h/2)|`` over ``b`` and ``u`` with ``R`` the cell
    average restriction; both space and time are refined.
    """
    lie = scenario.with_scheme(splitting=Splitting.LIE)
    base_b = lie.with_scheme(formulation=Formulation.BFORM)
    base_e = lie.with_scheme(formulation=Formulation.EFORM)
    fine_b = base_b.refined(2)
    rb, re_, rf = _run_many([base_b, base_e, fine_b], jobs)
    b_min = min(min(r["b_min"] for r in rb.rows), min(r["b_min"] for r in re_.rows))
    fb, fe_, ff = rb.final, re_.final, rf.final
    disc = max(float(np.max(np.abs(fb.b - fe_.b))), float(np.max(np.abs(fb.u - fe_.u))))
    est = max(float(np.max(np.abs(fb.b - _restrict(ff.b, fine_b.grid)))),
              float(np.max(np.abs(fb.u - _restrict(ff.u, fine_b.grid)))))
    if disc == 0.0:
        ratio = 0.0
    else:
        ratio = disc / est if est > 0 else math.inf
    return FormulationComparison(disc, est, ratio, b_min, bool(b_min >= b_floor), factor)


# cascade --------------------------------------------------------------------------------

def cascade_study(scenario: Scenario, ks=(10.0, 100.0, 1000.0), level: str = "k",
                  jobs: int = 1) -> DiagnosticsReport:
    """Sweep one truncation level and report successive trajectory differences.

    Trends are informational: a non-decreasing difference is flagged, never failed.
    """
    scns = [replace(scenario, levels=replace(scenario.levels, **{level: float(k)}))
            for k in ks]
    results = _run_many(scns, jobs)
    rep = DiagnosticsReport(f"{scenario.name}-cascade-{level}")
    rows = []
    prev_diff = math.inf
    monotone = True
    for i, (k, r) in enumerate(zip(ks, results)):
        last = r.rows[-1]
        row = {"level": level, "value": float(k), "kinetic": last["kinetic"],
               "turbulent": last["turbulent"], "dissipation": last["dissipation"],
               "ln_b": max(x["ln_b"] for x in r.rows), "diff": None}
        if i:
            a, b = results[i - 1].final, r.final
            diff = max(float(np.max(np.abs(a.b - b.b))), float(np.max(np.abs(a.u - b.u))),
                       float(np.max(np.abs(a.omega - b.omega))))
            row["diff"] = diff
            if diff > prev_diff:
                monotone = False
            prev_diff = diff
        rows.append(row)
    rep.tables["cascade"] = rows
    diffs = [r["diff"] for r in rows if r["diff"] is not None]
    rep.add(CheckRecord("cascade_trend", "cascade", diffs[-1] if diffs else 0.0, 0.0,
                        monotone, informational=True,
                        detail="successive differences decreasing" if monotone
                        else "non-monotone successive differences"))
    return rep


# report ------------------------------------------------------------------------------

def _finite_fields(states) -> CheckRecord:
    for st in states:
        for f in SimState.FIELDS:
            arr = getattr(st, f)
            bad = np.argwhere(~np.isfinite(arr))
            if bad.size:
                j, i = (int(x) for x in bad[0])
                return CheckRecord("finite_fields", "state", math.nan, 0.0, False,
                                   f"step {st.step} field {f} cell (j={j}, i={i})", st.t)
    return CheckRecord("finite_fields", "state", 0.0, 0.0, True)


def _worst_row(rows, key, sign=1.0):
    best = None
    for r in rows:
        v = r[key]
        if best is None or (sign * v > sign * best[key]) or (math.isnan(v)
                                                             and not math.isnan(best[key])):
            best = r
    return best


def build_report(scenario: Scenario, states, rows) -> DiagnosticsReport:
    """Assemble the run report from snapshots and energy rows.

    Pure and deterministic: it only reads its arguments, so rebuilding it
    from the dumped trajectory reproduces it exactly.
    """
    rep = DiagnosticsReport(scenario.name)
    states = list(states)
    rep.add(_finite_fields(states))
    params = scenario.params.effective()
    prandtl = scenario.model == "prandtl"
    for rec in check_bounds(rows, scenario.boundary, scenario.levels.k, params.kappa2):
        if prandtl and rec.name.startswith("omega"):
            rec.informational = True
            rec.detail = "omega is slaved to b in the one-equation model"
        rep.add(rec)
    lo = _worst_row(rows, "b_min", -1.0)
    rep.add(CheckRecord("b_nonnegative", "TKE", lo["b_min"], 0.0, bool(lo["b_min"] >= 0),
                        f"step {lo['step']}", lo["t"]))
    budget = energy_identity(rows)
    worst_abs = max(rows, key=lambda r: abs(r["residual"]) if math.isfinite(r["residual"])
                    else math.inf)
    rep.add(CheckRecord("energy_identity", "Ee1", budget.residual, budget.tolerance,
                        budget.passed, f"step {worst_abs['step']}", worst_abs["t"]))
    steps = rows[1:]
    if steps:
        w = min(steps, key=lambda r: r["defect_min"] / max(r["defect_scale"], 1e-300)
                if math.isfinite(r["defect_min"]) else -math.inf)
        scale = max(r["defect_scale"] for r in steps)
        tol = 1e-12 * max(scale, 1.0)
        dmin = min(r["defect_min"] for r in steps)
        eform = scenario.scheme.formulation is Formulation.EFORM
        rec = CheckRecord("suitable_defect", "TKI", dmin, tol,
                          bool(dmin >= -tol), f"step {w['step']}", w["t"],
                          informational=eform)
        if eform:
            rec.detail = "E-form defect is a discretization residual; gate via refinement"
        rep.add(rec)
        wr = _worst_row(steps, "wall_residual", 1.0)
        rep.add(CheckRecord("wall_law", "bc2", wr["wall_residual"], 1e-10,
                            bool(wr["wall_residual"] <= 1e-10), f"step {wr['step']}", wr["t"]))
        if scenario.grid.is2d:
            dv = _worst_row(steps, "div_max", 1.0)
            rep.add(CheckRecord("divergence", "BM", dv["div_max"], 1e-10,
                                bool(dv["div_max"] <= 1e-10), f"step {dv['step']}", dv["t"]))
    keys = ("ln_b", "budget_dissipation", "budget_grad_b", "budget_grad_omega", "budget_wall")
    vals = {k: [r[k] for r in rows] for k in keys}
    bad = [k for k in keys if not all(math.isfinite(x) for x in vals[k])]
    rep.add(CheckRecord("budgets_finite", "finalap", float(len(bad)), 0.0, not bad,
                        detail=("non-finite: " + ", ".join(bad)) if bad else ""))
    rep.budgets = {
        "sup_ln_b": max(vals["ln_b"]),
        "dissipation_weighted": rows[-1]["budget_dissipation"],
        "grad_b_weighted": rows[-1]["budget_grad_b"],
        "grad_omega_weighted": rows[-1]["budget_grad_omega"],
        "wall_work": rows[-1]["budget_wall"],
        "dissipation": budget.dissipation,
        "sink": budget.sink,
        "numerical_dissipation": budget.numerical_dissipation,
        "kinetic_final": budget.kinetic,
        "turbulent_final": budget.turbulent,
    }
    if scenario.grid.is2d and scenario.output.pressure_parts and states:
        _pressure_records(rep, scenario, states[-1])
    rep.notes = scenario_notes(scenario)
    return rep


def _pressure_records(rep: DiagnosticsReport, scenario: Scenario, st: SimState) -> None:
    from .pressure import decompose_pressure
    try:
        parts = decompose_pressure(st, scenario)
    except KolmoError as exc:
        rep.add(CheckRecord("pressure_parts", "decomp", math.nan, 0.0, False, detail=str(exc)))
        return
    means = parts.mean_defects()
    worst_mean = max(means.values())
    rep.add(CheckRecord("pressure_mean", "decomp", worst_mean, 1e-12,
                        bool(worst_mean <= 1e-12), f"step {st.step}", st.t))
    sd = parts.subtraction_defect()
    rep.add(CheckRecord("pressure_sum", "decomp", sd, 1e-10, bool(sd <= 1e-10),
                        f"step {st.step}", st.t))
    hd = parts.harmonic_defect()
    rep.add(CheckRecord("pressure_harmonic", "prk2", hd, 1e-8, bool(hd <= 1e-8),
                        f"step {st.step}", st.t))
    rep.add(CheckRecord("pressure_direct_gap", "prk2", parts.direct_gap(), 0.0, True,
                        f"step {st.step}", st.t, informational=True,
                        detail="p3 by subtraction vs p3 from the wall source (measurement)"))

