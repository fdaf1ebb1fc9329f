"""Parameters, grids, state, boundary data, scenarios and checkpoints."""

from __future__ import annotations

import functools
import math
import struct
import zlib
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CheckpointError, ScenarioError
from .slipbc import SlipLaw

__all__ = [
    "ModelParams",
    "RegLevels",
    "Stage",
    "Mode",
    "Grid",
    "FieldExpr",
    "WallKind",
    "WallSpec",
    "BoundarySpec",
    "Splitting",
    "Formulation",
    "SchemeOptions",
    "OutputPlan",
    "PrandtlParams",
    "Scenario",
    "SimState",
    "Violation",
    "validate_scenario",
    "scenario_notes",
    "initial_state",
    "divergence",
    "checkpoint_save",
    "checkpoint_load",
]

INF = math.inf


@dataclass(frozen=True)
class ModelParams:
    """Material constants.

    With ``normalized=True`` the operators see ``2 nu0 = kappa1 = ... =
    kappa4 = 1`` regardless of the stored values.
    """

    nu0: float = 0.5
    kappa1: float = 1.0
    kappa2: float = 1.0
    kappa3: float = 1.0
    kappa4: float = 1.0
    normalized: bool = False

    def __post_init__(self):
        for name in ("nu0", "kappa1", "kappa2", "kappa3", "kappa4"):
            val = getattr(self, name)
            if not (val > 0 and math.isfinite(val)):
                raise ValueError(f"{name} must be positive and finite, got {val!r}")

    @classmethod
    def kolmogorov(cls, nu0: float = 0.5, kappa1: float = 1.0,
                   kappa3: float = 1.0) -> "ModelParams":
        """Preset with ``kappa2 = 7/11`` and ``kappa4 = 2 nu0``."""
        return cls(nu0=nu0, kappa1=kappa1, kappa2=7.0 / 11.0, kappa3=kappa3,
                   kappa4=2.0 * nu0)

    def effective(self) -> "ModelParams":
        if self.normalized:
            return ModelParams(nu0=0.5)
        return self

    @property
    def energy_coefficient(self) -> float:
        """Weight of ``b`` in the total energy, ``2 nu0 / kappa4``."""
        p = self.effective()
        return 2.0 * p.nu0 / p.kappa4


class Stage(str, Enum):
    FULL = "full"
    K = "k"
    NK = "nk"
    MNK = "mnk"


@dataclass(frozen=True)
class RegLevels:
    """Regularization levels ``(k, n, m)``; ``inf`` disables a truncation."""

    k: float = INF
    n: float = INF
    m: float = INF

    def __post_init__(self):
        for name in ("k", "n", "m"):
            if not getattr(self, name) > 0:
                raise ValueError(f"level {name} must be positive")

    @property
    def stage(self) -> Stage:
        if math.isfinite(self.m):
            return Stage.MNK
        if math.isfinite(self.n):
            return Stage.NK
        if math.isfinite(self.k):
            return Stage.K
        return Stage.FULL

    @property
    def all_infinite(self) -> bool:
        return not any(math.isfinite(x) for x in (self.k, self.n, self.m))


class Mode(str, Enum):
    CHANNEL1D = "channel1d"
    CHANNEL2D = "channel2d"


@dataclass(frozen=True)
class Grid:
    """Uniform channel grid with walls at ``y = 0`` and ``y = height``.

    Scalars sit at cell centers with shape ``(ny, nx)``. The streamwise
    velocity ``u`` sits on x-faces, shape ``(ny, nx)`` (periodic in x);
    the wall-normal velocity ``v`` on y-faces, shape ``(ny + 1, nx)``.
    The 1D channel is the case ``nx = 1`` with ``v = 0``.
    """

    mode: Mode
    ny: int
    nx: int = 1
    height: float = 1.0
    length: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.ny < 4:
            raise ValueError("ny must be at least 4")
        if self.mode is Mode.CHANNEL1D and self.nx != 1:
            raise ValueError("the 1D channel has nx = 1")
        if self.mode is Mode.CHANNEL2D and self.nx < 1:
            raise ValueError("nx must be positive")
        if not (self.height > 0 and self.length > 0):
            raise ValueError("height and length must be positive")

    @property
    def is2d(self) -> bool:
        return self.mode is Mode.CHANNEL2D

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def dy(self) -> float:
        return self.height / self.ny

    @property
    def dx(self) -> float:
        return self.length / self.nx

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dy

    @property
    def yc(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.dy

    @property
    def yf(self) -> np.ndarray:
        return np.arange(self.ny + 1) * self.dy

    @property
    def xc(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.dx

    @property
    def xf(self) -> np.ndarray:
        return np.arange(self.nx) * self.dx


_EXPR_NAMESPACE = {
    name: getattr(np, name)
    for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "tanh", "sinh", "cosh",
                 "arctan", "abs", "where", "minimum", "maximum", "pi", "e")
}


@functools.lru_cache(maxsize=256)
def _compile(expr: str):
    try:
        return compile(expr, "<expr>", "eval")
    except SyntaxError as exc:
        raise ScenarioError(f"cannot parse expression {expr!r}: {exc.msg}") from None


@dataclass(frozen=True)
class FieldExpr:
    """Closed-form or tabulated field data.

    Evaluates ``scale * f(time_scale * t, space_scale * x, space_scale * y)``.
    ``source`` is an expression string in ``t, x, y``, a number, or a
    tabulated nested tuple matching the target grid points.
    """

    source: str | float | tuple
    scale: float = 1.0
    time_scale: float = 1.0
    space_scale: float = 1.0

    @property
    def tabulated(self) -> bool:
        return isinstance(self.source, tuple)

    def evaluate(self, t: float, x, y) -> np.ndarray:
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        if self.tabulated:
            arr = np.asarray(self.source, dtype=float)
            if arr.size != x.size:
                raise ScenarioError(
                    f"tabulated field has {arr.size} values, grid needs {x.size}")
            return self.scale * arr.reshape(x.shape)
        if isinstance(self.source, (int, float)):
            return np.full(x.shape, self.scale * float(self.source))
        ns = dict(_EXPR_NAMESPACE)
        ns.update(t=self.time_scale * t, x=self.space_scale * x, y=self.space_scale * y)
        try:
            val = eval(_compile(self.source), {"__builtins__": {}}, ns)
        except ScenarioError:
            raise
        except Exception as exc:
            raise ScenarioError(f"cannot evaluate {self.source!r}: {exc}") from None
        return self.scale * np.broadcast_to(np.asarray(val, dtype=float), x.shape).copy()

    def rescaled(self, value: float, time: float, space: float) -> "FieldExpr":
        return replace(self, scale=self.scale * value, time_scale=self.time_scale * time,
                       space_scale=self.space_scale * space)


class WallKind(str, Enum):
    GAMMA = "gamma"      # Dirichlet data for b and omega
    GAMMA_C = "gammac"   # zero scalar flux


@dataclass(frozen=True)
class WallSpec:
    kind: WallKind = WallKind.GAMMA_C
    b: FieldExpr | None = None
    omega: FieldExpr | None = None
    law: SlipLaw = field(default_factory=SlipLaw.free)

    def __post_init__(self):
        object.__setattr__(self, "kind", WallKind(self.kind))
        if self.kind is WallKind.GAMMA and (self.b is None or self.omega is None):
            raise ValueError("a Dirichlet wall needs b and omega data")


@dataclass(frozen=True)
class BoundarySpec:
    """Walls at ``y = 0`` (bottom) and ``y = height`` (top) with data bounds."""

    bottom: WallSpec = field(default_factory=WallSpec)
    top: WallSpec = field(default_factory=WallSpec)
    b_min: float = 1e-3
    b_max: float = 1e3
    omega_min: float = 1e-3
    omega_max: float = 1e3

    @property
    def walls(self) -> tuple[WallSpec, WallSpec]:
        return (self.bottom, self.top)


class Splitting(str, Enum):
    LIE = "lie"
    STRANG = "strang"


class Formulation(str, Enum):
    BFORM = "bform"
    EFORM = "eform"


@dataclass(frozen=True)
class SchemeOptions:
    dt: float = 1e-3
    splitting: Splitting = Splitting.LIE
    formulation: Formulation = Formulation.BFORM
    cfl_guard: float = 1.0
    max_wall_iters: int = 200

    def __post_init__(self):
        object.__setattr__(self, "splitting", Splitting(self.splitting))
        object.__setattr__(self, "formulation", Formulation(self.formulation))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.cfl_guard <= 1:
            raise ValueError("cfl_guard must lie in (0, 1]")
        if self.max_wall_iters < 1:
            raise ValueError("max_wall_iters must be positive")


@dataclass(frozen=True)
class OutputPlan:
    snapshot_every: int = 10
    report_every: int = 1
    pressure_parts: bool = False


@dataclass(frozen=True)
class PrandtlParams:
    """Mixing length ``ell`` and constant ``c`` in ``omega = c sqrt(b) / ell``."""

    ell: float = 1.0
    c: float = 1.0

    def __post_init__(self):
        if not (self.ell > 0 and self.c > 0):
            raise ValueError("ell and c must be positive")


@dataclass(frozen=True)
class Scenario:
    grid: Grid
    params: ModelParams = field(default_factory=ModelParams)
    levels: RegLevels = field(default_factory=RegLevels)
    boundary: BoundarySpec = field(default_factory=BoundarySpec)
    init_u: FieldExpr = FieldExpr(0.0)
    init_v: FieldExpr = FieldExpr(0.0)
    init_b: FieldExpr = FieldExpr(1.0)
    init_omega: FieldExpr = FieldExpr(1.0)
    t_end: float = 1.0
    scheme: SchemeOptions = field(default_factory=SchemeOptions)
    output: OutputPlan = field(default_factory=OutputPlan)
    model: str = "kolmogorov"
    prandtl: PrandtlParams | None = None
    shift_initial_b: bool = True
    name: str = "run"

    @property
    def dt(self) -> float:
        return self.scheme.dt

    @property
    def n_steps(self) -> int:
        """Number of steps to reach ``t_end`` (the last one may overshoot)."""
        if self.t_end <= 0:
            return 0
        return int(math.ceil(self.t_end / self.dt * (1 - 1e-12)))

    def with_scheme(self, **kw) -> "Scenario":
        return replace(self, scheme=replace(self.scheme, **kw))

    def refined(self, factor: int = 2, time: bool = True) -> "Scenario":
        """Same problem with ``factor`` times more cells per direction.

        ``dt`` is divided by ``factor`` as well unless ``time`` is False.
        Tabulated initial data cannot be refined.
        """
        if any(f.tabulated for f in (self.init_u, self.init_v, self.init_b, self.init_omega)):
            raise ScenarioError("tabulated initial data cannot be refined")
        g = self.grid
        nx = g.nx * factor if g.is2d else 1
        grid = replace(g, ny=g.ny * factor, nx=nx)
        dt = self.dt / factor if time else self.dt
        return replace(self, grid=grid, scheme=replace(self.scheme, dt=dt))


@dataclass(eq=False)
class SimState:
    """Fields at one time level; see :class:`Grid` for the layout.

    ``==`` is bitwise equality of every field, ``t`` and ``step``.
    """

    t: float
    step: int
    u: np.ndarray
    v: np.ndarray
    b: np.ndarray
    omega: np.ndarray
    p: np.ndarray
    wall_s: np.ndarray
    wall_vt: np.ndarray

    FIELDS = ("u", "v", "b", "omega", "p", "wall_s", "wall_vt")

    def copy(self) -> "SimState":
        return SimState(self.t, self.step, *(getattr(self, f).copy() for f in self.FIELDS))

    def bit_equal(self, other: "SimState") -> bool:
        if self.step != other.step or _bits(self.t) != _bits(other.t):
            return False
        for name in self.FIELDS:
            a, b = getattr(self, name), getattr(other, name)
            if a.shape != b.shape or a.tobytes() != b.tobytes():
                return False
        return True

    def __eq__(self, other) -> bool:
        if not isinstance(other, SimState):
            return NotImplemented
        return self.bit_equal(other)

    __hash__ = None


def _bits(x: float) -> bytes:
    return struct.pack("<d", x)


@dataclass(frozen=True)
class Violation:
    tag: str
    message: str


def divergence(u: np.ndarray, v: np.ndarray, grid: Grid) -> np.ndarray:
    """Cell divergence of a staggered velocity (periodic in x)."""
    du = (np.roll(u, -1, axis=1) - u) / grid.dx
    dv = (v[1:] - v[:-1]) / grid.dy
    return du + dv


def _initial_fields(s: Scenario):
    g = s.grid
    yc, yf, xc, xf = g.yc, g.yf, g.xc, g.xf
    u = s.init_u.evaluate(0.0, xf[None, :], yc[:, None])
    v = s.init_v.evaluate(0.0, xc[None, :], yf[:, None])
    b = s.init_b.evaluate(0.0, xc[None, :], yc[:, None])
    om = s.init_omega.evaluate(0.0, xc[None, :], yc[:, None])
    return u, v, b, om


def wall_data(s: Scenario, t: float) -> tuple[list, list]:
    """Dirichlet values ``(b_wall, omega_wall)`` per wall; ``None`` on zero-flux walls."""
    xc = s.grid.xc
    bw, ow = [], []
    for wall, y in zip(s.boundary.walls, (0.0, s.grid.height)):
        if wall.kind is WallKind.GAMMA:
            yy = np.full_like(xc, y)
            bw.append(wall.b.evaluate(t, xc, yy))
            ow.append(wall.omega.evaluate(t, xc, yy))
        else:
            bw.append(None)
            ow.append(None)
    return bw, ow


def validate_scenario(s: Scenario, n_time_samples: int = 11) -> list[Violation]:
    """Check the discrete data against the modelling assumptions.

    Each violation carries a short tag naming the assumption it breaks:
    initial velocity, b or omega, wall data for b or omega, level
    preconditions, declared bounds, or time settings.
    """
    out: list[Violation] = []
    bd = s.boundary
    g = s.grid
    lv = s.levels
    if not (0 < bd.omega_min <= bd.omega_max < INF):
        out.append(Violation("bd3", "need 0 < omega_min <= omega_max < inf"))
    if not (0 < bd.b_min <= bd.b_max < INF):
        out.append(Violation("bd4", "need 0 < b_min <= b_max < inf"))
    if math.isfinite(lv.k) and bd.b_min > 0 and lv.k < 1.0 / bd.b_min:
        out.append(Violation("levels-k", f"k = {lv.k} is below 1/b_min = {1 / bd.b_min}"))
    if math.isfinite(lv.m) and lv.m < bd.omega_max:
        out.append(Violation("levels-m", f"m = {lv.m} is below omega_max = {bd.omega_max}"))
    if not (s.t_end >= 0 and math.isfinite(s.t_end)):
        out.append(Violation("time", "t_end must be finite and nonnegative"))
    if s.model == "prandtl" and g.is2d:
        out.append(Violation("model", "the one-equation model runs in the 1D channel only"))
    u, v, b, om = _initial_fields(s)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        out.append(Violation("Assv", "initial velocity is not finite"))
    elif g.is2d:
        wall_trace = max(np.max(np.abs(v[0])), np.max(np.abs(v[-1])))
        if wall_trace > 1e-12 * max(1.0, float(np.max(np.abs(v)))):
            out.append(Violation("Assv", f"initial normal velocity at walls is {wall_trace:.3g}"))
        vv = v.copy()
        vv[0] = vv[-1] = 0.0
        div = float(np.max(np.abs(divergence(u, vv, g))))
        scale = max(1.0, float(np.max(np.abs(u))), float(np.max(np.abs(v))))
        if div > 1e-10 * scale / min(g.dx, g.dy):
            out.append(Violation("Assv", f"initial velocity has discrete divergence {div:.3g}"))
    elif np.any(v != 0):
        out.append(Violation("Assv", "the 1D channel has no wall-normal velocity"))
    bad = np.argwhere(~(b > 0) | ~np.isfinite(b))
    if bad.size:
        j, i = bad[0]
        out.append(Violation("Assk", f"initial b must be positive with finite log; "
                                     f"b = {float(b[j, i])!r} at cell (j={j}, i={i})"))
    bad = np.argwhere(~((om >= bd.omega_min) & (om <= bd.omega_max)))
    if bad.size and s.model != "prandtl":
        j, i = bad[0]
        out.append(Violation("Asso", f"initial omega = {float(om[j, i])!r} at cell (j={j}, i={i}) "
                                     f"outside [{bd.omega_min}, {bd.omega_max}]"))
    times = np.linspace(0.0, max(s.t_end, 0.0), n_time_samples)
    seen = set()
    for t in times:
        bw, ow = wall_data(s, float(t))
        for side, (bv, ov) in enumerate(zip(bw, ow)):
            if bv is None:
                continue
            name = ("bottom", "top")[side]
            # first offending time per (tag, wall)
            if ("bd3", side) not in seen and np.any(~((ov >= bd.omega_min) & (ov <= bd.omega_max))):
                seen.add(("bd3", side))
                out.append(Violation("bd3", f"{name} wall omega leaves "
                                            f"[{bd.omega_min}, {bd.omega_max}] at t = {t:g}"))
            if ("bd4", side) not in seen and np.any(~((bv >= bd.b_min) & (bv <= bd.b_max))):
                seen.add(("bd4", side))
                out.append(Violation("bd4", f"{name} wall b leaves "
                                            f"[{bd.b_min}, {bd.b_max}] at t = {t:g}"))
    return out


def scenario_notes(s: Scenario) -> list[str]:
    """Informational remarks that are not assumption violations."""
    notes = []
    if all(w.kind is WallKind.GAMMA_C for w in s.boundary.walls):
        notes.append("no Dirichlet wall: b and omega are not replenished from the boundary")
    return notes


def initial_state(s: Scenario) -> SimState:
    """Discrete initial state; ``b`` is shifted by ``1/k`` at finite ``k``."""
    g = s.grid
    u, v, b, om = _initial_fields(s)
    v = v.copy()
    v[0] = v[-1] = 0.0
    if not g.is2d:
        v[:] = 0.0
    if s.shift_initial_b and math.isfinite(s.levels.k):
        b = b + 1.0 / s.levels.k
    if s.model == "prandtl":
        pp = s.prandtl or PrandtlParams()
        om = pp.c * np.sqrt(np.maximum(b, 0.0)) / pp.ell
    z = np.zeros(g.shape)
    return SimState(0.0, 0, u, v, b, om, z, np.zeros((2, g.nx)), np.zeros((2, g.nx)))


# checkpoints ---------------------------------------------------------------

_MAGIC = b"KOLMCKPT"
_VERSION = 1
_HEAD = struct.Struct("<8sIIIIqdI")
_FIELD = struct.Struct("<16sII")
_MODES = {0: Mode.CHANNEL1D, 1: Mode.CHANNEL2D}


def checkpoint_save(state: SimState, path, mode: Mode | None = None) -> None:
    """Write ``state`` to ``path`` (bit-exact, little-endian float64)."""
    ny, nx = state.b.shape
    if mode is None:
        mode = Mode.CHANNEL2D if nx > 1 or np.any(state.v != 0) else Mode.CHANNEL1D
    code = 1 if Mode(mode) is Mode.CHANNEL2D else 0
    parts = [_HEAD.pack(_MAGIC, _VERSION, code, ny, nx, state.step, state.t,
                        len(SimState.FIELDS))]
    for name in SimState.FIELDS:
        arr = np.ascontiguousarray(getattr(state, name), dtype="<f8")
        parts.append(_FIELD.pack(name.encode(), arr.shape[0], arr.shape[1]))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    data = body + struct.pack("<I", zlib.crc32(body))
    Path(path).write_bytes(data)


def checkpoint_load(path, grid: Grid | None = None) -> SimState:
    """Read a checkpoint; optionally require it to match ``grid``.

    Raises
    ------
    CheckpointError
        Bad magic, version, truncated data, checksum or shape mismatch.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < _HEAD.size + 4:
        raise CheckpointError(f"{path}: file too short for a checkpoint header")
    magic, version, code, ny, nx, step, t, nfields = _HEAD.unpack_from(data, 0)
    if magic != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != _VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {_VERSION}")
    if code not in _MODES:
        raise CheckpointError(f"{path}: unknown mode code {code}")
    expected = {"u": (ny, nx), "v": (ny + 1, nx), "b": (ny, nx), "omega": (ny, nx),
                "p": (ny, nx), "wall_s": (2, nx), "wall_vt": (2, nx)}
    size = _HEAD.size + sum(_FIELD.size + 8 * r * c for r, c in expected.values()) + 4
    if nfields != len(SimState.FIELDS) or len(data) != size:
        raise CheckpointError(f"{path}: size {len(data)} does not match header (expected {size})")
    body, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch")
    if grid is not None and (_MODES[code] is not grid.mode or (ny, nx) != grid.shape):
        raise CheckpointError(f"{path}: grid {(_MODES[code].value, ny, nx)} does not match "
                              f"{(grid.mode.value, grid.ny, grid.nx)}")
    pos = _HEAD.size
    arrays = {}
    for _ in range(nfields):
        raw, rows, cols = _FIELD.unpack_from(data, pos)
        pos += _FIELD.size
        name = raw.rstrip(b"\0").decode()
        if expected.get(name) != (rows, cols):
            raise CheckpointError(f"{path}: field {name!r} has shape {(rows, cols)}")
        n = rows * cols
        arrays[name] = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(
            rows, cols).astype(float)
        pos += 8 * n
    return SimState(t, step, *(arrays[f] for f in SimState.FIELDS))


def field_names() -> Sequence[str]:
    return SimState.FIELDS


def dataclass_dict(obj) -> dict:
    """Shallow field dictionary of a dataclass instance."""
    return {f.name: getattr(obj, f.name) for f in fields(obj)}
