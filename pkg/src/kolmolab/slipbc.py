"""Stick-slip wall laws.

A law relates the tangential traction ``s`` exerted on the fluid at a wall
to the tangential wall velocity ``v``. The canonical family is

* Navier slip: ``s = gamma * v``;
* threshold slip: ``|s| <= sigma`` iff ``v = 0``, otherwise
  ``s = sigma * v / |v| + gamma * v``;
* the no-slip surrogate: threshold slip with a huge threshold.

All of them are captured by the implicit residual
``h(s, v) = gamma * v - ((|s| - sigma)_+ / |s|) * s``.
Custom laws are supplied as callables of ``(t, x, b, b_omega)`` so that
they depend on the turbulent scalars only through ``b`` and ``b * omega``.

Vectors may be passed as 1-d arrays or as plain floats (1D channel).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .errors import UnsupportedLawError, WallSolveError

__all__ = [
    "LawKind",
    "SlipLaw",
    "WallContext",
    "WallState",
    "SampleSpec",
    "AssumptionReport",
    "residual_h",
    "regularize_gk",
    "solve_wall",
    "check_assumptions",
    "NOSLIP_FACTOR",
]

NOSLIP_FACTOR = 1.0e6


class LawKind(str, Enum):
    NAVIER = "navier"
    THRESHOLD = "threshold"
    NOSLIP = "noslip"
    CUSTOM = "custom"


@dataclass(frozen=True)
class WallContext:
    """Arguments a wall law may depend on.

    The scalars are stored as ``b`` and ``b_omega = b * omega``.
    """

    t: float = 0.0
    x: float = 0.0
    b: float = 1.0
    b_omega: float = 1.0

    @classmethod
    def from_fields(cls, t: float, x: float, b: float, omega: float) -> "WallContext":
        return cls(float(t), float(x), float(b), float(b) * float(omega))


@dataclass(frozen=True)
class WallState:
    """Traction and tangential velocity at one wall point."""

    s: float | np.ndarray
    v_tau: float | np.ndarray


@dataclass(frozen=True)
class SlipLaw:
    """Wall constitutive law.

    Use the constructors :meth:`navier`, :meth:`threshold`,
    :meth:`no_slip_limit`, :meth:`free` and :meth:`custom`.

    ``C_g``, ``beta_g``, ``C`` and ``sigma_max`` are the constants the
    structural assumptions are checked against.
    """

    kind: LawKind
    gamma_star: float = 0.0
    sigma_star: float = 0.0
    traction_scale: float = 1.0
    sigma_fn: Callable | None = field(default=None, compare=False)
    g_fn: Callable | None = field(default=None, compare=False)
    residual_fn: Callable | None = field(default=None, compare=False)
    C_g: float = 0.0
    beta_g: float = 2.0
    C: float = 1.0
    sigma_max: float = math.inf

    @classmethod
    def navier(cls, gamma_star: float, **kw) -> "SlipLaw":
        if gamma_star < 0:
            raise ValueError("gamma_star must be nonnegative")
        return cls(LawKind.NAVIER, gamma_star=float(gamma_star), **kw)

    @classmethod
    def free(cls, **kw) -> "SlipLaw":
        return cls.navier(0.0, **kw)

    @classmethod
    def threshold(cls, sigma_star: float, gamma_star: float = 0.0, **kw) -> "SlipLaw":
        if sigma_star < 0 or gamma_star < 0:
            raise ValueError("sigma_star and gamma_star must be nonnegative")
        kw.setdefault("sigma_max", float(sigma_star))
        return cls(LawKind.THRESHOLD, gamma_star=float(gamma_star),
                   sigma_star=float(sigma_star), **kw)

    @classmethod
    def no_slip_limit(cls, traction_scale: float = 1.0, gamma_star: float = 0.0,
                      **kw) -> "SlipLaw":
        if traction_scale <= 0:
            raise ValueError("traction_scale must be positive")
        kw.setdefault("sigma_max", NOSLIP_FACTOR * float(traction_scale))
        return cls(LawKind.NOSLIP, gamma_star=float(gamma_star),
                   traction_scale=float(traction_scale), **kw)

    @classmethod
    def custom(cls, sigma_fn: Callable, g_fn: Callable,
               residual_fn: Callable | None = None, **kw) -> "SlipLaw":
        """Law from callables.

        ``sigma_fn(t, x, b, b_omega) -> float`` and
        ``g_fn(t, x, b, b_omega, v) -> vector`` (for ``v != 0``);
        ``residual_fn(t, x, b, b_omega, s, v) -> vector`` is optional.
        ``g`` must be parallel to ``v`` for :func:`solve_wall`.
        """
        return cls(LawKind.CUSTOM, sigma_fn=sigma_fn, g_fn=g_fn,
                   residual_fn=residual_fn, **kw)

    @property
    def canonical(self) -> bool:
        return self.kind is not LawKind.CUSTOM

    def sigma(self, ctx: WallContext) -> float:
        """Threshold value at ``ctx``."""
        if self.kind is LawKind.NAVIER:
            return 0.0
        if self.kind is LawKind.THRESHOLD:
            return self.sigma_star
        if self.kind is LawKind.NOSLIP:
            return NOSLIP_FACTOR * self.traction_scale
        return float(self.sigma_fn(ctx.t, ctx.x, ctx.b, ctx.b_omega))

    def g(self, ctx: WallContext, v):
        """Friction value ``g(v)``; the zero vector at ``v = 0``."""
        vv = np.atleast_1d(np.asarray(v, dtype=float))
        nv = _norm(vv)
        if nv == 0.0:
            out = np.zeros_like(vv)
        elif self.canonical:
            out = self.sigma(ctx) * (vv / nv) + self.gamma_star * vv
        else:
            out = np.atleast_1d(np.asarray(
                self.g_fn(ctx.t, ctx.x, ctx.b, ctx.b_omega, vv), dtype=float))
        return _like(out, v)

    def scaled(self, velocity: float, traction: float) -> "SlipLaw":
        """Law in rescaled variables (used by the scaling harness).

        ``velocity`` and ``traction`` are the factors applied to ``v`` and
        ``s``. Only canonical laws can be rescaled.
        """
        if not self.canonical:
            raise UnsupportedLawError("custom laws cannot be rescaled")
        ratio = traction / velocity
        kw = dict(gamma_star=self.gamma_star * ratio, sigma_star=self.sigma_star * traction,
                  traction_scale=self.traction_scale * traction,
                  sigma_max=self.sigma_max * traction)
        return SlipLaw(self.kind, C_g=self.C_g, beta_g=self.beta_g, C=self.C, **kw)


def _norm(x) -> float:
    """Euclidean norm that neither underflows nor overflows in the squares."""
    x = np.ravel(np.asarray(x, dtype=float))
    m = float(np.max(np.abs(x))) if x.size else 0.0
    if not (m > 0.0 and math.isfinite(m)):
        return m
    return m * float(np.linalg.norm(x / m))


def _like(arr, ref):
    if np.ndim(ref) == 0:
        return float(np.asarray(arr).reshape(-1)[0])
    return np.asarray(arr, dtype=float).reshape(np.shape(ref))


def residual_h(law: SlipLaw, ctx: WallContext, s, v_tau):
    """Implicit law residual; zero iff ``(s, v_tau)`` satisfies the law.

    Raises
    ------
    UnsupportedLawError
        For a custom law without ``residual_fn``.
    """
    if not law.canonical:
        if law.residual_fn is None:
            raise UnsupportedLawError("custom law has no residual hook")
        out = law.residual_fn(ctx.t, ctx.x, ctx.b, ctx.b_omega, s, v_tau)
        return _like(np.atleast_1d(np.asarray(out, dtype=float)), v_tau)
    sv = np.atleast_1d(np.asarray(s, dtype=float))
    vv = np.atleast_1d(np.asarray(v_tau, dtype=float))
    ns = _norm(sv)
    sigma = law.sigma(ctx)
    factor = 0.0 if ns == 0.0 else max(ns - sigma, 0.0) / ns
    return _like(law.gamma_star * vv - factor * sv, v_tau)


def regularize_gk(k: float, law: SlipLaw, ctx: WallContext, v_tau):
    """Bounded friction ``g / (1 + |g| / k) * min(1, k |v|)``.

    Zero at ``v = 0`` and never larger than ``k`` in norm.
    """
    if not (k > 0) or math.isinf(k):
        raise ValueError("regularization level must be finite and positive")
    vv = np.atleast_1d(np.asarray(v_tau, dtype=float))
    nv = _norm(vv)
    if nv == 0.0:
        return _like(np.zeros_like(vv), v_tau)
    g = np.atleast_1d(np.asarray(law.g(ctx, vv), dtype=float))
    ng = _norm(g)
    return _like(g / (1.0 + ng / k) * min(1.0, k * nv), v_tau)


def _friction_magnitude(law: SlipLaw, ctx: WallContext, k: float, e: np.ndarray):
    """Scalar map ``r -> g(r e) . e`` along the unit direction ``e``."""
    if math.isinf(k):
        def f(r):
            return float(np.dot(np.atleast_1d(law.g(ctx, r * e)), e))
    else:
        def f(r):
            return float(np.dot(np.atleast_1d(regularize_gk(k, law, ctx, r * e)), e))
    return f


def _bisect(fun, lo: float, hi: float, tol: float, max_iter: int):
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if fun(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    else:
        if hi - lo > tol:
            raise WallSolveError(f"wall bisection did not reach bracket {tol:g}")
    return 0.5 * (lo + hi)


def solve_wall(law: SlipLaw, ctx: WallContext, A, B: float, k: float = math.inf,
               max_iter: int = 200) -> WallState:
    """Solve the wall law together with the impedance ``s = A - B v``.

    Parameters
    ----------
    law : SlipLaw
    ctx : WallContext
    A : float or ndarray
        Traction the wall would carry at zero slip.
    B : float
        Impedance, positive.
    k : float
        Regularization level; finite values use :func:`regularize_gk`.
    max_iter : int
        Iteration cap of the scalar root solve.

    Returns
    -------
    WallState
        ``v`` is parallel to ``A``. For unregularized threshold laws the
        stick branch is returned iff ``|A| <= sigma``.
    """
    if not B > 0:
        raise ValueError(f"impedance must be positive, got {B!r}")
    Av = np.atleast_1d(np.asarray(A, dtype=float))
    a = _norm(Av)
    if a == 0.0:
        zero = np.zeros_like(Av)
        return WallState(_like(zero, A), _like(zero.copy(), A))
    e = Av / a
    if law.canonical and math.isinf(k):
        sigma = law.sigma(ctx)
        if a <= sigma:
            return WallState(_like(Av.copy(), A), _like(np.zeros_like(Av), A))
        r = (a - sigma) / (B + law.gamma_star)
    else:
        gmag = _friction_magnitude(law, ctx, k, e)
        if math.isinf(k) and a <= law.sigma(ctx):
            return WallState(_like(Av.copy(), A), _like(np.zeros_like(Av), A))

        def fun(r):
            return a - B * r - gmag(r)

        hi = a / B
        tol = 1e-14 * max(1.0, hi)
        if fun(hi) >= 0.0:
            r = hi
        else:
            try:
                r = brentq(fun, 0.0, hi, xtol=tol, rtol=4 * np.finfo(float).eps,
                           maxiter=max_iter)
            except (RuntimeError, ValueError):
                r = _bisect(fun, 0.0, hi, tol, max_iter)
    v = r * e
    s = Av - B * v
    return WallState(_like(s, A), _like(v, A))


@dataclass(frozen=True)
class SampleSpec:
    """Sampling box for :func:`check_assumptions`."""

    b_range: tuple[float, float] = (1e-3, 10.0)
    omega_range: tuple[float, float] = (1e-3, 10.0)
    v_range: tuple[float, float] = (0.0, 10.0)
    t_range: tuple[float, float] = (0.0, 1.0)
    x_range: tuple[float, float] = (0.0, 1.0)
    n: int = 2000
    dim: int = 2
    seed: int = 0


@dataclass(frozen=True)
class AssumptionReport:
    """Worst-case margins of the structural wall-law assumptions.

    Attributes
    ----------
    lower_margin : float
        ``min(g.v + C_g)``; must be >= 0.
    growth_margin : float
        ``max(|g|^beta - C (1 + |g.v| + |v|^(8/3)))``; must be <= 0.
    implied_C : float
        Smallest ``C`` for which the growth margin would be <= 0.
    sigma_margin : float
        ``max(sigma - sigma_max)``; must be <= 0.
    sigma_min : float
        ``min(sigma)``; must be >= 0.
    compat_gap : float
        ``max | |g(eps v)| - sigma |`` for tiny ``eps``; tends to 0.
    """

    lower_margin: float
    growth_margin: float
    implied_C: float
    sigma_margin: float
    sigma_min: float
    compat_gap: float

    @property
    def passed(self) -> bool:
        return (self.lower_margin >= 0.0 and self.growth_margin <= 0.0
                and self.sigma_margin <= 0.0 and self.sigma_min >= 0.0)


def check_assumptions(law: SlipLaw, spec: SampleSpec = SampleSpec()) -> AssumptionReport:
    """Sample the law and report the structural margins."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    b = rng.uniform(*spec.b_range, n)
    om = rng.uniform(*spec.omega_range, n)
    t = rng.uniform(*spec.t_range, n)
    x = rng.uniform(*spec.x_range, n)
    direction = rng.normal(size=(n, spec.dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    mag = rng.uniform(*spec.v_range, n)
    lower = np.inf
    growth = -np.inf
    implied = 0.0
    sig_hi = -np.inf
    sig_lo = np.inf
    gap = 0.0
    for i in range(n):
        ctx = WallContext.from_fields(t[i], x[i], b[i], om[i])
        v = mag[i] * direction[i]
        g = np.atleast_1d(law.g(ctx, v))
        gv = float(np.dot(g, v))
        ng = _norm(g)
        nv = float(mag[i])
        denom = 1.0 + abs(gv) + nv ** (8.0 / 3.0)
        lower = min(lower, gv + law.C_g)
        growth = max(growth, ng**law.beta_g - law.C * denom)
        implied = max(implied, ng**law.beta_g / denom)
        sigma = law.sigma(ctx)
        sig_hi = max(sig_hi, sigma - law.sigma_max)
        sig_lo = min(sig_lo, sigma)
        tiny = 1e-12 * direction[i]
        gap = max(gap, abs(_norm(law.g(ctx, tiny)) - sigma))
    return AssumptionReport(float(lower), float(growth), float(implied),
                            float(sig_hi), float(sig_lo), float(gap))
