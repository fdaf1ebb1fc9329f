"""Scenario builders shared by the test modules."""

from __future__ import annotations

import math

import numpy as np

from kolmolab.core import (BoundarySpec, FieldExpr, Grid, ModelParams, OutputPlan, RegLevels,
                           Scenario, SchemeOptions, WallSpec)
from kolmolab.slipbc import SlipLaw


def homogeneous(dt=1e-3, t_end=1.0, splitting="lie", formulation="bform", ny=8, b0=1.0,
                omega0=1.0) -> Scenario:
    """Constant data, no flow, zero-flux walls: the decay is an ODE."""
    return Scenario(
        Grid("channel1d", ny),
        ModelParams(normalized=True),
        init_b=FieldExpr(b0), init_omega=FieldExpr(omega0),
        t_end=t_end,
        scheme=SchemeOptions(dt=dt, splitting=splitting, formulation=formulation),
        output=OutputPlan(snapshot_every=100),
        name="homogeneous",
    )


def shear(law: SlipLaw, ny=32, t_end=0.2, dt=1e-3, k=math.inf, name="shear") -> Scenario:
    """Free-decay 1D shear with a Dirichlet bottom wall and ``law`` on top."""
    bottom = WallSpec("gamma", FieldExpr("0.5 + 0.1*sin(t)"), FieldExpr("1.0 + 0.2*sin(3*t)"),
                      SlipLaw.navier(2.0))
    return Scenario(
        Grid("channel1d", ny),
        ModelParams.kolmogorov(),
        levels=RegLevels(k=k),
        boundary=BoundarySpec(bottom, WallSpec("gammac", law=law), b_min=0.3, b_max=2.0,
                              omega_min=0.5, omega_max=1.5),
        init_u=FieldExpr("cos(pi*y)"),
        init_b=FieldExpr("0.5 + 0.3*sin(pi*y/2)**2"),
        init_omega=FieldExpr("1 + 0.4*sin(pi*y/2)**2"),
        t_end=t_end,
        scheme=SchemeOptions(dt=dt),
        output=OutputPlan(snapshot_every=50),
        name=name,
    )


def smooth(ny=32, dt=1e-3, t_end=0.5) -> Scenario:
    """Nondegenerate 1D scenario whose data meet the wall conditions at t = 0."""
    bottom = WallSpec("gamma", FieldExpr("0.5 + 0.1*sin(t)"), FieldExpr("1.0 + 0.2*sin(3*t)"),
                      SlipLaw.free())
    return Scenario(
        Grid("channel1d", ny),
        ModelParams.kolmogorov(),
        boundary=BoundarySpec(bottom, WallSpec("gammac", law=SlipLaw.free()), b_min=0.3,
                              b_max=2.0, omega_min=0.5, omega_max=1.5),
        init_u=FieldExpr("cos(pi*y)"),
        init_b=FieldExpr("0.5 + 0.3*sin(pi*y/2)**2"),
        init_omega=FieldExpr("1 + 0.4*sin(pi*y/2)**2"),
        t_end=t_end,
        scheme=SchemeOptions(dt=dt),
        output=OutputPlan(snapshot_every=100),
        name="smooth",
    )


def free_shear(ny=16, t_end=0.1, dt=1e-3) -> Scenario:
    """1D shear with free-slip walls and no Dirichlet data (scaling harness)."""
    return Scenario(
        Grid("channel1d", ny),
        ModelParams.kolmogorov(),
        boundary=BoundarySpec(WallSpec("gammac", law=SlipLaw.free()),
                              WallSpec("gammac", law=SlipLaw.free()),
                              b_min=0.3, b_max=2.0, omega_min=0.5, omega_max=2.0),
        init_u=FieldExpr("cos(pi*y) + 0.3*sin(2*pi*y)"),
        init_b=FieldExpr("0.5 + 0.3*sin(pi*y)**2"),
        init_omega=FieldExpr("1 + 0.4*cos(pi*y)**2"),
        t_end=t_end,
        scheme=SchemeOptions(dt=dt),
        output=OutputPlan(snapshot_every=20),
        name="free_shear",
    )


def _random_law(rng):
    pick = int(rng.integers(3))
    if pick == 0:
        return SlipLaw.navier(float(rng.uniform(0.1, 5.0)))
    if pick == 1:
        return SlipLaw.threshold(float(rng.uniform(0.01, 0.3)), float(rng.uniform(0.0, 2.0)))
    return SlipLaw.free()


def random_scenario(seed: int, k=math.inf, ny=24, t_end=0.3, dt=1e-3) -> Scenario:
    """Randomized 1D scenario with data inside its declared bounds.

    ``kappa2 <= 1`` so that the lower omega bound decays at rate ``omega_max``.
    At finite ``k`` the initial ``b`` may dip to ``1e-4`` so that the
    shifted datum sits close to the ``1/k`` floor.
    """
    rng = np.random.default_rng(seed)
    om_lo = float(rng.uniform(0.2, 1.0))
    om_hi = om_lo + float(rng.uniform(0.5, 3.0))
    b_lo = 0.1 if math.isfinite(k) else float(rng.uniform(0.05, 0.5))
    b_hi = b_lo + float(rng.uniform(0.5, 3.0))
    params = ModelParams(nu0=float(rng.uniform(0.1, 1.0)), kappa1=float(rng.uniform(0.5, 2.0)),
                         kappa2=float(rng.uniform(0.5, 1.0)), kappa3=float(rng.uniform(0.5, 2.0)),
                         kappa4=float(rng.uniform(0.5, 2.0)))

    def inside(lo, hi):
        # smooth profile with values in [lo, hi]
        a, c = (float(x) for x in rng.uniform(0.1, 0.9, 2))
        f = float(rng.uniform(0.5, 3.0))
        base = lo + a * (hi - lo)
        amp = min(base - lo, hi - base) * c
        return f"{base!r} + {amp!r}*sin({f!r}*pi*y + {float(rng.uniform(0, 6))!r})"

    def near_zero(hi):
        f = float(rng.uniform(0.5, 2.0))
        return f"1e-4 + {hi - 1e-4!r}*sin({f!r}*pi*y + {float(rng.uniform(0, 3))!r})**2"

    walls = []
    for _ in range(2):
        if rng.random() < 0.5:
            bw = float(rng.uniform(b_lo, b_hi))
            ow = float(rng.uniform(om_lo, om_hi))
            walls.append(WallSpec("gamma", FieldExpr(bw), FieldExpr(ow), _random_law(rng)))
        else:
            walls.append(WallSpec("gammac", law=_random_law(rng)))
    amp_u = float(rng.uniform(0.2, 2.0))
    return Scenario(
        Grid("channel1d", ny),
        params,
        levels=RegLevels(k=k),
        boundary=BoundarySpec(walls[0], walls[1], b_min=b_lo, b_max=b_hi, omega_min=om_lo,
                              omega_max=om_hi),
        init_u=FieldExpr(f"{amp_u!r}*cos({float(rng.uniform(0.5, 2.5))!r}*pi*y)"),
        init_b=FieldExpr(near_zero(b_hi) if math.isfinite(k) else inside(b_lo, b_hi)),
        init_omega=FieldExpr(inside(om_lo, om_hi)),
        t_end=t_end,
        scheme=SchemeOptions(dt=dt),
        output=OutputPlan(snapshot_every=1000),
        name=f"random{seed}",
    )


def box2d(n=64, t_end=0.02, dt=2e-3, pressure_parts=True) -> Scenario:
    """2D channel with an exactly discrete divergence-free initial velocity.

    ``v = sin(pi y)^2 cos(2 pi x)`` and ``u`` carries the amplitude that
    makes the staggered divergence cancel on this particular grid.
    """
    dx = dy = 1.0 / n
    a = (math.sin(math.pi * dy) / dy) / (2.0 * math.sin(math.pi * dx) / dx)
    bottom = WallSpec("gamma", FieldExpr(1.0), FieldExpr(1.0), SlipLaw.navier(1.0))
    top = WallSpec("gammac", law=SlipLaw.threshold(0.05, 1.0))
    return Scenario(
        Grid("channel2d", n, n),
        ModelParams.kolmogorov(),
        boundary=BoundarySpec(bottom, top, b_min=0.1, b_max=10.0, omega_min=0.5,
                              omega_max=2.0),
        init_u=FieldExpr(f"-{a!r}*sin(2*pi*y)*sin(2*pi*x) + 0.5*cos(pi*y)"),
        init_v=FieldExpr("sin(pi*y)**2*cos(2*pi*x)"),
        init_b=FieldExpr("1 + 0.5*sin(pi*y)**2"),
        init_omega=FieldExpr("1 + 0.2*cos(2*pi*x)"),
        t_end=t_end,
        scheme=SchemeOptions(dt=dt),
        output=OutputPlan(snapshot_every=5, pressure_parts=pressure_parts),
        name="box2d",
    )
