"""Total-energy formulation, the suitable-weak defect and the energy identity.

The total energy density is ``E = |v|^2 / 2 + c_E b`` with
``c_E = 2 nu0 / kappa4``. Its balance law carries the kinetic flux
``2 nu0 T_k(mu) D(v) v``, the scalar flux ``c_E kappa3 T_n(mu) grad b``,
the sink ``c_E b omega`` and, at finite ``k``, a commutator flux coming
from the cut-off convection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Scenario, SimState
from .cutoffs import g_cut, gamma_cut
from .operators import Tendencies, flux_divergence, roll, upwind_tendency
from .stepper import RunResult, StepTerms, Stepper, run

__all__ = [
    "total_energy",
    "e_rhs",
    "commutator_density",
    "suitable_defect",
    "DefectSummary",
    "EnergyBudget",
    "energy_identity",
    "eform_defect_gate",
    "DefectGate",
]

IDENTITY_RTOL = 1e-11
DEFECT_RTOL = 1e-12


def _kinetic_density(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    uu = 0.5 * (u * u + roll(u * u, -1))
    if v.shape[0] == u.shape[0] + 1:
        vv = 0.5 * (v[1:] ** 2 + v[:-1] ** 2)
    else:
        vv = np.zeros_like(uu)
    return 0.5 * (uu + vv)


def total_energy(state: SimState, params) -> np.ndarray:
    """Cell field ``|v|^2 / 2 + c_E b``.

    Face velocities are averaged to cell centers through their squares, so
    the cell sum of the kinetic part equals the staggered kinetic energy.

    Examples
    --------
    >>> import numpy as np
    >>> from kolmolab.core import ModelParams, SimState
    >>> z = np.zeros((4, 1))
    >>> st = SimState(0.0, 0, z + 2.0, np.zeros((5, 1)), z + 3.0, z + 1, z, np.zeros((2, 1)),
    ...               np.zeros((2, 1)))
    >>> float(total_energy(st, ModelParams(nu0=0.5, kappa4=1.0))[0, 0])
    5.0
    """
    return _kinetic_density(state.u, state.v) + params.energy_coefficient * state.b


def commutator_density(u: np.ndarray, v: np.ndarray, k: float) -> np.ndarray:
    """``2 G_k(s) s - s - Gamma_k(s)`` at cell centers with ``s = |v|^2``.

    Vanishes identically for ``k = inf`` and wherever ``s <= k``.
    """
    s = 2.0 * _kinetic_density(u, v)
    if math.isinf(k):
        return np.zeros_like(s)
    return 2.0 * g_cut(k, s) * s - s - gamma_cut(k, s)


def e_rhs(state: SimState, scenario: Scenario) -> Tendencies:
    """Tendency of ``E`` split into ``convection``, ``diffusion``, ``sink``, ``commutator``.

    ``convection`` is ``-div(v (E + p))`` (2D only), ``diffusion`` the
    divergence of the scalar and kinetic fluxes including the wall work
    ``s . v_tau``, ``sink`` is ``-c_E b omega`` and ``commutator`` the
    divergence of ``-(1/2) (2 G_k s - s - Gamma_k(s)) v``.
    """
    stp = Stepper(scenario)
    d, g = stp.d, stp.grid
    c_e = stp.c_e
    u, v, b, om = state.u, state.v, state.b, state.omega
    ff = d.faces(b, om, state.t)
    bw, _ = d.wall_scalars(state.t)
    st_b = d.scalar_stencil(ff, stp.p.kappa3, bw)
    Fy = stp.kinetic_flux_y(u, v, state.wall_vt, state.wall_s, ff)
    Fx = stp.kinetic_flux_x(u, v, state.wall_vt, ff) if g.is2d else None
    diffusion = c_e * st_b.apply(b) + flux_divergence(Fy, Fx, g)
    E = total_energy(state, scenario.params)
    conv = np.zeros(g.shape)
    comm = np.zeros(g.shape)
    if g.is2d:
        ep = E + state.p
        conv = upwind_tendency(ep, u, v, g)
        c = commutator_density(u, v, stp.lv.k)
        if np.any(c != 0):
            Cy = np.zeros((g.ny + 1, g.nx))
            Cy[1:-1] = 0.25 * (c[1:] + c[:-1]) * v[1:-1]
            Cx = 0.25 * (c + roll(c, 1)) * u
            comm = -flux_divergence(Cy, Cx, g)
    sink = -c_e * d.b_sink(b, om)
    return Tendencies("E", {"convection": conv, "diffusion": diffusion, "sink": sink,
                            "commutator": comm})


@dataclass
class DefectSummary:
    """Most negative cell of the discrete b-inequality residual over a window."""

    minimum: float
    scale: float
    step: int
    cell: tuple

    @property
    def relative(self) -> float:
        return self.minimum / self.scale if self.scale > 0 else 0.0


def suitable_defect(window, scenario: Scenario | None = None):
    """Residual of the discrete b-inequality over a window.

    Parameters
    ----------
    window : sequence of StepTerms, or sequence of SimState
        Per-step budgets recorded by the stepper, or at least two
        consecutive states. States are evaluated with the scheme's own
        operators at the newer state (needs ``scenario``).

    Returns
    -------
    field : ndarray
        Cellwise minimum of the residual over the window.
    summary : DefectSummary
    """
    window = list(window)
    if window and isinstance(window[0], SimState):
        if scenario is None:
            raise ValueError("states need their scenario")
        if len(window) < 2:
            raise ValueError("need at least two states")
        terms = [_terms_from_states(a, b_, scenario) for a, b_ in zip(window, window[1:])]
    else:
        terms = window
    if not terms:
        raise ValueError("empty window")
    shape = terms[0].b_new.shape
    worst = np.full(shape, np.inf)
    best = (math.inf, 0, (0, 0))
    scale = 0.0
    for i, tm in enumerate(terms):
        if tm.b_new.shape != shape:
            raise ValueError("window mixes grids")
        dfield = tm.defect()
        worst = np.minimum(worst, dfield)
        j = np.unravel_index(int(np.argmin(dfield)), shape)
        if dfield[j] < best[0]:
            best = (float(dfield[j]), i, tuple(int(x) for x in j))
        scale = max(scale, tm.scale())
    return worst, DefectSummary(best[0], scale, best[1], best[2])


def _terms_from_states(s0: SimState, s1: SimState, scenario: Scenario) -> StepTerms:
    if s0.b.shape != s1.b.shape:
        raise ValueError("window mixes grids")
    stp = Stepper(scenario)
    d = stp.d
    dt = s1.t - s0.t
    if not dt > 0:
        raise ValueError("states must be in increasing time order")
    ff = d.faces(s1.b, s1.omega, s1.t)
    bw, _ = d.wall_scalars(s1.t)
    st = d.scalar_stencil(ff, stp.p.kappa3, bw)
    adv = upwind_tendency(s0.b, s0.u, s0.v, stp.grid)
    rate = stp.slaved_omega(s1.b) if stp.prandtl is not None else s1.omega
    sink = rate * s1.b
    prod = stp.d_production(ff.mu_c, _strain(s1, stp))
    return StepTerms(dt, s0.b, s1.b, adv, st.apply(s1.b), sink, prod, st.magnitude(s1.b))


def _strain(st: SimState, stp: Stepper):
    from .operators import strain_squared
    return strain_squared(st.u, st.v, st.wall_vt, stp.grid)


@dataclass
class EnergyBudget:
    """Accumulated kinetic-energy balance of a run.

    ``residual`` is the worst absolute value over all steps of
    ``K(t) - K(0) + dissipation + wall_work + convective_work +
    numerical_dissipation``.
    """

    kinetic: float
    turbulent: float
    dissipation: float
    wall_work: float
    convective_work: float
    numerical_dissipation: float
    sink: float
    residual: float
    initial_energy: float

    @property
    def tolerance(self) -> float:
        return IDENTITY_RTOL * (self.initial_energy + 1.0)

    @property
    def passed(self) -> bool:
        return math.isfinite(self.residual) and abs(self.residual) <= self.tolerance


def energy_identity(trajectory) -> EnergyBudget:
    """Energy budget from a :class:`RunResult` or its list of energy rows."""
    rows = trajectory.rows if isinstance(trajectory, RunResult) else list(trajectory)
    if not rows:
        raise ValueError("empty trajectory")
    last = rows[-1]
    worst = max(abs(r["residual"]) for r in rows)
    if any(not math.isfinite(r["residual"]) for r in rows):
        worst = math.nan
    return EnergyBudget(last["kinetic"], last["turbulent"], last["dissipation"],
                        last["wall_work"], last["convective_work"],
                        last["numerical_dissipation"], last["sink"], worst, rows[0]["total"])


@dataclass
class DefectGate:
    """E-form defect against its refinement estimate.

    ``estimate`` is ``|d(h) - d(h/2)|`` for the most negative defect ``d``
    on a grid and on the grid refined twice in space and time.
    """

    coarse: float
    fine: float
    estimate: float
    factor: float = 10.0

    @property
    def passed(self) -> bool:
        return self.coarse >= -self.factor * self.estimate


def eform_defect_gate(scenario: Scenario, factor: float = 10.0) -> DefectGate:
    """Run the E-form on ``scenario`` and its refinement and compare defects."""
    from .core import Formulation, Splitting
    base = scenario.with_scheme(formulation=Formulation.EFORM, splitting=Splitting.LIE)
    mins = []
    for scn in (base, base.refined(2)):
        res = run(scn)
        mins.append(min(r["defect_min"] for r in res.rows[1:]) if len(res.rows) > 1 else 0.0)
    return DefectGate(mins[0], mins[1], abs(mins[0] - mins[1]), factor)
