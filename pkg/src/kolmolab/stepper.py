"""Time integration: positivity-preserving splitting and the run loop.

One Lie step of length ``h`` performs

1. reaction: ``omega <- omega / (1 + h kappa2 T_m(omega))`` then
   ``b <- (b + h P) / (1 + h omega)`` with the production ``P`` of the old
   state and the updated ``omega``;
2. transport: upwind advection (explicit) and diffusion (implicit) of
   ``b`` and ``omega`` with coefficients frozen after the reaction;
3. momentum: linearly implicit viscous solve with the wall laws;
4. 2D only: projection onto discretely divergence-free fields.

Strang splitting wraps transport and momentum between two half reaction
steps, each second order (exact quotient for ``omega``, a modified
Patankar two-stage update for ``b``).

The E-form variant advances ``E = |v|^2 / 2 + c_E b`` instead of ``b`` and
reconstructs ``b = (E - |v|^2 / 2) / c_E`` without clamping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse.linalg import splu
import scipy.sparse as sp

from .core import (Formulation, Grid, PrandtlParams, Scenario, SchemeOptions, SimState,
                   Splitting, Stage, divergence, initial_state)
from .cutoffs import pos_part, t_cut
from .errors import CFLError, InputError, KolmoError, SolverError, WallSolveError
from .operators import (Discretization, FaceFields, convection_force, diffusion_stencil,
                        flux_divergence, pack, production, roll, strain_parts, strain_squared,
                        tridiag_solve, unpack, upwind_tendency, viscous_operator)
from .pressure import gradient, project
from .slipbc import LawKind, WallContext, regularize_gk, residual_h, solve_wall

__all__ = [
    "SchemeOptions",
    "StepTerms",
    "StepInfo",
    "Stepper",
    "RunResult",
    "RunAborted",
    "step",
    "run",
    "ENERGY_COLUMNS",
]


@dataclass
class StepTerms:
    """Per-cell rates of the ``b`` budget over one step.

    ``(b_new - b_old) / dt`` equals ``adv + diff - sink + prod`` exactly
    for the b-form; for the E-form these are the b-form operators applied
    to the E-form result.
    """

    dt: float
    b_old: np.ndarray
    b_new: np.ndarray
    adv: np.ndarray
    diff: np.ndarray
    sink: np.ndarray
    prod: np.ndarray
    diff_abs: np.ndarray | None = None

    def defect(self) -> np.ndarray:
        rate = (self.b_new - self.b_old) / self.dt
        return rate - (self.adv + self.diff - self.sink + self.prod)

    def scale(self) -> float:
        """Largest rate magnitude, including the rounding floors.

        These are ``max|b| / dt`` for the difference quotient and the
        absolute stencil sum ``diff_abs`` for the diffusion term.
        """
        level = max(float(np.max(np.abs(self.b_old))), float(np.max(np.abs(self.b_new))))
        floors = [level / self.dt]
        if self.diff_abs is not None:
            floors.append(float(np.max(self.diff_abs)))
        return float(max(floors + [float(np.max(np.abs(a))) for a in
                         ((self.b_new - self.b_old) / self.dt, self.adv, self.diff,
                          self.sink, self.prod)]))


@dataclass
class StepInfo:
    """Energy pieces (integrated over the step) and solver data of one step."""

    dt: float
    kinetic_old: float
    kinetic_new: float
    dissipation: float
    wall_work: float
    convective_work: float
    numerical_dissipation: float
    sink: float
    wall_residual: float
    wall_iters: int
    b_nonpositive: int
    terms: StepTerms

    @property
    def residual(self) -> float:
        return (self.kinetic_new - self.kinetic_old + self.dissipation + self.wall_work
                + self.convective_work + self.numerical_dissipation)


class RunAborted(KolmoError):
    """A step failed; ``last_state`` is the last good state."""

    def __init__(self, step: int, reason: str, last_state: SimState, rows=None):
        super().__init__(f"step {step} failed: {reason}")
        self.step = step
        self.reason = reason
        self.last_state = last_state
        self.rows = list(rows or [])


@dataclass
class _Momentum:
    q: np.ndarray
    w: np.ndarray
    s: np.ndarray
    dissipation: float
    wall_work: float
    conv_work: float
    num_diss: float
    iters: int
    residual: float


class Stepper:
    """Advance states of one scenario.

    Parameters
    ----------
    scenario : Scenario
    options : SchemeOptions, optional
        Overrides ``scenario.scheme``.
    """

    def __init__(self, scenario: Scenario, options: SchemeOptions | None = None):
        if options is not None:
            scenario = replace(scenario, scheme=options)
        self.scn = scenario
        self.opt = scenario.scheme
        if self.opt.formulation is Formulation.EFORM and self.opt.splitting is Splitting.STRANG:
            raise InputError("the E-form is advanced with Lie splitting only")
        self.grid = scenario.grid
        self.d = Discretization(scenario)
        self.p = self.d.params
        self.lv = scenario.levels
        self.stage = self.d.stage
        self.c_e = scenario.params.energy_coefficient
        self.inc_v = self.grid.is2d
        self.prandtl: PrandtlParams | None = None
        if scenario.model == "prandtl":
            if self.grid.is2d:
                raise InputError("the one-equation model runs in the 1D channel only")
            self.prandtl = scenario.prandtl or PrandtlParams()
            pp = self.prandtl
            self.d.mu = lambda b, om: (pp.ell / pp.c) * np.sqrt(pos_part(b))
        elif scenario.model != "kolmogorov":
            raise InputError(f"unknown model {scenario.model!r}")
        self.laws = tuple(w.law for w in scenario.boundary.walls)
        self.linear_walls = math.isinf(self.lv.k) and all(
            law.kind is LawKind.NAVIER for law in self.laws)

    # -- reaction ------------------------------------------------------------
    def slaved_omega(self, b: np.ndarray) -> np.ndarray:
        pp = self.prandtl
        return pp.c * np.sqrt(pos_part(b)) / pp.ell

    def omega_react(self, om: np.ndarray, h: float) -> np.ndarray:
        k2 = self.p.kappa2
        rate = k2 * t_cut(self.lv.m, om) if self.stage is Stage.MNK else k2 * om
        return np.where(om > 0, om / (1.0 + h * np.where(om > 0, rate, 0.0)), om)

    def _production(self, b, om, u, v, w):
        mu = self.d.mu(b, om)
        return self.d_production(mu, strain_squared(u, v, w, self.grid))

    def d_production(self, mu, d2):
        return production(mu, d2, self.lv, self.p)

    def _sink_rate(self, b, om):
        if self.prandtl is not None:
            return self.slaved_omega(b)
        return om

    def _patankar(self, b, rate, num):
        # sink -b_+ omega at the mnk stage: no sink on nonpositive b
        if self.stage is Stage.MNK:
            return np.where(b > 0, num / (1.0 + rate), num)
        return num / (1.0 + rate)

    def react_lie(self, b0, om0, u, v, w, h):
        P = self._production(b0, om0, u, v, w)
        if self.prandtl is not None:
            om1 = om0
            rate = self.slaved_omega(b0)
        else:
            om1 = self.omega_react(om0, h)
            rate = om1
        b1 = self._patankar(b0, h * rate, b0 + h * P)
        if self.prandtl is not None:
            om1 = self.slaved_omega(b1)
        return b1, om1, P, P - (b1 - b0) / h

    def react_half(self, b0, om0, u, v, w, h):
        """Second-order reaction over ``h``: returns ``(b, omega, prod, sink)`` rates."""
        if self.prandtl is not None:
            om1 = om0
            r0 = self.slaved_omega(b0)
        else:
            om1 = self.omega_react(om0, h)
            r0 = om0
        P0 = self._production(b0, om0, u, v, w)
        b1 = self._patankar(b0, h * r0, b0 + h * P0)
        r1 = self.slaved_omega(b1) if self.prandtl is not None else om1
        om_mid = self.slaved_omega(b1) if self.prandtl is not None else om1
        P1 = self._production(b1, om_mid, u, v, w)
        num = b0 + 0.5 * h * (P0 + P1)
        pos = b1 > 0
        ratio = np.where(pos, (r0 * b0 + r1 * b1) / np.where(pos, b1, 1.0), 0.0)
        if self.stage is Stage.MNK:
            bn = np.where(b0 > 0, num / (1.0 + 0.5 * h * ratio), num)
        else:
            bn = num / (1.0 + 0.5 * h * ratio)
        prod = 0.5 * (P0 + P1)
        if self.prandtl is not None:
            om1 = self.slaved_omega(bn)
        return bn, om1, prod, prod - (bn - b0) / h

    # -- transport -------------------------------------------------------------
    def cfl(self, u, v) -> float:
        g = self.grid
        if not g.is2d:
            return 0.0
        return self.opt.dt * (float(np.max(np.abs(u))) / g.dx + float(np.max(np.abs(v))) / g.dy)

    def transport(self, b, om, u, v, t_new, h, ff: FaceFields | None = None):
        d = self.d
        bw, ow = d.wall_scalars(t_new)
        if ff is None:
            ff = d.faces(b, om, t_new)
        stb = d.scalar_stencil(ff, self.p.kappa3, bw)
        adv_b = upwind_tendency(b, u, v, self.grid)
        b_new = stb.solve(b + h * adv_b, h)
        diff_b = stb.apply(b_new)
        if self.prandtl is not None:
            om_new = self.slaved_omega(b_new)
        else:
            sto = d.scalar_stencil(ff, self.p.kappa1, ow)
            adv_o = upwind_tendency(om, u, v, self.grid)
            om_new = sto.solve(om + h * adv_o, h)
        return b_new, om_new, adv_b, diff_b, stb.magnitude(b_new)

    # -- momentum --------------------------------------------------------------
    def _contexts(self, ff: FaceFields, t: float):
        xs = self.grid.xc
        out = []
        for side, row in ((0, 0), (1, -1)):
            for i, x in enumerate(xs):
                out.append(WallContext.from_fields(t, x, ff.b_y[row, i], ff.om_y[row, i]))
        return out

    def _wall_solve(self, S, r, w0, ctxs, dx):
        nw = len(w0)
        nx = nw // 2
        laws = [self.laws[0]] * nx + [self.laws[1]] * nx
        k = self.lv.k
        if self.linear_walls:
            gam = np.array([law.gamma_star for law in laws]) * dx
            try:
                w = np.linalg.solve(S + np.diag(gam), -r)
            except np.linalg.LinAlgError as exc:
                raise SolverError(f"wall system singular: {exc}") from exc
            return w, 1
        w = w0.copy()
        for it in range(1, self.opt.max_wall_iters + 1):
            delta = 0.0
            for i in range(nw):
                Bi = S[i, i] / dx
                Ai = -(r[i] + S[i] @ w - S[i, i] * w[i]) / dx
                ws = solve_wall(laws[i], ctxs[i], Ai, Bi, k, self.opt.max_wall_iters)
                delta = max(delta, abs(ws.v_tau - w[i]))
                w[i] = ws.v_tau
            if delta <= 1e-14 * float(np.max(np.abs(w))):
                return w, it
        raise WallSolveError(f"wall iteration did not converge in "
                             f"{self.opt.max_wall_iters} sweeps (last change {delta:.3e})")

    def _law_residual(self, s, w, ctxs):
        nx = len(w) // 2
        laws = [self.laws[0]] * nx + [self.laws[1]] * nx
        worst = 0.0
        for i, (law, ctx) in enumerate(zip(laws, ctxs)):
            if math.isinf(self.lv.k):
                res = residual_h(law, ctx, s[i], w[i])
            else:
                res = s[i] - regularize_gk(self.lv.k, law, ctx, w[i])
            worst = max(worst, abs(res) / (1.0 + abs(s[i])))
        return worst

    def momentum(self, u0, v0, w_prev, ff: FaceFields, t_new, h) -> _Momentum:
        g = self.grid
        dx, dy = g.dx, g.dy
        vol = dx * dy
        mc, mk = self.d.visc_coefficients(ff)
        cu, cv = convection_force(u0, v0, self.lv.k, g)
        q0 = pack(u0, v0, None, self.inc_v)
        cv_full = np.zeros((g.ny + 1, g.nx))
        cv_full[1:-1] = cv
        c = pack(cu, cv_full, None, self.inc_v)
        rhs = vol * (q0 / h + c)
        ctxs = self._contexts(ff, t_new)
        if not g.is2d:
            # chain w_b - u_0 - ... - u_{N-1} - w_t with edge weights a
            a = mk[:, 0] * dx / dy
            a[1:-1] *= 0.5
            n = g.ny
            R = np.zeros((n, 3))
            R[:, 0] = rhs
            R[0, 1] = a[0]
            R[-1, 2] = a[-1]
            X = tridiag_solve(-a[1:-1], vol / h + a[:-1] + a[1:], -a[1:-1], R)
            P, Y = X[:, 0], -X[:, 1:]
            Kwq = np.zeros((2, n))
            Kwq[0, 0] = -a[0]
            Kwq[1, -1] = -a[-1]
            Kww = np.diag([a[0], a[-1]])

            def dissipation(q, w):
                chain = np.concatenate(([w[0]], q, [w[1]]))
                return float(np.sum(a * np.diff(chain) ** 2))
        else:
            op = viscous_operator(mc, mk, g)
            Kqq, Kqw, Kwq, Kww = op.blocks()
            A = (sp.diags(np.full(op.nq, vol / h)) + Kqq).tocsc()
            try:
                lu = splu(A)
            except RuntimeError as exc:
                raise SolverError(f"momentum factorization failed: {exc}") from exc
            P = lu.solve(rhs)
            Y = lu.solve(Kqw.toarray())

            def dissipation(q, w):
                return op.dissipation(np.concatenate((q, w)))
        S = Kww - Kwq @ Y
        r = Kwq @ P
        w, iters = self._wall_solve(S, r, w_prev.ravel().copy(), ctxs, dx)
        q = P - Y @ w
        s = -(Kwq @ q + Kww @ w) / dx
        diss = h * dissipation(q, w)
        wall_work = h * float(np.sum(s * w)) * dx
        conv_work = -h * vol * float(q @ c)
        num = 0.5 * vol * float(np.sum((q - q0) ** 2))
        res = self._law_residual(s, w, ctxs)
        return _Momentum(q, w, s, diss, wall_work, conv_work, num, iters, res)

    def settle_walls(self, state: SimState) -> SimState:
        """Slip velocities and tractions balancing the interior velocity of ``state``.

        Solves ``(K z)_w + s dx = 0`` with the wall laws for fixed interior
        unknowns, so the first step sees a consistent wall strain.
        """
        g = self.grid
        ff = self.d.faces(state.b, state.omega, state.t)
        mc, mk = self.d.visc_coefficients(ff)
        op = viscous_operator(mc, mk, g)
        _, _, Kwq, Kww = op.blocks()
        q = pack(state.u, state.v, None, self.inc_v)
        r = Kwq @ q
        w, _ = self._wall_solve(Kww, r, state.wall_vt.ravel().copy(),
                                self._contexts(ff, state.t), g.dx)
        s = -(r + Kww @ w) / g.dx
        out = state.copy()
        out.wall_vt = w.reshape(2, g.nx)
        out.wall_s = s.reshape(2, g.nx)
        return out

    def kinetic(self, u, v) -> float:
        vol = self.grid.cell_volume
        return 0.5 * vol * (float(np.sum(u * u)) + float(np.sum(v[1:-1] * v[1:-1])))

    def kinetic_cells(self, u, v) -> np.ndarray:
        uu = 0.5 * (u * u + roll(u * u, -1))
        vv = 0.5 * (v[1:] ** 2 + v[:-1] ** 2)
        return 0.5 * (uu + vv)

    # -- full step -------------------------------------------------------------
    def step(self, state: SimState) -> tuple[SimState, StepInfo]:
        h = self.opt.dt
        g = self.grid
        t_new = state.t + h
        u0, v0, b0, om0 = state.u, state.v, state.b, state.omega
        if self.cfl(u0, v0) > self.opt.cfl_guard:
            raise CFLError(f"CFL number {self.cfl(u0, v0):.3g} exceeds guard {self.opt.cfl_guard}")
        if self.opt.formulation is Formulation.EFORM:
            return self._step_eform(state)
        strang = self.opt.splitting is Splitting.STRANG
        if strang:
            b1, om1, prod_a, sink_a = self.react_half(b0, om0, u0, v0, state.wall_vt, 0.5 * h)
        else:
            b1, om1, prod_a, sink_a = self.react_lie(b0, om0, u0, v0, state.wall_vt, h)
        b2, om2, adv_b, diff_b, diff_abs = self.transport(b1, om1, u0, v0, t_new, h)
        ff = self.d.faces(b2, om2, t_new)
        mom = self.momentum(u0, v0, state.wall_vt, ff, t_new, h)
        u1, v1 = unpack(mom.q, g, self.inc_v)
        num = mom.num_diss
        p = np.zeros(g.shape)
        if g.is2d:
            u1, v1, phi = project(u1, v1, g)
            gx, gy = gradient(phi, g)
            num += 0.5 * g.cell_volume * (float(np.sum(gx * gx)) + float(np.sum(gy * gy)))
            p = phi / h
        w = mom.w.reshape(2, g.nx)
        s = mom.s.reshape(2, g.nx)
        if strang:
            b3, om3, prod_b, sink_b = self.react_half(b2, om2, u1, v1, w, 0.5 * h)
            prod = 0.5 * (prod_a + prod_b)
            sink = 0.5 * (sink_a + sink_b)
        else:
            b3, om3, prod, sink = b2, om2, prod_a, sink_a
        terms = StepTerms(h, b0, b3, adv_b, diff_b, sink, prod, diff_abs)
        new = SimState(t_new, state.step + 1, u1, v1, b3, om3, p, s, w)
        info = StepInfo(h, self.kinetic(u0, v0), self.kinetic(u1, v1), mom.dissipation,
                        mom.wall_work, mom.conv_work, num,
                        h * self.c_e * float(np.sum(sink)) * g.cell_volume,
                        mom.residual, mom.iters, int(np.sum(~(b3 > 0))), terms)
        return new, info

    def kinetic_flux_y(self, u, v, w, s, ff: FaceFields) -> np.ndarray:
        """Flux ``2 nu0 T_k(mu) D(v) v`` through y-faces; wall faces carry ``s w``."""
        g = self.grid
        dxx, dyy, dxy = strain_parts(u, v, w, g)
        nu2 = 2.0 * self.p.nu0
        mu_y = nu2 * t_cut(self.lv.k, ff.mu_y)
        F = np.zeros((g.ny + 1, g.nx))
        dxy_f = 0.5 * (dxy + roll(dxy, -1))[1:-1]
        u_f = 0.25 * (u[1:] + u[:-1] + roll(u[1:], -1) + roll(u[:-1], -1))
        dyy_f = 0.5 * (dyy[1:] + dyy[:-1])
        F[1:-1] = mu_y[1:-1] * (dxy_f * u_f + dyy_f * v[1:-1])
        F[0] = s[0] * w[0]
        F[-1] = -s[1] * w[1]
        return F

    def kinetic_flux_x(self, u, v, w, ff: FaceFields) -> np.ndarray:
        g = self.grid
        dxx, dyy, dxy = strain_parts(u, v, w, g)
        nu2 = 2.0 * self.p.nu0
        mu_x = nu2 * t_cut(self.lv.k, ff.mu_x)
        dxx_f = 0.5 * (dxx + roll(dxx, 1))
        dxy_f = 0.5 * (dxy[1:] + dxy[:-1])
        v_f = 0.25 * (v[1:] + v[:-1] + roll(v[1:], 1) + roll(v[:-1], 1))
        return mu_x * (dxx_f * u + dxy_f * v_f)

    def _step_eform(self, state: SimState) -> tuple[SimState, StepInfo]:
        h = self.opt.dt
        g = self.grid
        d = self.d
        t_new = state.t + h
        u0, v0, b0, om0 = state.u, state.v, state.b, state.omega
        c_e = self.c_e
        if self.prandtl is not None:
            om1 = om0
            om2 = om0
        else:
            om1 = self.omega_react(om0, h)
            ffa = d.faces(b0, om1, t_new)
            ow = d.wall_scalars(t_new)[1]
            sto = d.scalar_stencil(ffa, self.p.kappa1, ow)
            om2 = sto.solve(om1 + h * upwind_tendency(om1, u0, v0, g), h)
        ff = d.faces(b0, om2, t_new)
        mom = self.momentum(u0, v0, state.wall_vt, ff, t_new, h)
        u1, v1 = unpack(mom.q, g, self.inc_v)
        num = mom.num_diss
        p = np.zeros(g.shape)
        if g.is2d:
            u1, v1, phi = project(u1, v1, g)
            gx, gy = gradient(phi, g)
            num += 0.5 * g.cell_volume * (float(np.sum(gx * gx)) + float(np.sum(gy * gy)))
            p = phi / h
        w = mom.w.reshape(2, g.nx)
        s = mom.s.reshape(2, g.nx)
        sink_rate = self.slaved_omega(b0) if self.prandtl is not None else om1
        K0 = self.kinetic_cells(u0, v0)
        K1 = self.kinetic_cells(u1, v1)
        E0 = K0 + c_e * b0
        bw, _ = d.wall_scalars(t_new)
        kw = [0.5 * w[0] ** 2, 0.5 * w[1] ** 2]
        e_walls = [None if bw[i] is None else kw[i] + c_e * bw[i] for i in range(2)]
        k_walls = [None if bw[i] is None else kw[i] for i in range(2)]
        n = self.lv.n
        cy = self.p.kappa3 * t_cut(n, ff.mu_y)
        cx = self.p.kappa3 * t_cut(n, ff.mu_x) if g.is2d else None
        st_e = diffusion_stencil(cy, cx, e_walls, g)
        st_k = diffusion_stencil(cy, cx, k_walls, g)
        Fy = self.kinetic_flux_y(u1, v1, w, s, ff)
        Fx = self.kinetic_flux_x(u1, v1, w, ff) if g.is2d else None
        kin = flux_divergence(Fy, Fx, g)
        adv = np.zeros(g.shape)
        if g.is2d:
            Ey = np.zeros((g.ny + 1, g.nx))
            vi = v1[1:-1]
            Ey[1:-1] = vi * (np.where(vi > 0, E0[:-1], E0[1:]) + 0.5 * (p[1:] + p[:-1]))
            Ex = u1 * (np.where(u1 > 0, roll(E0, 1), E0)
                       + 0.5 * (p + roll(p, 1)))
            adv = -flux_divergence(Ey, Ex, g)
        rhs = E0 + h * (sink_rate * K1 - st_k.apply(K1) + kin + adv)
        E1 = st_e.solve(rhs, h, react=sink_rate)
        b1 = (E1 - K1) / c_e
        # b-form view of the same step (for the defect monitor)
        st_b = d.scalar_stencil(ff, self.p.kappa3, bw)
        mu_c = ff.mu_c
        prod = self.d_production(mu_c, strain_squared(u1, v1, w, g))
        sink = sink_rate * b1
        terms = StepTerms(h, b0, b1, upwind_tendency(b0, u0, v0, g), st_b.apply(b1), sink, prod,
                          st_b.magnitude(b1))
        new = SimState(t_new, state.step + 1, u1, v1, b1, om2, p, s, w)
        info = StepInfo(h, self.kinetic(u0, v0), self.kinetic(u1, v1), mom.dissipation,
                        mom.wall_work, mom.conv_work, num,
                        h * c_e * float(np.sum(sink)) * g.cell_volume,
                        mom.residual, mom.iters, int(np.sum(~(b1 > 0))), terms)
        return new, info


def step(state: SimState, scenario: Scenario, options: SchemeOptions | None = None) -> SimState:
    """Advance ``state`` by one step of ``scenario`` (optionally with other options)."""
    return Stepper(scenario, options).step(state)[0]


# run loop ----------------------------------------------------------------------

ENERGY_COLUMNS = (
    "step", "t", "kinetic", "turbulent", "total", "dissipation", "wall_work",
    "convective_work", "numerical_dissipation", "sink", "residual",
    "omega_min", "omega_max", "b_min", "b_max", "div_max",
    "defect_min", "defect_scale", "b_nonpositive", "wall_residual", "wall_iters",
    "ln_b", "budget_dissipation", "budget_grad_b", "budget_grad_omega", "budget_wall",
)


@dataclass
class RunResult:
    """Outcome of :func:`run`.

    ``states`` holds the snapshots (every state when ``keep_all``), ``rows``
    one energy-table row per step including step 0, ``terms`` the
    per-step b budgets when ``keep_terms``.
    """

    scenario: Scenario
    states: list
    rows: list
    terms: list = field(default_factory=list)
    report: object = None

    @property
    def final(self) -> SimState:
        return self.states[-1]


def _budgets(stepper: Stepper, st: SimState):
    """Instantaneous budget integrands: ln b, dissipation, weighted grad b/omega."""
    g = stepper.grid
    d = stepper.d
    vol = g.cell_volume
    b, om = st.b, st.omega
    with np.errstate(all="ignore"):
        lnb = float(np.sum(np.abs(np.log(b)))) * vol if np.all(b > 0) else math.inf
        try:
            ff = d.faces(b, om, st.t)
        except KolmoError:
            return lnb, math.nan, math.nan, math.nan
        d2 = strain_squared(st.u, st.v, st.wall_vt, g)
        diss = float(np.sum((1.0 + 1.0 / b) * t_cut(stepper.lv.k, ff.mu_c) * d2)) * vol
        bw, ow = d.wall_scalars(st.t)

        def weighted(phi, walls, weight_y, weight_x):
            one = np.ones_like(ff.mu_y)
            Fy = _grad_y(phi, walls, g)
            tot = float(np.sum(weight_y[1:-1] * Fy[1:-1] ** 2)) * vol
            for j, row in ((0, 0), (1, -1)):
                if walls[j] is not None:
                    tot += float(np.sum(weight_y[row] * Fy[row] ** 2)) * 0.5 * vol
            if g.is2d:
                gx = (phi - roll(phi, 1)) / g.dx
                tot += float(np.sum(weight_x * gx * gx)) * vol
            del one
            return tot

        wy = ff.mu_y * ff.b_y ** -1.5
        wx = ff.mu_x * ff.b_x ** -1.5
        gb = weighted(b, bw, wy, wx)
        go = weighted(om, ow, ff.mu_y, ff.mu_x)
    return lnb, diss, gb, go


def _grad_y(phi, walls, g: Grid):
    F = np.zeros((g.ny + 1, g.nx))
    F[1:-1] = (phi[1:] - phi[:-1]) / g.dy
    if walls[0] is not None:
        F[0] = (phi[0] - walls[0]) * (2.0 / g.dy)
    if walls[1] is not None:
        F[-1] = (walls[1] - phi[-1]) * (2.0 / g.dy)
    return F


def _row(stepper: Stepper, st: SimState, acc: dict, info: StepInfo | None, k0: float) -> dict:
    g = stepper.grid
    vol = g.cell_volume
    kin = stepper.kinetic(st.u, st.v)
    turb = stepper.c_e * float(np.sum(st.b)) * vol
    lnb, diss_b, gb, go = _budgets(stepper, st)
    if info is not None:
        h = info.dt
        acc["dissipation"] += info.dissipation
        acc["wall_work"] += info.wall_work
        acc["convective_work"] += info.convective_work
        acc["numerical_dissipation"] += info.numerical_dissipation
        acc["sink"] += info.sink
        acc["budget_dissipation"] += h * diss_b
        acc["budget_grad_b"] += h * gb
        acc["budget_grad_omega"] += h * go
        dfield = info.terms.defect()
        defect_min = float(np.min(dfield))
        defect_scale = info.terms.scale()
        wall_res = info.wall_residual
        iters = info.wall_iters
        nonpos = info.b_nonpositive
    else:
        defect_min, defect_scale, wall_res, iters = 0.0, 0.0, 0.0, 0
        nonpos = int(np.sum(~(st.b > 0)))
    residual = (kin - k0 + acc["dissipation"] + acc["wall_work"] + acc["convective_work"]
                + acc["numerical_dissipation"])
    div = float(np.max(np.abs(divergence(st.u, st.v, g)))) if g.is2d else 0.0
    row = {
        "step": st.step, "t": st.t, "kinetic": kin, "turbulent": turb, "total": kin + turb,
        "dissipation": acc["dissipation"], "wall_work": acc["wall_work"],
        "convective_work": acc["convective_work"],
        "numerical_dissipation": acc["numerical_dissipation"], "sink": acc["sink"],
        "residual": residual,
        "omega_min": float(np.min(st.omega)), "omega_max": float(np.max(st.omega)),
        "b_min": float(np.min(st.b)), "b_max": float(np.max(st.b)), "div_max": div,
        "defect_min": defect_min, "defect_scale": defect_scale, "b_nonpositive": nonpos,
        "wall_residual": wall_res, "wall_iters": iters, "ln_b": lnb,
        "budget_dissipation": acc["budget_dissipation"], "budget_grad_b": acc["budget_grad_b"],
        "budget_grad_omega": acc["budget_grad_omega"], "budget_wall": acc["wall_work"],
    }
    return {k: int(v) if k in _INT_COLUMNS else float(v) for k, v in row.items()}


_INT_COLUMNS = frozenset(("step", "b_nonpositive", "wall_iters"))


def run(scenario: Scenario, *, state: SimState | None = None, keep_all: bool = False,
        keep_terms: bool = False, on_snapshot=None, report: bool = False) -> RunResult:
    """Advance ``scenario`` from its initial state (or ``state``) to ``t_end``.

    Parameters
    ----------
    keep_all : bool
        Keep every state instead of the snapshots of the output plan.
    keep_terms : bool
        Keep the per-step :class:`StepTerms`.
    on_snapshot : callable, optional
        Called with each snapshot state as it is produced.
    report : bool
        Attach a diagnostics report to the result.

    Raises
    ------
    RunAborted
        A step failed; carries the last good state.
    """
    stepper = Stepper(scenario)
    if state is None:
        try:
            st = stepper.settle_walls(initial_state(scenario))
        except KolmoError as exc:
            raise RunAborted(0, str(exc), initial_state(scenario)) from exc
    else:
        st = state.copy()
    every = max(1, scenario.output.snapshot_every)
    acc = dict.fromkeys(("dissipation", "wall_work", "convective_work", "numerical_dissipation",
                         "sink", "budget_dissipation", "budget_grad_b", "budget_grad_omega"), 0.0)
    k0 = stepper.kinetic(st.u, st.v)
    rows = [_row(stepper, st, acc, None, k0)]
    states = [st]
    terms = []
    if on_snapshot is not None:
        on_snapshot(st)
    n_steps = scenario.n_steps - st.step if state is not None else scenario.n_steps
    for _ in range(max(n_steps, 0)):
        try:
            with np.errstate(invalid="ignore", divide="ignore"):
                new, info = stepper.step(st)
        except KolmoError as exc:
            raise RunAborted(st.step + 1, str(exc), st, rows) from exc
        rows.append(_row(stepper, new, acc, info, k0))
        if keep_terms:
            terms.append(info.terms)
        st = new
        last = _ == n_steps - 1
        if keep_all or st.step % every == 0 or last:
            states.append(st)
            if on_snapshot is not None:
                on_snapshot(st)
    result = RunResult(scenario, states, rows, terms)
    if report:
        from .diagnostics import build_report
        result.report = build_report(scenario, result.states, rows)
    return result
