"""Spatial operators on the staggered channel grid.

Conventions
-----------
* Scalars ``b``, ``omega`` live on cell centers, shape ``(ny, nx)``.
* Face values of scalars are arithmetic means of the two neighbours; at a
  Dirichlet wall the neighbour is the wall datum at half-cell distance,
  at a zero-flux wall the face value is the adjacent cell value.
* Viscous forces come from the dissipation quadratic form
  ``Phi(z) = z^T K z = sum 2 nu0 T_k(mu) |D(v)|^2 vol`` over the unknown
  vector ``z = (u, v_interior, w)`` where ``w`` are the wall slip
  velocities (bottom then top, ``nx`` each). The force on the interior
  unknowns is ``-(K z)`` and the wall balance reads ``(K z)_w + s dx = 0``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack
from scipy.sparse.linalg import splu

from .core import Grid, ModelParams, RegLevels, Scenario, SimState, Stage, WallKind, wall_data
from .cutoffs import g_cut, pos_part, t_cut
from .errors import DegenerateStateError, SolverError

__all__ = [
    "Tendencies",
    "mu_eff",
    "Discretization",
    "Stencil",
    "FaceFields",
    "momentum_rhs",
    "b_rhs",
    "omega_rhs",
    "convection_force",
    "upwind_tendency",
    "strain_squared",
    "production",
]


@dataclass
class Tendencies:
    """Time-derivative contributions of one field split by term."""

    name: str
    parts: dict = field(default_factory=dict)

    @property
    def total(self) -> np.ndarray:
        items = list(self.parts.values())
        out = np.zeros_like(items[0])
        for x in items:
            out = out + x
        return out


def roll(a: np.ndarray, shift: int) -> np.ndarray:
    """Periodic shift along x; the identity for a single column."""
    if a.shape[1] == 1:
        return a
    return np.roll(a, shift, axis=1)


def _first_bad(mask: np.ndarray):
    idx = np.argwhere(mask)
    return tuple(int(i) for i in idx[0]) if idx.size else None


def mu_eff(b, omega, levels: RegLevels, stage: Stage | None = None) -> np.ndarray:
    """Effective viscosity for the given stage.

    ``b / omega`` (full and k stages), ``b / omega + 1/n`` (nk stage) and
    ``b_+ / (omega_+ + 1/m) + 1/n`` (mnk stage, defined everywhere).

    Raises
    ------
    DegenerateStateError
        Non-positive ``omega`` outside the mnk stage.
    """
    stage = levels.stage if stage is None else Stage(stage)
    b = np.asarray(b, dtype=float)
    om = np.asarray(omega, dtype=float)
    if stage is Stage.MNK:
        return pos_part(b) / (pos_part(om) + 1.0 / levels.m) + 1.0 / levels.n
    bad = ~(om > 0)
    if np.any(bad):
        cell = _first_bad(np.atleast_1d(bad))
        raise DegenerateStateError(f"omega must be positive at stage {stage.value}", cell)
    mu = b / om
    if stage is Stage.NK:
        mu = mu + 1.0 / levels.n
    return mu


# face values ---------------------------------------------------------------

def face_y(phi: np.ndarray, walls) -> np.ndarray:
    """Scalar on y-faces ``(ny + 1, nx)``; ``walls`` holds Dirichlet data or None."""
    out = np.empty((phi.shape[0] + 1, phi.shape[1]))
    out[1:-1] = 0.5 * (phi[1:] + phi[:-1])
    out[0] = phi[0] if walls[0] is None else 0.5 * (phi[0] + walls[0])
    out[-1] = phi[-1] if walls[1] is None else 0.5 * (phi[-1] + walls[1])
    return out


def face_x(phi: np.ndarray) -> np.ndarray:
    """Scalar on x-faces; face ``i`` sits between cells ``i - 1`` and ``i``."""
    return 0.5 * (phi + roll(phi, 1))


def corners(fy: np.ndarray) -> np.ndarray:
    """Corner values ``(ny + 1, nx)`` at ``(x_i, y_j)`` from y-face values."""
    return 0.5 * (fy + roll(fy, 1))


@dataclass
class FaceFields:
    """Cell, face and corner values of ``b`` and ``omega`` with their ``mu``."""

    b_c: np.ndarray
    om_c: np.ndarray
    b_y: np.ndarray
    om_y: np.ndarray
    b_x: np.ndarray
    om_x: np.ndarray
    b_k: np.ndarray
    om_k: np.ndarray
    mu_c: np.ndarray
    mu_y: np.ndarray
    mu_x: np.ndarray
    mu_k: np.ndarray


# scalar stencils -------------------------------------------------------------

@dataclass
class Stencil:
    """Five-point operator ``A phi = C phi + S phi_s + N phi_n + W phi_w + E phi_e + r``.

    ``S``/``N`` couple to ``j - 1``/``j + 1``, ``W``/``E`` to ``i - 1``/``i + 1``
    (periodic). ``r`` holds the Dirichlet wall contributions.
    """

    C: np.ndarray
    S: np.ndarray
    N: np.ndarray
    W: np.ndarray
    E: np.ndarray
    r: np.ndarray

    def apply(self, phi: np.ndarray, with_walls: bool = True) -> np.ndarray:
        out = self.C * phi
        out[1:] += self.S[1:] * phi[:-1]
        out[:-1] += self.N[:-1] * phi[1:]
        if phi.shape[1] > 1:
            out += self.W * roll(phi, 1) + self.E * roll(phi, -1)
        if with_walls:
            out += self.r
        return out

    def magnitude(self, phi: np.ndarray) -> np.ndarray:
        """``apply`` with every coefficient and value replaced by its absolute value."""
        a = np.abs(phi)
        out = np.abs(self.C) * a + np.abs(self.r)
        out[1:] += np.abs(self.S[1:]) * a[:-1]
        out[:-1] += np.abs(self.N[:-1]) * a[1:]
        if phi.shape[1] > 1:
            out += np.abs(self.W) * roll(a, 1) + np.abs(self.E) * roll(a, -1)
        return out

    def solve(self, rhs: np.ndarray, h: float, react: np.ndarray | float = 0.0) -> np.ndarray:
        """Solve ``(1 + h react) phi - h A phi = rhs``."""
        ny, nx = rhs.shape
        diag = 1.0 + h * react - h * self.C
        diag = np.broadcast_to(diag, rhs.shape)
        b = rhs + h * self.r
        if nx == 1:
            return tridiag_solve(-h * self.S[1:, 0], diag[:, 0], -h * self.N[:-1, 0],
                                 b[:, 0]).reshape(ny, 1)
        rows, cs, cn, cw, ce = _neighbours(ny, nx)
        data = np.concatenate([diag.ravel(), -h * self.S.ravel()[cs[1]],
                               -h * self.N.ravel()[cn[1]], -h * self.W.ravel(),
                               -h * self.E.ravel()])
        ri = np.concatenate([rows, cs[1], cn[1], rows, rows])
        ci = np.concatenate([rows, cs[0], cn[0], cw, ce])
        mat = sp.csc_matrix((data, (ri, ci)), shape=(ny * nx, ny * nx))
        try:
            return splu(mat).solve(b.ravel()).reshape(ny, nx)
        except RuntimeError as exc:
            raise SolverError(f"sparse solve failed: {exc}") from exc


def tridiag_solve(lower, diag, upper, rhs):
    """Solve a tridiagonal system (``rhs`` may have several columns)."""
    *_, x, info = lapack.dgtsv(np.array(lower, dtype=float), np.array(diag, dtype=float),
                               np.array(upper, dtype=float), np.array(rhs, dtype=float))
    if info != 0:
        raise SolverError(f"tridiagonal solve failed (info={info})")
    return x


@functools.lru_cache(maxsize=16)
def _neighbours(ny: int, nx: int):
    idx = np.arange(ny * nx).reshape(ny, nx)
    rows = idx.ravel()
    south = (idx[:-1].ravel(), idx[1:].ravel())   # (column, row)
    north = (idx[1:].ravel(), idx[:-1].ravel())
    west = roll(idx, 1).ravel()
    east = roll(idx, -1).ravel()
    return rows, south, north, west, east


def diffusion_stencil(coef_y: np.ndarray, coef_x: np.ndarray | None, walls, grid: Grid) -> Stencil:
    """Stencil of ``div(c grad phi)`` with face coefficients.

    ``walls`` gives the Dirichlet value per wall or None for zero flux.
    """
    ny, nx = grid.shape
    dy2 = grid.dy**2
    S = np.zeros((ny, nx))
    N = np.zeros((ny, nx))
    W = np.zeros((ny, nx))
    E = np.zeros((ny, nx))
    r = np.zeros((ny, nx))
    N[:-1] = coef_y[1:-1] / dy2
    S[1:] = coef_y[1:-1] / dy2
    C = -(S + N)
    if walls[0] is not None:
        c0 = 2.0 * coef_y[0] / dy2
        C[0] -= c0
        r[0] += c0 * walls[0]
    if walls[1] is not None:
        c1 = 2.0 * coef_y[-1] / dy2
        C[-1] -= c1
        r[-1] += c1 * walls[1]
    if nx > 1 and coef_x is not None:
        dx2 = grid.dx**2
        W = coef_x / dx2
        E = roll(coef_x, -1) / dx2
        C -= W + E
    return Stencil(C, S, N, W, E, r)


def diffusive_flux_y(phi: np.ndarray, coef_y: np.ndarray, walls, grid: Grid) -> np.ndarray:
    """``c d(phi)/dy`` on y-faces; zero on zero-flux walls."""
    dy = grid.dy
    F = np.zeros_like(coef_y)
    F[1:-1] = coef_y[1:-1] * (phi[1:] - phi[:-1]) / dy
    if walls[0] is not None:
        F[0] = coef_y[0] * (phi[0] - walls[0]) * (2.0 / dy)
    if walls[1] is not None:
        F[-1] = coef_y[-1] * (walls[1] - phi[-1]) * (2.0 / dy)
    return F


def flux_divergence(Fy: np.ndarray, Fx: np.ndarray | None, grid: Grid) -> np.ndarray:
    out = (Fy[1:] - Fy[:-1]) / grid.dy
    if Fx is not None and grid.nx > 1:
        out = out + (roll(Fx, -1) - Fx) / grid.dx
    return out


def upwind_tendency(phi: np.ndarray, u: np.ndarray, v: np.ndarray, grid: Grid) -> np.ndarray:
    """``-div(phi v)`` with first-order upwind face values (zero at walls)."""
    if not grid.is2d:
        return np.zeros_like(phi)
    Fy = np.zeros((grid.ny + 1, grid.nx))
    vi = v[1:-1]
    Fy[1:-1] = vi * np.where(vi > 0, phi[:-1], phi[1:])
    Fx = u * np.where(u > 0, roll(phi, 1), phi)
    return -flux_divergence(Fy, Fx, grid)


# momentum ------------------------------------------------------------------

def strain_parts(u: np.ndarray, v: np.ndarray, w: np.ndarray, grid: Grid):
    """``D_xx``, ``D_yy`` at centers and ``D_xy`` at corners.

    ``w`` has shape ``(2, nx)``: slip velocities of the bottom and top walls.
    """
    dx, dy = grid.dx, grid.dy
    dxx = (roll(u, -1) - u) / dx
    dyy = (v[1:] - v[:-1]) / dy
    dxy = np.empty((grid.ny + 1, grid.nx))
    dxy[1:-1] = 0.5 * ((u[1:] - u[:-1]) / dy + (v[1:-1] - roll(v[1:-1], 1)) / dx)
    dxy[0] = (u[0] - w[0]) / dy
    dxy[-1] = (w[1] - u[-1]) / dy
    return dxx, dyy, dxy


def strain_squared(u: np.ndarray, v: np.ndarray, w: np.ndarray, grid: Grid) -> np.ndarray:
    """Cell-centered ``|D(v)|^2`` (``u_y^2 / 2`` in the 1D channel)."""
    dxx, dyy, dxy = strain_parts(u, v, w, grid)
    sq = dxy * dxy
    avg = 0.5 * (sq[1:] + sq[:-1])
    avg = 0.5 * (avg + roll(avg, -1))
    return dxx * dxx + dyy * dyy + 2.0 * avg


def production(mu_c: np.ndarray, d2: np.ndarray, levels: RegLevels,
               params: ModelParams) -> np.ndarray:
    """``kappa4 T_k(mu) |D|^2 / (1 + |D|^2 / n)``."""
    p = params.effective()
    out = p.kappa4 * t_cut(levels.k, mu_c) * d2
    if math.isfinite(levels.n):
        out = out / (1.0 + d2 / levels.n)
    return out


def convection_force(u: np.ndarray, v: np.ndarray, k: float, grid: Grid):
    """Divergence-form momentum convection ``div(G_k(|v|^2) v v)``.

    Returns the force per unit volume on ``u`` faces ``(ny, nx)`` and on
    interior ``v`` faces ``(ny - 1, nx)``. Identically zero in 1D.
    """
    if not grid.is2d:
        return np.zeros_like(u), np.zeros((grid.ny - 1, grid.nx))
    dx, dy = grid.dx, grid.dy
    uc = 0.5 * (u + roll(u, -1))
    vc = 0.5 * (v[1:] + v[:-1])
    gc = g_cut(k, uc * uc + vc * vc)
    fxx = gc * uc * uc
    fyy = gc * vc * vc
    ucor = np.zeros((grid.ny + 1, grid.nx))
    ucor[1:-1] = 0.5 * (u[1:] + u[:-1])
    vcor = 0.5 * (v + roll(v, 1))
    vcor[0] = 0.0
    vcor[-1] = 0.0
    gk = g_cut(k, ucor * ucor + vcor * vcor)
    fxy = gk * ucor * vcor
    cu = (fxx - roll(fxx, 1)) / dx + (fxy[1:] - fxy[:-1]) / dy
    cv = (roll(fxy, -1) - fxy)[1:-1] / dx + (fyy[1:] - fyy[:-1]) / dy
    return -cu, -cv


@functools.lru_cache(maxsize=8)
def _strain_matrices(ny: int, nx: int, dx: float, dy: float):
    """Sparse maps from ``z = (u, v_int, w)`` to ``D_xx``, ``D_yy``, ``D_xy``."""
    nu = ny * nx
    nv = (ny - 1) * nx
    nz = nu + nv + 2 * nx
    uid = np.arange(nu).reshape(ny, nx)
    vid = nu + np.arange(nv).reshape(ny - 1, nx)
    wid = nu + nv + np.arange(2 * nx).reshape(2, nx)
    cell = np.arange(ny * nx).reshape(ny, nx)

    r, c, d = [], [], []
    if nx > 1:
        r += [cell.ravel(), cell.ravel()]
        c += [roll(uid, -1).ravel(), uid.ravel()]
        d += [np.full(nu, 1.0 / dx), np.full(nu, -1.0 / dx)]
        sxx = sp.csr_matrix((np.concatenate(d), (np.concatenate(r), np.concatenate(c))),
                            shape=(ny * nx, nz))
    else:
        sxx = sp.csr_matrix((ny * nx, nz))

    r, c, d = [], [], []
    if ny > 1:
        r += [cell[:-1].ravel(), cell[1:].ravel()]
        c += [vid.ravel(), vid.ravel()]
        d += [np.full(nv, 1.0 / dy), np.full(nv, -1.0 / dy)]
    syy = sp.csr_matrix((np.concatenate(d), (np.concatenate(r), np.concatenate(c))),
                        shape=(ny * nx, nz))

    corner = np.arange((ny + 1) * nx).reshape(ny + 1, nx)
    r, c, d = [], [], []
    inner = corner[1:-1]
    r += [inner.ravel(), inner.ravel()]
    c += [uid[1:].ravel(), uid[:-1].ravel()]
    d += [np.full(nv, 0.5 / dy), np.full(nv, -0.5 / dy)]
    if nx > 1:
        r += [inner.ravel(), inner.ravel()]
        c += [vid.ravel(), roll(vid, 1).ravel()]
        d += [np.full(nv, 0.5 / dx), np.full(nv, -0.5 / dx)]
    r += [corner[0], corner[0], corner[-1], corner[-1]]
    c += [uid[0], wid[0], wid[1], uid[-1]]
    d += [np.full(nx, 1.0 / dy), np.full(nx, -1.0 / dy), np.full(nx, 1.0 / dy),
          np.full(nx, -1.0 / dy)]
    sxy = sp.csr_matrix((np.concatenate(d), (np.concatenate(r), np.concatenate(c))),
                        shape=((ny + 1) * nx, nz))
    return sxx, syy, sxy


@dataclass
class ViscousOperator:
    """Dissipation form ``K`` split into interior and wall-corner parts.

    Attributes
    ----------
    K : sparse matrix
        Full form over ``z = (u, v_int, w)``.
    K_inner : sparse matrix
        Part without the wall-corner terms (only involves ``u, v_int``).
    nq : int
        Number of interior unknowns.
    mass : ndarray
        Volume of each interior unknown.
    """

    K: sp.csr_matrix
    K_inner: sp.csr_matrix
    nq: int
    mass: np.ndarray
    nx: int

    def blocks(self):
        K = self.K.tocsc()
        nq = self.nq
        return K[:nq, :nq], K[:nq, nq:], K[nq:, :nq].toarray(), K[nq:, nq:].toarray()

    def dissipation(self, z: np.ndarray) -> float:
        return float(z @ (self.K @ z))


def viscous_operator(mu_visc_c: np.ndarray, mu_visc_k: np.ndarray, grid: Grid,
                     include_v: bool | None = None) -> ViscousOperator:
    """Assemble ``K`` from viscosities ``2 nu0 T_k(mu)`` at centers and corners.

    In 1D the wall-normal unknowns are dropped (``v`` is identically zero).
    """
    ny, nx = grid.shape
    dx, dy = grid.dx, grid.dy
    if include_v is None:
        include_v = grid.is2d
    vol = dx * dy
    sxx, syy, sxy = _strain_matrices(ny, nx, dx, dy)
    wc = sp.diags(mu_visc_c.ravel() * vol)
    kvol = np.full((ny + 1, nx), vol)
    kvol[0] = kvol[-1] = 0.5 * vol
    wk_full = mu_visc_k * 2.0 * kvol
    wk_inner = wk_full.copy()
    wk_inner[0] = wk_inner[-1] = 0.0
    base = (sxx.T @ wc @ sxx + syy.T @ wc @ syy).tocsr()
    K = (base + sxy.T @ sp.diags(wk_full.ravel()) @ sxy).tocsr()
    K_inner = (base + sxy.T @ sp.diags(wk_inner.ravel()) @ sxy).tocsr()
    nu_ = ny * nx
    nv = (ny - 1) * nx
    if not include_v:
        keep = np.r_[np.arange(nu_), nu_ + nv + np.arange(2 * nx)]
        K = K[keep][:, keep].tocsr()
        K_inner = K_inner[keep][:, keep].tocsr()
        nq = nu_
    else:
        nq = nu_ + nv
    return ViscousOperator(K, K_inner, nq, np.full(nq, vol), nx)


def pack(u: np.ndarray, v: np.ndarray, w: np.ndarray | None, include_v: bool) -> np.ndarray:
    parts = [u.ravel()]
    if include_v:
        parts.append(v[1:-1].ravel())
    if w is not None:
        parts.append(w.ravel())
    return np.concatenate(parts)


def unpack(q: np.ndarray, grid: Grid, include_v: bool):
    ny, nx = grid.shape
    u = q[: ny * nx].reshape(ny, nx).copy()
    v = np.zeros((ny + 1, nx))
    if include_v:
        v[1:-1] = q[ny * nx: ny * nx + (ny - 1) * nx].reshape(ny - 1, nx)
    return u, v


# scenario-bound discretization -------------------------------------------------

class Discretization:
    """Operators bound to one scenario (grid, constants, levels, walls)."""

    def __init__(self, scenario: Scenario, stage: Stage | None = None):
        self.scenario = scenario
        self.grid = scenario.grid
        self.params = scenario.params.effective()
        self.levels = scenario.levels
        self.stage = scenario.levels.stage if stage is None else Stage(stage)
        self.walls = scenario.boundary.walls
        self.gamma = tuple(w.kind is WallKind.GAMMA for w in self.walls)
        self._walls_cache = None

    # data ---------------------------------------------------------------
    def wall_scalars(self, t: float):
        if self._walls_cache is None or self._walls_cache[0] != t:
            self._walls_cache = (t, wall_data(self.scenario, t))
        return self._walls_cache[1]

    def mu(self, b, om):
        return mu_eff(b, om, self.levels, self.stage)

    def faces(self, b: np.ndarray, om: np.ndarray, t: float) -> FaceFields:
        bw, ow = self.wall_scalars(t)
        b_y, om_y = face_y(b, bw), face_y(om, ow)
        mu = self.mu
        mu_c, mu_y = mu(b, om), mu(b_y, om_y)
        if self.grid.nx == 1:
            # x-averages of a single column are the values themselves
            return FaceFields(b, om, b_y, om_y, b, om, b_y, om_y, mu_c, mu_y, mu_c, mu_y)
        b_x, om_x = face_x(b), face_x(om)
        b_k, om_k = corners(b_y), corners(om_y)
        return FaceFields(b, om, b_y, om_y, b_x, om_x, b_k, om_k,
                          mu_c, mu_y, mu(b_x, om_x), mu(b_k, om_k))

    # scalar operators ------------------------------------------------------
    def scalar_stencil(self, ff: FaceFields, kappa: float, walls) -> Stencil:
        n = self.levels.n
        cy = kappa * t_cut(n, ff.mu_y)
        cx = kappa * t_cut(n, ff.mu_x) if self.grid.is2d else None
        return diffusion_stencil(cy, cx, walls, self.grid)

    def b_sink_rate(self, om: np.ndarray) -> np.ndarray:
        return om

    def omega_sink(self, om: np.ndarray) -> np.ndarray:
        k2 = self.params.kappa2
        if self.stage is Stage.MNK:
            return k2 * t_cut(self.levels.m, om) * pos_part(om)
        return k2 * om * om

    def b_sink(self, b: np.ndarray, om: np.ndarray) -> np.ndarray:
        if self.stage is Stage.MNK:
            return pos_part(b) * om
        return b * om

    def production(self, ff: FaceFields, u, v, w) -> np.ndarray:
        return production(ff.mu_c, strain_squared(u, v, w, self.grid), self.levels, self.params)

    def omega_flux_y(self, ff: FaceFields, om: np.ndarray, b: np.ndarray, walls_b, walls_om,
                     flux_form: str = "direct") -> np.ndarray:
        """Diffusive omega flux on y-faces in either algebraic form."""
        k1 = self.params.kappa1
        n = self.levels.n
        cy = k1 * t_cut(n, ff.mu_y)
        if flux_form == "direct":
            return diffusive_flux_y(om, cy, walls_om, self.grid)
        if flux_form != "reformulated":
            raise ValueError(f"unknown flux form {flux_form!r}")
        if self.stage is not Stage.MNK and np.any(~(ff.om_y > 0)):
            raise DegenerateStateError("reformulated flux needs positive face omega",
                                       _first_bad(~(ff.om_y > 0)))
        prod = b * om
        pw = [None if wb is None else wb * wo for wb, wo in zip(walls_b, walls_om)]
        d_prod = diffusive_flux_y(prod, np.ones_like(cy), pw, self.grid)
        d_b = diffusive_flux_y(b, np.ones_like(cy), walls_b, self.grid)
        d_om = diffusive_flux_y(om, np.ones_like(cy), walls_om, self.grid)
        if self.stage is Stage.MNK:
            denom = ff.om_y + 1.0 / self.levels.m
        else:
            denom = ff.om_y
        core_ = (d_prod - ff.om_y * d_b) / denom
        if math.isfinite(n) and self.stage in (Stage.NK, Stage.MNK):
            core_ = core_ + d_om / n
        mu = ff.mu_y
        safe = np.where(mu == 0, 1.0, mu)
        ratio = np.where(mu == 0, 1.0, t_cut(n, mu) / safe)
        return k1 * ratio * core_

    # momentum ---------------------------------------------------------------
    def visc_coefficients(self, ff: FaceFields):
        nu2 = 2.0 * self.params.nu0
        k = self.levels.k
        return nu2 * t_cut(k, ff.mu_c), nu2 * t_cut(k, ff.mu_k)

    def viscous_operator(self, ff: FaceFields) -> ViscousOperator:
        mc, mk = self.visc_coefficients(ff)
        return viscous_operator(mc, mk, self.grid)


def _disc(scenario: Scenario, stage) -> Discretization:
    return Discretization(scenario, stage)


def momentum_rhs(state: SimState, scenario: Scenario, stage: Stage | None = None) -> Tendencies:
    """Explicit momentum tendency of ``u`` split into its terms.

    Parts: ``convection``, ``viscous`` (interior stresses), ``wall`` (the
    stored traction ``state.wall_s`` acting on the near-wall faces) and,
    in 2D, ``pressure``.
    """
    d = _disc(scenario, stage)
    g = d.grid
    ff = d.faces(state.b, state.omega, state.t)
    op = d.viscous_operator(ff)
    inc = g.is2d
    q = pack(state.u, state.v, None, inc)
    nq = op.nq
    visc = -(op.K_inner[:nq, :nq] @ q) / op.mass
    vu, _ = unpack(visc, g, inc)
    cu, _ = convection_force(state.u, state.v, d.levels.k, g)
    wall = np.zeros_like(state.u)
    wall[0] -= state.wall_s[0] / g.dy
    wall[-1] -= state.wall_s[1] / g.dy
    parts = {"convection": cu, "viscous": vu, "wall": wall}
    if g.is2d:
        parts["pressure"] = -(state.p - roll(state.p, 1)) / g.dx
    return Tendencies("u", parts)


def b_rhs(state: SimState, scenario: Scenario, stage: Stage | None = None) -> Tendencies:
    """Tendency of ``b``: ``convection``, ``diffusion``, ``sink``, ``production``."""
    d = _disc(scenario, stage)
    g = d.grid
    ff = d.faces(state.b, state.omega, state.t)
    bw, _ = d.wall_scalars(state.t)
    st = d.scalar_stencil(ff, d.params.kappa3, bw)
    return Tendencies("b", {
        "convection": upwind_tendency(state.b, state.u, state.v, g),
        "diffusion": st.apply(state.b),
        "sink": -d.b_sink(state.b, state.omega),
        "production": d.production(ff, state.u, state.v, state.wall_vt),
    })


def omega_rhs(state: SimState, scenario: Scenario, stage: Stage | None = None,
              flux_form: str = "direct") -> Tendencies:
    """Tendency of ``omega``: ``convection``, ``diffusion``, ``sink``.

    ``flux_form`` is ``"direct"`` (``mu grad omega``) or ``"reformulated"``
    (``(grad(b omega) - omega grad b) / omega`` with the same truncation).
    """
    d = _disc(scenario, stage)
    g = d.grid
    ff = d.faces(state.b, state.omega, state.t)
    bw, ow = d.wall_scalars(state.t)
    Fy = d.omega_flux_y(ff, state.omega, state.b, bw, ow, flux_form)
    Fx = None
    if g.is2d:
        k1 = d.params.kappa1
        cx = k1 * t_cut(d.levels.n, ff.mu_x)
        if flux_form == "direct":
            Fx = cx * (state.omega - roll(state.omega, 1)) / g.dx
        else:
            bL, oL = roll(state.b, 1), roll(state.omega, 1)
            dprod = (state.b * state.omega - bL * oL) / g.dx
            db = (state.b - bL) / g.dx
            denom = ff.om_x + (1.0 / d.levels.m if d.stage is Stage.MNK else 0.0)
            core_ = (dprod - ff.om_x * db) / denom
            if math.isfinite(d.levels.n) and d.stage in (Stage.NK, Stage.MNK):
                core_ = core_ + (state.omega - oL) / g.dx / d.levels.n
            mu = ff.mu_x
            ratio = np.where(mu == 0, 1.0, t_cut(d.levels.n, mu) / np.where(mu == 0, 1.0, mu))
            Fx = k1 * ratio * core_
    return Tendencies("omega", {
        "convection": upwind_tendency(state.omega, state.u, state.v, g),
        "diffusion": flux_divergence(Fy, Fx, g),
        "sink": -d.omega_sink(state.omega),
    })
