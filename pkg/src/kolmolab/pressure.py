"""Discrete projection, Neumann-Poisson solves and the pressure split (2D channel).

The discrete Laplacian is ``L = D G`` with ``D`` the cell divergence of a
staggered field and ``G`` the face gradient with zero normal component
at the walls, so projection and Poisson solves are exactly compatible.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .core import Grid, Scenario, SimState, divergence
from .errors import PoissonError
from .operators import Discretization, convection_force, pack, unpack

__all__ = [
    "gradient",
    "laplacian",
    "neumann_poisson",
    "project",
    "PressureParts",
    "decompose_pressure",
]

COMPAT_TOL = 1e-12
SOLVE_TOL = 1e-11


def gradient(phi: np.ndarray, grid: Grid):
    """Face gradient: ``(d phi/dx)`` on x-faces and ``(d phi/dy)`` on y-faces.

    The y-component has shape ``(ny + 1, nx)`` with zero wall rows.
    """
    gx = (phi - np.roll(phi, 1, axis=1)) / grid.dx
    gy = np.zeros((grid.ny + 1, grid.nx))
    gy[1:-1] = (phi[1:] - phi[:-1]) / grid.dy
    return gx, gy


def laplacian(phi: np.ndarray, grid: Grid) -> np.ndarray:
    """Homogeneous-Neumann five-point Laplacian ``D G phi``."""
    gx, gy = gradient(phi, grid)
    return divergence(gx, gy, grid)


@functools.lru_cache(maxsize=8)
def _factor(ny: int, nx: int, dx: float, dy: float):
    n = ny * nx
    idx = np.arange(n).reshape(ny, nx)
    rows, cols, vals = [], [], []
    cx, cy = 1.0 / dx**2, 1.0 / dy**2
    diag = np.zeros((ny, nx))
    if nx > 1:
        for shift in (1, -1):
            rows.append(idx.ravel())
            cols.append(np.roll(idx, shift, axis=1).ravel())
            vals.append(np.full(n, cx))
        diag -= 2 * cx
    rows += [idx[1:].ravel(), idx[:-1].ravel()]
    cols += [idx[:-1].ravel(), idx[1:].ravel()]
    vals += [np.full((ny - 1) * nx, cy)] * 2
    diag[1:] -= cy
    diag[:-1] -= cy
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag.ravel())
    mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n, n)).tolil()
    # gauge: pin cell 0 with a row of the same scale as the operator
    mat[0, :] = 0.0
    mat[0, 0] = cy
    return splu(mat.tocsc())


def neumann_poisson(rhs: np.ndarray, grid: Grid, wall_flux: np.ndarray | None = None,
                    compat_tol: float = COMPAT_TOL) -> np.ndarray:
    """Mean-zero solution of ``L phi = rhs`` with Neumann wall data.

    Parameters
    ----------
    rhs : ndarray, shape (ny, nx)
    grid : Grid
    wall_flux : ndarray, shape (2, nx), optional
        Inward normal derivative at the bottom and top walls.
        Compatibility requires ``sum(rhs) vol + sum(wall_flux) dx = 0``.

    Raises
    ------
    PoissonError
        Incompatible data or inaccurate solve.
    """
    rhs = np.asarray(rhs, dtype=float)
    b = rhs.copy()
    vol = grid.cell_volume
    total = float(np.sum(rhs)) * vol
    scale = float(np.sum(np.abs(rhs))) * vol
    if wall_flux is not None:
        wall_flux = np.asarray(wall_flux, dtype=float)
        b[0] += wall_flux[0] / grid.dy
        b[-1] += wall_flux[1] / grid.dy
        total += float(np.sum(wall_flux)) * grid.dx
        scale += float(np.sum(np.abs(wall_flux))) * grid.dx
    if abs(total) > compat_tol * max(scale, np.finfo(float).tiny):
        raise PoissonError(f"incompatible Neumann data: net source {total:.3e} "
                           f"(scale {scale:.3e})")
    if scale == 0.0:
        return np.zeros(grid.shape)
    # remove the roundoff-level net source before solving
    b -= float(np.mean(b))
    lu = _factor(grid.ny, grid.nx, grid.dx, grid.dy)
    work = b.ravel().copy()
    work[0] = 0.0
    phi = lu.solve(work).reshape(grid.shape)
    phi -= float(np.mean(phi))
    res = float(np.max(np.abs(laplacian(phi, grid) - b)))
    if not np.isfinite(res) or res > SOLVE_TOL * max(float(np.max(np.abs(b))), 1e-300):
        raise PoissonError(f"Poisson residual {res:.3e} above tolerance")
    return phi


def project(u: np.ndarray, v: np.ndarray, grid: Grid):
    """Remove the gradient part of a staggered field.

    Returns ``(u_s, v_s, phi)`` with ``u_s = u - G phi`` discretely
    divergence-free and ``phi`` mean-zero. Wall rows of ``v`` must be zero.
    """
    if np.any(v[0] != 0) or np.any(v[-1] != 0):
        raise PoissonError("tentative velocity has a nonzero normal wall component")
    phi = neumann_poisson(_balanced_divergence(u, v, grid), grid, compat_tol=1.0)
    gx, gy = gradient(phi, grid)
    return u - gx, v - gy, phi


@dataclass
class PressureParts:
    """Viscous, convective and boundary pressure parts of a state.

    ``total`` is the projection pressure of the full instantaneous force and
    ``p3 = total - p1 - p2``; ``p3_direct`` is the part obtained directly
    from the wall traction source.
    """

    p1: np.ndarray
    p2: np.ndarray
    p3: np.ndarray
    total: np.ndarray
    p3_direct: np.ndarray
    grid: Grid

    def mean_defects(self) -> dict:
        """``|sum(part)| / sum(|part|)`` for each part (0 for a zero part)."""
        out = {}
        for name in ("p1", "p2", "p3"):
            arr = getattr(self, name)
            norm = float(np.sum(np.abs(arr)))
            out[name] = 0.0 if norm == 0 else abs(float(np.sum(arr))) / norm
        return out

    def sum_defect(self) -> float:
        """Relative max-norm mismatch of ``p1 + p2 + p3_direct`` against ``total``."""
        norm = float(np.max(np.abs(self.total)))
        gap = float(np.max(np.abs(self.p1 + self.p2 + self.p3_direct - self.total)))
        return 0.0 if norm == 0 and gap == 0 else gap / max(norm, 1e-300)

    def subtraction_defect(self) -> float:
        norm = float(np.max(np.abs(self.total)))
        gap = float(np.max(np.abs(self.p1 + self.p2 + self.p3 - self.total)))
        return 0.0 if norm == 0 and gap == 0 else gap / max(norm, 1e-300)

    def harmonic_defect(self, margin: int = 2) -> float:
        """``max |L p3|`` over cells at least ``margin`` cells from a wall, over ``max |p3|``."""
        norm = float(np.max(np.abs(self.p3)))
        lap = laplacian(self.p3, self.grid)[margin: self.grid.ny - margin]
        worst = float(np.max(np.abs(lap))) if lap.size else 0.0
        return 0.0 if norm == 0 and worst == 0 else worst / max(norm, 1e-300)

    def direct_gap(self) -> float:
        """Relative difference between ``p3`` and ``p3_direct`` (measurement only)."""
        norm = float(np.max(np.abs(self.p3)))
        gap = float(np.max(np.abs(self.p3 - self.p3_direct)))
        return 0.0 if norm == 0 and gap == 0 else gap / max(norm, 1e-300)


def force_sources(state: SimState, scenario: Scenario):
    """Per-volume viscous, convective and wall forces on ``(u, v_int)``."""
    d = Discretization(scenario)
    g = d.grid
    ff = d.faces(state.b, state.omega, state.t)
    op = d.viscous_operator(ff)
    q = pack(state.u, state.v, None, True)
    nq = op.nq
    visc = unpack(-(op.K_inner[:nq, :nq] @ q) / op.mass, g, True)
    cu, cv = convection_force(state.u, state.v, d.levels.k, g)
    conv_v = np.zeros((g.ny + 1, g.nx))
    conv_v[1:-1] = cv
    wu = np.zeros(g.shape)
    wu[0] = -state.wall_s[0] / g.dy
    wu[-1] = -state.wall_s[1] / g.dy
    return visc, (cu, conv_v), (wu, np.zeros((g.ny + 1, g.nx)))


def _balanced_divergence(u: np.ndarray, v: np.ndarray, grid: Grid) -> np.ndarray:
    """Divergence with its roundoff net source removed.

    The net source telescopes to the wall flux, which is zero here, so it is
    checked against the size of the face fluxes rather than of the divergence.
    """
    div = divergence(u, v, grid)
    flux = float(np.sum(np.abs(u))) * grid.dy + float(np.sum(np.abs(v))) * grid.dx
    if abs(float(np.sum(div))) * grid.cell_volume > 1e-12 * max(flux, 1e-300):
        raise PoissonError("staggered field has a net source")
    return div - float(np.mean(div))


def _source_pressure(f, grid: Grid) -> np.ndarray:
    return neumann_poisson(_balanced_divergence(f[0], f[1], grid), grid, compat_tol=1.0)


def decompose_pressure(state: SimState, scenario: Scenario) -> PressureParts:
    """Split the instantaneous pressure of a projected 2D state into three parts."""
    g = scenario.grid
    if not g.is2d:
        raise ValueError("pressure decomposition needs the 2D channel")
    visc, conv, wall = force_sources(state, scenario)
    fu = visc[0] + conv[0] + wall[0]
    fv = visc[1] + conv[1] + wall[1]
    _, _, total = project(fu, fv, g)
    p1 = _source_pressure(visc, g)
    p2 = _source_pressure(conv, g)
    p3 = total - p1 - p2
    p3d = _source_pressure(wall, g)
    return PressureParts(p1, p2, p3, total, p3d, g)
