"""One-equation reduction with a prescribed mixing length.

With ``omega = c sqrt(b) / ell`` the two-equation coefficients become
functions of ``b`` alone: ``b / omega = (ell / c) sqrt(b)`` and
``b omega = (c / ell) b sqrt(b)``. In the turbulent kinetic energy
``k = 3 b / 2`` these are the classical ``sqrt(k)`` and ``k sqrt(k)`` laws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import PrandtlParams, Scenario, initial_state, wall_data
from .cutoffs import pos_part
from .diagnostics import CheckRecord
from .errors import InputError
from .stepper import RunResult, run

__all__ = [
    "PrandtlParams",
    "ReducedCoefficients",
    "reduce_coefficients",
    "run_prandtl",
    "consistency_check",
]


@dataclass(frozen=True)
class ReducedCoefficients:
    """Coefficient maps of the reduced model for given ``(ell, c)``."""

    ell: float
    c: float

    def omega(self, b):
        return self.c * np.sqrt(pos_part(b)) / self.ell

    def diffusivity(self, b):
        """``(ell / c) sqrt(b)``, the value of ``b / omega``."""
        return (self.ell / self.c) * np.sqrt(pos_part(b))

    def sink(self, b):
        """``(c / ell) b sqrt(b)``, the value of ``b omega``."""
        bp = pos_part(b)
        return (self.c / self.ell) * bp * np.sqrt(bp)

    # k = 3 b / 2
    def nu_k(self, k):
        return self.diffusivity(2.0 * np.asarray(k, dtype=float) / 3.0)

    def mu_k(self, k):
        return self.nu_k(k)

    def eps_k(self, k):
        """Dissipation of ``k``: ``(3/2) sink(b)`` at ``b = 2 k / 3``."""
        return 1.5 * self.sink(2.0 * np.asarray(k, dtype=float) / 3.0)


def reduce_coefficients(pp: PrandtlParams) -> ReducedCoefficients:
    """Coefficient maps of the reduced model.

    Examples
    --------
    >>> rc = reduce_coefficients(PrandtlParams(ell=2.0, c=2.0))
    >>> float(rc.diffusivity(4.0)), float(rc.sink(4.0)), float(rc.omega(9.0))
    (2.0, 8.0, 3.0)
    """
    return ReducedCoefficients(pp.ell, pp.c)


def homogeneous_decay(b0: float, t, pp: PrandtlParams):
    """``b' = -(c / ell) b^(3/2)``: ``b = b0 / (1 + t (c / ell) sqrt(b0) / 2)^2``."""
    return b0 / (1.0 + 0.5 * np.asarray(t, dtype=float) * (pp.c / pp.ell) * math.sqrt(b0)) ** 2


def run_prandtl(scenario: Scenario, pp: PrandtlParams | None = None, **kw) -> RunResult:
    """Integrate the reduced ``(u, b)`` system with the two-equation stepper.

    ``omega`` is slaved to ``b`` after every substep; the sink uses the same
    implicit quotient as the two-equation model, so ``b`` stays nonnegative.
    """
    if scenario.grid.is2d:
        raise InputError("the one-equation model runs in the 1D channel only")
    pp = pp or scenario.prandtl or PrandtlParams()
    return run(replace(scenario, model="prandtl", prandtl=pp), **kw)


def consistency_check(scenario: Scenario, pp: PrandtlParams, tol: float = 1e-12) -> CheckRecord:
    """Compare two-equation coefficients with the reduced maps at ``t = 0``.

    The comparison is algebraic. When the scenario's ``omega`` (initial or
    wall data) is not slaved to ``c sqrt(b) / ell`` the mismatch is
    reported and the record is informational.
    """
    rc = reduce_coefficients(pp)
    st = initial_state(replace(scenario, model="kolmogorov"))
    b, om = st.b, st.omega
    gaps = [_rel(b / om, rc.diffusivity(b)), _rel(b * om, rc.sink(b))]
    slaved = _rel(om, rc.omega(b)) <= tol
    bw, ow = wall_data(scenario, 0.0)
    for wb, wo in zip(bw, ow):
        if wb is not None:
            gaps += [_rel(wb / wo, rc.diffusivity(wb)), _rel(wb * wo, rc.sink(wb))]
            slaved = slaved and _rel(wo, rc.omega(wb)) <= tol
    worst = max(gaps)
    rec = CheckRecord("prandtl_consistency", "prandtl", worst, tol, bool(worst <= tol))
    if not slaved:
        rec.informational = True
        rec.detail = "omega is not slaved to c sqrt(b) / ell; mismatch reported only"
    return rec


def _rel(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-300)
    return float(np.max(np.abs(a - b))) / scale
