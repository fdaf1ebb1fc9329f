"""Truncation functions used by the regularized model.

Every function accepts scalars or numpy arrays and broadcasts. A level of
``math.inf`` selects the identity cut-off.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "t_cut",
    "theta_cut",
    "g_smooth",
    "g_cut",
    "gamma_cut",
    "hermite_integral",
    "pos_part",
    "neg_part",
]


def _check_level(m: float) -> None:
    if not m > 0:
        raise ValueError(f"cut-off level must be positive, got {m!r}")


def _out(x, like):
    # scalars in, scalars out
    if np.ndim(like) == 0 and np.ndim(x) == 0:
        return float(x)
    return x


def t_cut(m: float, s):
    """Clamp ``s`` to ``[-m, m]``.

    Parameters
    ----------
    m : float
        Level, positive or ``inf``.
    s : float or ndarray
        Argument.

    Returns
    -------
    float or ndarray
        ``s`` where ``|s| <= m``, ``m * sign(s)`` elsewhere.
    """
    _check_level(m)
    s = np.asarray(s, dtype=float)
    if math.isinf(m):
        return _out(s.copy(), s)
    return _out(np.clip(s, -m, m), s)


def theta_cut(m: float, s):
    """Primitive of :func:`t_cut` vanishing at zero."""
    _check_level(m)
    s = np.asarray(s, dtype=float)
    a = np.abs(s)
    if math.isinf(m):
        return _out(0.5 * s * s, s)
    return _out(np.where(a <= m, 0.5 * s * s, m * a - 0.5 * m * m), s)


def g_smooth(s):
    """Non-increasing C1 cut-off: 1 on [0, 1], 0 on [2, inf).

    Between 1 and 2 it is the cubic Hermite blend ``1 - 3 t^2 + 2 t^3``
    with ``t = s - 1``.
    """
    s = np.asarray(s, dtype=float)
    tau = np.clip(s - 1.0, 0.0, 1.0)
    return _out(1.0 - tau * tau * (3.0 - 2.0 * tau), s)


def hermite_integral(tau):
    """Integral of the Hermite blend over ``[0, tau]`` for ``tau`` in [0, 1]."""
    tau = np.asarray(tau, dtype=float)
    return _out(tau - tau**3 + 0.5 * tau**4, tau)


def g_cut(m: float, s):
    """Scaled cut-off ``G(s / m)``; identically one for ``m = inf``."""
    _check_level(m)
    s = np.asarray(s, dtype=float)
    if math.isinf(m):
        return _out(np.ones_like(s), s)
    return _out(np.asarray(g_smooth(s / m)), s)


def gamma_cut(m: float, s):
    """Primitive of :func:`g_cut` vanishing at zero (``s >= 0``).

    Closed form: ``s`` on [0, m], ``m (1 + H((s - m) / m))`` on (m, 2m)
    and ``3m/2`` beyond, with ``H`` from :func:`hermite_integral`.
    """
    _check_level(m)
    s = np.asarray(s, dtype=float)
    if math.isinf(m):
        return _out(s.copy(), s)
    tau = np.clip((s - m) / m, 0.0, 1.0)
    mid = m * (1.0 + np.asarray(hermite_integral(tau)))
    return _out(np.where(s <= m, s, mid), s)


def pos_part(s):
    """``max(0, s)``."""
    s = np.asarray(s, dtype=float)
    return _out(np.maximum(s, 0.0), s)


def neg_part(s):
    """``min(0, s)``."""
    s = np.asarray(s, dtype=float)
    return _out(np.minimum(s, 0.0), s)
