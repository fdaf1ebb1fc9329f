"""Projection, Neumann-Poisson solves and the three-part pressure split."""

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kolmolab.core import Grid, divergence, initial_state
from kolmolab.errors import PoissonError
from kolmolab.pressure import (decompose_pressure, gradient, laplacian, neumann_poisson,
                               project)

from _scenarios import box2d

seeds = st.integers(0, 2**31 - 1)


def _dense_laplacian(grid):
    n = grid.ny * grid.nx
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        cols.append(laplacian(e.reshape(grid.shape), grid).ravel())
    return np.array(cols).T


def _tentative(grid, rng):
    u = rng.normal(size=grid.shape)
    v = rng.normal(size=(grid.ny + 1, grid.nx))
    v[0] = v[-1] = 0.0
    return u, v


def _random_state(scenario, seed):
    rng = np.random.default_rng(seed)
    g = scenario.grid
    u, v = project(*_tentative(g, rng), g)[:2]
    st0 = initial_state(scenario)
    return replace(st0, u=u, v=v, b=rng.uniform(0.2, 2.0, g.shape),
                   omega=rng.uniform(0.5, 2.0, g.shape), wall_s=rng.normal(size=(2, g.nx)))


def test_zero_rhs_gives_zero():
    g = Grid("channel2d", 8, 6)
    assert np.array_equal(neumann_poisson(np.zeros(g.shape), g), np.zeros(g.shape))


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_recovers_manufactured_potential(seed):
    g = Grid("channel2d", 12, 10, length=2.0)
    phi = np.random.default_rng(seed).normal(size=g.shape)
    phi -= phi.mean()
    out = neumann_poisson(laplacian(phi, g), g)
    assert np.max(np.abs(out - phi)) <= 1e-10 * max(1.0, np.max(np.abs(phi)))
    assert abs(out.mean()) <= 1e-14


def test_matches_dense_least_squares():
    g = Grid("channel2d", 6, 5)
    rhs = np.random.default_rng(4).normal(size=g.shape)
    rhs -= rhs.mean()
    sol = np.linalg.lstsq(_dense_laplacian(g), rhs.ravel(), rcond=None)[0].reshape(g.shape)
    sol -= sol.mean()
    assert np.max(np.abs(neumann_poisson(rhs, g) - sol)) <= 1e-10


def test_wall_flux_data():
    g = Grid("channel2d", 10, 4)
    flux = np.zeros((2, g.nx))
    flux[0] = 1.0
    flux[1] = -1.0
    phi = neumann_poisson(np.zeros(g.shape), g, wall_flux=flux)
    # inward derivative +1 at the bottom and -1 at the top: phi = y + const
    assert np.allclose(np.diff(phi, axis=0), g.dy, atol=1e-10)


def test_incompatible_data_rejected():
    g = Grid("channel2d", 8, 4)
    with pytest.raises(PoissonError, match="incompatible"):
        neumann_poisson(np.ones(g.shape), g)


def test_gradient_divergence_duality():
    g = Grid("channel2d", 9, 7, length=1.5)
    rng = np.random.default_rng(5)
    u, v = _tentative(g, rng)
    phi = rng.normal(size=g.shape)
    gx, gy = gradient(phi, g)
    lhs = float(np.sum(divergence(u, v, g) * phi))
    rhs = -float(np.sum(u * gx) + np.sum(v * gy))
    assert lhs == pytest.approx(rhs, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_projection_divergence_free_and_idempotent(seed):
    g = Grid("channel2d", 12, 8)
    u, v = _tentative(g, np.random.default_rng(seed))
    us, vs, phi = project(u, v, g)
    assert np.max(np.abs(divergence(us, vs, g))) <= 1e-10
    assert abs(phi.mean()) <= 1e-13
    u2, v2, phi2 = project(us, vs, g)
    assert np.max(np.abs(u2 - us)) <= 1e-12 and np.max(np.abs(v2 - vs)) <= 1e-12
    assert np.max(np.abs(phi2)) <= 1e-12


def test_projection_annihilates_gradients():
    g = Grid("channel2d", 10, 8)
    phi = np.random.default_rng(6).normal(size=g.shape)
    gx, gy = gradient(phi - phi.mean(), g)
    us, vs, _ = project(gx, gy, g)
    assert np.max(np.abs(us)) <= 1e-10 and np.max(np.abs(vs)) <= 1e-10


def test_projection_needs_zero_normal_trace():
    g = Grid("channel2d", 8, 4)
    v = np.zeros((9, 4))
    v[0, 1] = 1.0
    with pytest.raises(PoissonError):
        project(np.zeros(g.shape), v, g)


def test_rest_state_has_zero_parts():
    s = box2d(n=16)
    st0 = replace(initial_state(s), u=np.zeros((16, 16)), v=np.zeros((17, 16)))
    parts = decompose_pressure(st0, s)
    for arr in (parts.p1, parts.p2, parts.p3, parts.total):
        assert np.all(arr == 0.0)


def test_uniform_stream_has_no_convective_part():
    s = box2d(n=16)
    st0 = replace(initial_state(s), u=np.full((16, 16), 0.7), v=np.zeros((17, 16)))
    assert np.max(np.abs(decompose_pressure(st0, s).p2)) <= 1e-12


@settings(max_examples=8, deadline=None)
@given(seeds)
def test_split_structure_on_random_states(seed):
    s = box2d(n=24)
    parts = decompose_pressure(_random_state(s, seed), s)
    assert max(parts.mean_defects().values()) <= 1e-12
    assert parts.subtraction_defect() <= 1e-10
    assert parts.sum_defect() <= 1e-10
    assert parts.harmonic_defect() <= 1e-8


def test_parts_are_additive_in_their_sources():
    g = Grid("channel2d", 10, 8)
    rng = np.random.default_rng(9)
    a = rng.normal(size=g.shape)
    b = rng.normal(size=g.shape)
    a -= a.mean()
    b -= b.mean()
    lhs = neumann_poisson(a + b, g)
    assert np.max(np.abs(lhs - neumann_poisson(a, g) - neumann_poisson(b, g))) <= 1e-12


def test_decomposition_needs_2d():
    from _scenarios import shear
    from kolmolab.slipbc import SlipLaw
    s = shear(SlipLaw.free())
    with pytest.raises(ValueError):
        decompose_pressure(initial_state(s), s)
