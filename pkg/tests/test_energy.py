"""Energy bookkeeping, the E-form tendency and the suitable-solution defect."""

import doctest
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import kolmolab.energy as energy_mod
from kolmolab.core import FieldExpr, ModelParams, RegLevels, initial_state
from kolmolab.energy import (commutator_density, e_rhs, eform_defect_gate, energy_identity,
                             suitable_defect, total_energy)
from kolmolab.slipbc import SlipLaw
from kolmolab.stepper import run

from _scenarios import box2d, homogeneous, random_scenario, shear, smooth


def test_doctests():
    assert doctest.testmod(energy_mod).failed == 0


def test_total_energy_sums_to_kinetic_plus_turbulent():
    s = box2d(n=16)
    st0 = initial_state(s)
    E = total_energy(st0, s.params)
    vol = s.grid.cell_volume
    kin = 0.5 * vol * (np.sum(st0.u**2) + np.sum(st0.v[1:-1] ** 2))
    turb = s.params.energy_coefficient * np.sum(st0.b) * vol
    assert float(np.sum(E)) * vol == pytest.approx(kin + turb, rel=1e-13)


@given(st.floats(1e-2, 1e3), st.integers(0, 1000))
def test_commutator_vanishes_below_level(k, seed):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(6, 4))
    v = rng.normal(size=(7, 4))
    v[0] = v[-1] = 0
    c = commutator_density(u, v, k)
    s = 2 * energy_mod._kinetic_density(u, v)
    assert np.all(c[s <= k] == 0.0)
    assert np.all(commutator_density(u, v, math.inf) == 0.0)


def test_commutator_value_above_level():
    # s = 4 with k = 1: G = 0, Gamma = 3/2
    u = np.full((2, 1), 2.0)
    v = np.zeros((3, 1))
    assert np.allclose(commutator_density(u, v, 1.0), -4.0 - 1.5)


def test_e_rhs_parts():
    s = shear(SlipLaw.free())
    st0 = initial_state(s)
    tend = e_rhs(st0, s)
    assert set(tend.parts) == {"convection", "diffusion", "sink", "commutator"}
    assert np.all(tend.parts["convection"] == 0.0)
    c_e = s.params.energy_coefficient
    assert np.allclose(tend.parts["sink"], -c_e * st0.b * st0.omega, rtol=1e-14)


def test_e_rhs_diffusion_conserves_without_wall_sources():
    s = replace(homogeneous(), init_u=FieldExpr("cos(pi*y)"),
                init_b=FieldExpr("1 + 0.2*cos(pi*y)"))
    diff = e_rhs(initial_state(s), s).parts["diffusion"]
    assert abs(float(np.sum(diff))) <= 1e-12 * float(np.sum(np.abs(diff)))


@pytest.mark.parametrize("make", [lambda: shear(SlipLaw.threshold(0.05, 1.0)),
                                  lambda: box2d(n=16)])
def test_energy_identity_closes(make):
    res = run(make())
    budget = energy_identity(res)
    assert budget.passed, budget
    assert budget.dissipation > 0
    assert budget.numerical_dissipation >= 0
    assert energy_identity(res.rows) == budget


def test_energy_identity_flags_nan():
    rows = run(replace(homogeneous(), t_end=0.01)).rows
    rows[-1] = dict(rows[-1], residual=math.nan)
    assert not energy_identity(rows).passed
    with pytest.raises(ValueError):
        energy_identity([])


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 10_000))
def test_defect_from_terms_is_rounding_sized(seed):
    res = run(random_scenario(seed, t_end=0.05), keep_terms=True)
    _, summary = suitable_defect(res.terms)
    assert summary.minimum >= -1e-12 * max(summary.scale, 1.0)


def test_defect_from_states_vanishes_for_homogeneous_decay():
    s = homogeneous(dt=1e-2, t_end=0.2)
    field, summary = suitable_defect(run(s, keep_all=True).states, s)
    assert field.shape == s.grid.shape
    assert summary.minimum >= -1e-12 * max(summary.scale, 1.0)


def test_defect_from_states_is_first_order_in_dt():
    # evaluated a posteriori, the production lags by one step
    mins = []
    for dt in (1e-3, 5e-4, 2.5e-4):
        s = replace(shear(SlipLaw.navier(2.0), dt=dt), t_end=0.02)
        mins.append(suitable_defect(run(s, keep_all=True).states[1:], s)[1].minimum)
    assert all(m < 0 for m in mins)
    for a, b in zip(mins, mins[1:]):
        assert math.log2(a / b) == pytest.approx(1.0, abs=0.15)


def test_defect_window_errors():
    s = homogeneous()
    st0 = initial_state(s)
    with pytest.raises(ValueError):
        suitable_defect([st0], s)
    with pytest.raises(ValueError):
        suitable_defect([st0, st0], s)
    with pytest.raises(ValueError):
        suitable_defect([st0, replace(st0, t=0.1)])
    with pytest.raises(ValueError):
        suitable_defect([])


def test_homogeneous_formulations_agree():
    a = run(homogeneous(t_end=0.2)).final
    b = run(homogeneous(t_end=0.2, formulation="eform")).final
    assert np.max(np.abs(a.b - b.b)) <= 1e-12
    assert np.max(np.abs(a.omega - b.omega)) <= 1e-12


def test_eform_defect_gate():
    gate = eform_defect_gate(replace(smooth(ny=16), t_end=0.05))
    assert gate.passed, gate
    assert gate.estimate >= 0


def test_eform_energy_identity():
    s = replace(smooth(ny=16), t_end=0.05).with_scheme(formulation="eform")
    assert energy_identity(run(s)).passed


def test_normalized_energy_coefficient():
    assert ModelParams(normalized=True).energy_coefficient == 1.0
    s = replace(homogeneous(), levels=RegLevels())
    assert total_energy(initial_state(s), s.params)[0, 0] == 1.0
