"""Bounds, reports, scaling, convergence, formulation comparison and cascades."""

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kolmolab.core import RegLevels, initial_state
from kolmolab.diagnostics import (CheckRecord, DiagnosticsReport, ScalingExponents, cascade_study,
                                  check_bounds, check_scaling_commutation, compare_formulations,
                                  convergence_study, homogeneous_solution, manufactured_study,
                                  scaling_transform)
from kolmolab.errors import ScalingError
from kolmolab.slipbc import SlipLaw
from kolmolab.stepper import run

from _scenarios import box2d, free_shear, homogeneous, shear, smooth


# bounds ----------------------------------------------------------------------------------

def test_bounds_hold_on_shear():
    s = shear(SlipLaw.navier(2.0), k=10.0)
    res = run(s)
    recs = {r.name: r for r in check_bounds(res, s.boundary, 10.0, s.params.kappa2)}
    assert set(recs) == {"omega_upper", "omega_lower", "b_floor"}
    assert all(r.passed for r in recs.values())
    from_rows = check_bounds(res.rows, s.boundary, 10.0, s.params.kappa2)
    assert [r.passed for r in from_rows] == [True] * 3


def test_bounds_report_location_of_violation():
    s = homogeneous(omega0=1.0)
    st0 = initial_state(s)
    st0.omega[3, 0] = 2 * s.boundary.omega_max
    rec = check_bounds([st0], s.boundary)[0]
    assert not rec.passed and rec.name == "omega_upper"
    assert "cell (j=3, i=0)" in rec.where and rec.when == 0.0


def test_nan_fails_bounds():
    s = homogeneous()
    st0 = initial_state(s)
    st0.omega[2, 0] = math.nan
    st0.b[1, 0] = math.nan
    recs = check_bounds([st0], s.boundary, k=5.0)
    assert all(not r.passed for r in recs)
    assert all(math.isnan(r.worst) for r in recs)


def test_infinite_k_has_no_floor():
    s = homogeneous()
    assert [r.name for r in check_bounds([initial_state(s)], s.boundary)] == [
        "omega_upper", "omega_lower"]
    with pytest.raises(ValueError):
        check_bounds([], s.boundary)


# report ------------------------------------------------------------------------------------

def test_report_round_trip_and_text():
    res = run(replace(shear(SlipLaw.threshold(0.05, 1.0)), t_end=0.02), report=True)
    rep = res.report
    assert rep.passed, rep.to_text()
    back = DiagnosticsReport.from_json(rep.to_json())
    assert back == rep
    text = rep.to_text()
    assert text.startswith("report: shear\nstatus: PASS")
    for name in ("energy_identity", "suitable_defect", "wall_law", "budgets_finite"):
        assert name in text


def test_report_rejects_duplicates_and_tracks_failures():
    rep = DiagnosticsReport("x")
    rep.add(CheckRecord("a", "t", 1.0, 0.0, False))
    rep.add(CheckRecord("b", "t", 1.0, 0.0, False, informational=True))
    with pytest.raises(ValueError):
        rep.add(CheckRecord("a", "t", 0.0, 0.0, True))
    assert not rep.passed
    assert [r.name for r in rep.failures] == ["a"]
    with pytest.raises(KeyError):
        rep.get("c")


def test_2d_report_has_pressure_records():
    rep = run(box2d(n=16, t_end=0.01), report=True).report
    assert rep.passed, rep.to_text()
    for name in ("divergence", "pressure_mean", "pressure_sum", "pressure_harmonic"):
        assert rep.get(name).passed
    assert rep.get("pressure_direct_gap").informational


# scaling --------------------------------------------------------------------------------------

def test_exponents():
    e = ScalingExponents(2.0, a=2, b_exp=1)
    assert (e.velocity, e.energy, e.frequency, e.time, e.space) == (2.0, 4.0, 4.0, 4.0, 2.0)
    assert e.exact and not ScalingExponents(3.0).exact
    assert e.inverse().theta == 0.5
    with pytest.raises(ValueError):
        ScalingExponents(0.0)


@settings(max_examples=10, deadline=None)
@given(st.integers(-3, 3), st.integers(-2, 2), st.integers(0, 2))
def test_state_transform_round_trip(p, a, b):
    e = ScalingExponents(2.0**p, a, b)
    st0 = initial_state(box2d(n=8))
    back = scaling_transform(scaling_transform(st0, e), e.inverse())
    assert back == st0


@pytest.mark.parametrize("e, make", [
    (ScalingExponents(2.0, 1, 0), lambda: homogeneous(t_end=0.05)),
    (ScalingExponents(4.0, 2, 1), lambda: free_shear(t_end=0.02)),
    (ScalingExponents(0.5, 1, 1), lambda: shear(SlipLaw.threshold(0.05, 1.0), t_end=0.02)),
])
def test_scaling_commutes_bit_exactly(e, make):
    rec = check_scaling_commutation(make(), e)
    assert rec.passed, rec
    assert rec.worst == 0.0


def test_scaling_tolerance_mode():
    rec = check_scaling_commutation(free_shear(t_end=0.02), ScalingExponents(3.0, 1, 1))
    assert rec.name == "scaling" and rec.passed, rec
    with pytest.raises(ScalingError):
        check_scaling_commutation(free_shear(), ScalingExponents(3.0), bit_exact=True)


def test_scaling_rejects_finite_levels():
    with pytest.raises(ScalingError):
        scaling_transform(shear(SlipLaw.free(), k=10.0), ScalingExponents(2.0))
    with pytest.raises(ScalingError):
        scaling_transform(42, ScalingExponents(2.0))


# convergence ------------------------------------------------------------------------------------

@given(st.floats(0.1, 10.0), st.floats(0.1, 10.0), st.floats(0.3, 3.0))
def test_homogeneous_solution_solves_the_ode(b0, om0, k2):
    t, h = 0.7, 1e-6
    b, om = homogeneous_solution(b0, om0, t, k2)
    bp, omp = homogeneous_solution(b0, om0, t + h, k2)
    bm, omm = homogeneous_solution(b0, om0, t - h, k2)
    assert (bp - bm) / (2 * h) == pytest.approx(-b * om, rel=1e-6)
    assert (omp - omm) / (2 * h) == pytest.approx(-k2 * om * om, rel=1e-6)


def test_self_convergence_on_shear():
    table = convergence_study(replace(smooth(ny=16), t_end=0.05), levels=3)
    assert table.kind == "temporal-self" and len(table.rows) == 2
    assert table.min_order >= 0.8


def test_convergence_needs_three_levels():
    with pytest.raises(ValueError):
        convergence_study(homogeneous(), levels=2)


def test_manufactured_spatial_order():
    table = manufactured_study((16, 32, 64))
    assert table.kind == "spatial"
    assert table.min_order >= 1.9


# formulations and cascade -------------------------------------------------------------------------

def test_compare_formulations_smooth():
    cmp = compare_formulations(replace(smooth(ny=16), t_end=0.1))
    assert cmp.applicable and cmp.passed, cmp
    rec = cmp.record()
    assert rec.name == "formulations" and not rec.informational


def test_compare_formulations_floor_not_met():
    cmp = compare_formulations(replace(smooth(ny=8), t_end=0.01), b_floor=10.0)
    assert not cmp.applicable and cmp.passed
    assert cmp.record().informational
    assert "not applicable" in cmp.record().detail


def test_cascade_table():
    s = replace(shear(SlipLaw.navier(2.0)), t_end=0.05)
    rep = cascade_study(s, ks=(10.0, 100.0, 1000.0))
    rows = rep.tables["cascade"]
    assert [r["value"] for r in rows] == [10.0, 100.0, 1000.0]
    assert rows[0]["diff"] is None and all(r["diff"] >= 0 for r in rows[1:])
    assert rep.get("cascade_trend").informational
    assert rep.passed


def test_cascade_over_n():
    s = replace(shear(SlipLaw.navier(2.0)), t_end=0.02, levels=RegLevels(k=1e3))
    rep = cascade_study(s, ks=(1.0, 10.0, 100.0), level="n")
    assert all(np.isfinite(r["kinetic"]) for r in rep.tables["cascade"])
