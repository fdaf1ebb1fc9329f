"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""

import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import quad

from kolmolab.cli import EXIT_OK, main
from kolmolab.core import checkpoint_load, checkpoint_save
from kolmolab.cutoffs import g_cut, gamma_cut, t_cut, theta_cut
from kolmolab.diagnostics import (ScalingExponents, check_scaling_commutation,
                                  compare_formulations, convergence_study, homogeneous_solution)
from kolmolab.energy import eform_defect_gate, energy_identity, suitable_defect
from kolmolab.pressure import decompose_pressure
from kolmolab.slipbc import SlipLaw, WallContext, regularize_gk, residual_h, solve_wall
from kolmolab.stepper import run

from _scenarios import box2d, free_shear, homogeneous, random_scenario, shear, smooth

SEEDS = range(10)
SHEAR = str(Path(__file__).resolve().parents[1] / "scenarios" / "shear.json")


@pytest.fixture(scope="module")
def suite():
    """The randomized 1D suite at k = inf, 10 and 1e3, with wall-clock time."""
    out = {}
    for k in (math.inf, 10.0, 1e3):
        t0 = time.perf_counter()
        out[k] = ([(random_scenario(s, k=k), run(random_scenario(s, k=k), keep_terms=True))
                   for s in SEEDS], time.perf_counter() - t0)
    return out


def test_1_homogeneous_decay(verdict):
    t0 = time.perf_counter()
    res = run(homogeneous(dt=1e-3, t_end=1.0))
    elapsed = time.perf_counter() - t0
    b_ex, om_ex = 0.5, 0.5
    assert homogeneous_solution(1.0, 1.0, 1.0) == (b_ex, om_ex)
    err = max(float(np.max(np.abs(res.final.b - b_ex))),
              float(np.max(np.abs(res.final.omega - om_ex))))
    lie = convergence_study(homogeneous(dt=0.02, t_end=1.0), levels=4).min_order
    strang = convergence_study(homogeneous(dt=0.02, t_end=1.0, splitting="strang"),
                               levels=4).min_order
    ok = err <= 5e-3 and lie >= 0.9 and strang >= 1.9 and elapsed < 1.0
    verdict(1, ok, f"error {err:.2e} <= 5e-3, Lie order {lie:.3f} >= 0.9, "
                   f"Strang order {strang:.3f} >= 1.9, runtime {elapsed:.2f} s < 1 s")


def test_2_omega_max_min_principle(suite, verdict):
    runs, elapsed = suite[math.inf]
    upper, lower = -math.inf, math.inf
    for s, res in runs:
        wmax, wmin = s.boundary.omega_max, s.boundary.omega_min
        for r in res.rows:
            upper = max(upper, r["omega_max"] - wmax)
            lower = min(lower, r["omega_min"] - wmin * math.exp(-r["t"] * wmax))
    ok = upper <= 1e-12 and lower >= -1e-9 and elapsed < 30.0
    verdict(2, ok, f"max(omega - omega_max) {upper:.2e} <= 1e-12, "
                   f"min(omega - omega_min e^(-t omega_max)) {lower:.2e} >= -1e-9, "
                   f"{len(runs)} scenarios in {elapsed:.1f} s")


def test_3_b_floor(suite, verdict):
    worst = math.inf
    for k in (10.0, 1e3):
        for s, res in suite[k][0]:
            wmax = s.boundary.omega_max
            for r in res.rows:
                worst = min(worst, r["b_min"] - math.exp(-r["t"] * wmax) / k)
    verdict(3, worst >= -1e-9, f"min(b - exp(-t omega_max)/k) {worst:.2e} >= -1e-9 "
                               f"for k in (10, 1e3)")


def test_4_energy_identity(verdict):
    parts = []
    ok = True
    for law in (SlipLaw.navier(2.0), SlipLaw.threshold(0.05, 1.0)):
        res = run(shear(law))
        rows = res.rows
        tol = 1e-11 * (rows[0]["total"] + 1.0)
        worst = max(abs(r["residual"]) for r in rows)
        ok = ok and worst <= tol and energy_identity(res).passed
        parts.append(f"{law.kind.value} {worst:.2e} <= {tol:.2e}")
    verdict(4, ok, "residual " + ", ".join(parts))


def test_5_formulation_equivalence(verdict):
    cmp = compare_formulations(smooth())
    a = run(homogeneous(t_end=1.0)).final
    b = run(homogeneous(t_end=1.0, formulation="eform")).final
    hom = max(float(np.max(np.abs(a.b - b.b))), float(np.max(np.abs(a.omega - b.omega))),
              float(np.max(np.abs(a.u - b.u))))
    ok = cmp.applicable and cmp.discrepancy <= 10 * cmp.estimate and hom <= 1e-12
    verdict(5, ok, f"smooth: discrepancy {cmp.discrepancy:.2e} <= 10 x {cmp.estimate:.2e}; "
                   f"homogeneous {hom:.2e} <= 1e-12")


def test_6_scaling(verdict):
    exact = check_scaling_commutation(homogeneous(t_end=0.2), ScalingExponents(2.0, 2, 0))
    approx = check_scaling_commutation(free_shear(), ScalingExponents(3.0, 1, 1),
                                       bit_exact=False)
    ok = exact.passed and exact.worst == 0.0 and approx.passed and approx.worst <= 1e-10
    verdict(6, ok, f"homogeneous theta=2 bit-exact gap {exact.worst:.1e}; "
                   f"free-slip shear theta=3 rescaled grid {approx.worst:.2e} <= 1e-10")


def test_7_pressure_structure(verdict):
    t0 = time.perf_counter()
    s = box2d(n=64)
    st = run(s).final
    parts = decompose_pressure(st, s)
    elapsed = time.perf_counter() - t0
    mean = max(parts.mean_defects().values())
    total = parts.sum_defect()
    harm = parts.harmonic_defect()
    ok = mean <= 1e-12 and total <= 1e-10 and harm <= 1e-8 and elapsed < 60.0
    verdict(7, ok, f"64x64: mean {mean:.1e} <= 1e-12, sum {total:.1e} <= 1e-10, "
                   f"harmonic {harm:.1e} <= 1e-8, runtime {elapsed:.1f} s")


def test_8_slip_laws(verdict):
    ctx = WallContext.from_fields(0.0, 0.0, 1.0, 1.0)
    v = np.array([0.6, -0.8])
    nav = SlipLaw.navier(2.5)
    thr = SlipLaw.threshold(0.8, 1.5)
    res = [float(np.max(np.abs(residual_h(nav, ctx, 2.5 * v, v)))),
           float(np.max(np.abs(residual_h(thr, ctx, np.array([0.4, 0.0]), np.zeros(2))))),
           float(np.max(np.abs(residual_h(thr, ctx, 0.8 * v + 1.5 * v, v))))]
    rng = np.random.default_rng(2024)
    laws = (nav, thr, SlipLaw.no_slip_limit())
    worst = 0.0
    for i in range(100_000):
        k = float(10 ** rng.uniform(-2, 4))
        vv = rng.normal(size=2) * 10 ** rng.uniform(-4, 3)
        worst = max(worst, float(np.linalg.norm(regularize_gk(k, laws[i % 3], ctx, vv))) / k)
    zero = all(np.array_equal(regularize_gk(k, law, ctx, np.zeros(2)), np.zeros(2))
               for law in laws for k in (0.1, 10.0, 1e4))
    sharp = (solve_wall(thr, ctx, 0.8, 2.0).v_tau == 0.0
             and solve_wall(thr, ctx, math.nextafter(0.8, 0.0), 2.0).v_tau == 0.0
             and solve_wall(thr, ctx, math.nextafter(0.8, 1.0), 2.0).v_tau > 0.0
             and solve_wall(thr, ctx, 0.8 + 1e-9, 2.0).v_tau > 0.0)
    ok = max(res) <= 1e-15 and worst <= 1.0 and zero and sharp
    verdict(8, ok, f"residuals {max(res):.1e}, max |g^k|/k {worst:.6f} <= 1 over 1e5, "
                   f"g^k(0) = 0 {zero}, sharp branch {sharp}")


def test_9_cutoffs(verdict):
    rng = np.random.default_rng(12)
    ms = 10 ** rng.uniform(-2, 2, 1000)
    ratio = rng.uniform(-3, 3, 1000)
    worst = 0.0
    for m, r in zip(ms, ratio):
        s = r * m
        pts = [p for p in (-m, m) if min(0, s) < p < max(0, s)]
        th, _ = quad(lambda x: t_cut(m, x), 0.0, s, points=pts or None, epsabs=1e-13,
                     epsrel=1e-13, limit=200)
        sa = abs(s)
        pts = [p for p in (m, 2 * m) if p < sa]
        gm, _ = quad(lambda x: g_cut(m, x), 0.0, sa, points=pts or None, epsabs=1e-13,
                     epsrel=1e-13, limit=200)
        worst = max(worst, abs(theta_cut(m, s) - th) / max(1.0, abs(th)),
                    abs(gamma_cut(m, sa) - gm) / max(1.0, abs(gm)))
    # bounds and monotonicity on a dense random sample
    props = True
    s = np.sort(rng.uniform(-1e3, 1e3, 2000))
    sp = np.sort(np.abs(s))
    for m in 10 ** rng.uniform(-2, 2, 200):
        T = t_cut(m, s)
        G = g_cut(m, sp)
        th = theta_cut(m, s)
        props = props and bool(
            np.all(np.abs(T) <= np.minimum(m, np.abs(s))) and np.all(np.diff(T) >= 0)
            and np.all((G >= 0) & (G <= 1)) and np.all(np.diff(G) <= 0)
            and np.all(np.diff(gamma_cut(m, sp)) >= -1e-15 * m)
            and np.all(th >= 0) and np.all(th <= 0.5 * s * s))
    verdict(9, worst <= 1e-12 and bool(props),
            f"quadrature worst {worst:.1e} <= 1e-12 on 1e3 pairs, properties {bool(props)}")


def test_10_suitable_defect(suite, verdict):
    worst = math.inf
    for k in suite:
        for _, res in suite[k][0]:
            _, summ = suitable_defect(res.terms)
            worst = min(worst, summ.minimum / max(summ.scale, 1.0))
    for law in (SlipLaw.navier(2.0), SlipLaw.threshold(0.05, 1.0)):
        _, summ = suitable_defect(run(shear(law), keep_terms=True).terms)
        worst = min(worst, summ.minimum / max(summ.scale, 1.0))
    gate = eform_defect_gate(smooth())
    ok = worst >= -1e-12 and gate.passed
    verdict(10, ok, f"b-form min defect/scale {worst:.1e} >= -1e-12; E-form defect "
                    f"{gate.coarse:.2e} >= -10 x {gate.estimate:.2e}")


def test_11_budgets_finite(suite, verdict):
    scns = [shear(SlipLaw.navier(2.0)), shear(SlipLaw.threshold(0.05, 1.0)), smooth(),
            homogeneous(), box2d(n=16, t_end=0.04)]
    scns += [s for k in suite for s, _ in suite[k][0]]
    keys = ("ln_b", "budget_dissipation", "budget_grad_b", "budget_grad_omega", "budget_wall")
    bad = []
    for s in scns:
        res = run(s, report=True)
        vals = [r[k] for r in res.rows for k in keys] + list(res.report.budgets.values())
        if not (res.report.get("budgets_finite").passed and all(map(math.isfinite, vals))):
            bad.append(s.name)
    verdict(11, not bad, f"{len(scns)} runs, non-finite budgets in {bad or 'none'}")


def test_12_determinism_and_persistence(tmp_path, verdict, capsys):
    s = replace(shear(SlipLaw.threshold(0.05, 1.0)), t_end=0.1)
    a, b = run(s, keep_all=True), run(s, keep_all=True)
    rerun = (len(a.states) == len(b.states) and all(x == y for x, y in zip(a.states, b.states))
             and a.rows == b.rows)
    rt = True
    for st in a.states[::10] + [run(box2d(n=16, t_end=0.01)).final]:
        checkpoint_save(st, tmp_path / "ck.bin")
        rt = rt and checkpoint_load(tmp_path / "ck.bin") == st
    out = tmp_path / "run"
    code = main(["run", SHEAR, "--out", str(out),
                 "--override", "time.t_end=0.1"])
    capsys.readouterr()
    code_v = main(["verify", str(out)])
    same = "report identical" in capsys.readouterr().out
    ok = rerun and rt and code == EXIT_OK and code_v == EXIT_OK and same
    verdict(12, ok, f"bit-identical rerun {rerun}, checkpoint round trip {rt}, "
                    f"verify reproduces report {same}")
