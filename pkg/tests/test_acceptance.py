"""Acceptance suite: one PASS/FAIL line per criterion, collected in the terminal summary.

Full-scale runs use the default economy (10000 firms, T=10000, T_eq=5000)
over seeds 0-3.  A stochastic criterion fails only when a majority of seeds
fall outside its interval.  Expensive runs are cached and shared between
criteria.
"""

import csv
import functools
import json
import math
import time
from dataclasses import dataclass

import numpy as np
import pytest

import test_core
import test_oracle
from acceptance_report import report
from mark0 import ModelParams, run
from mark0.cli import build_config, main, sweep_tables
from mark0.measure import (
    Dashboard,
    PhaseLabel,
    annualize,
    classify_phase,
    dashboard,
    deannualize,
    ols,
    phillips_points,
)
from mark0.sweep import (
    CI_SCALE,
    SweepSpec,
    detect_coexistence,
    linspace,
    run_sweep,
    transition_locator,
)

SEEDS = (0, 1, 2, 3)
HIHO, LILO, HY = PhaseLabel.HIHO, PhaseLabel.LILO, PhaseLabel.HYPER_INFLATION

slow = pytest.mark.slow


def params(rho_annual, **kw):
    base = dict(ratio_R=1.3, tau_R=0.5, tau_T=0.0, phi_pi=0.0, pi_star=0.0,
                rho_star=deannualize(rho_annual))
    base.update(kw)
    return ModelParams(**base)


def monitored(rho_annual, pi_star_annual, seed):
    return params(rho_annual, phi_pi=2.5, tau_T=0.5, pi_star=deannualize(pi_star_annual),
                  seed=seed)


@dataclass(frozen=True)
class Outcome:
    label: PhaseLabel
    dash: Dashboard
    seconds: float
    money_dev: float
    phillips_slope: float


@functools.cache
def simulate(p: ModelParams) -> Outcome:
    t0 = time.perf_counter()
    ts = run(p)
    seconds = time.perf_counter() - t0
    money = ts["money_total"]
    dev = float(np.max(np.abs(money - p.n_firms))) / p.n_firms if len(ts) else 0.0
    slope = phillips_points(ts).fit.slope if len(ts) > p.T_eq else math.nan
    return Outcome(classify_phase(ts), dashboard(ts), seconds, dev, slope)


def majority_inside(flags):
    """A criterion fails only if a majority of seeds fall outside."""
    flags = list(flags)
    return sum(not f for f in flags) <= len(flags) / 2


def fmt_seeds(values, spec="{:.2f}"):
    return "[" + ", ".join(spec.format(v) for v in values) + "]"


def check(name, ok, detail):
    report(name, ok, detail)
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------- criterion 1


def native(rho_annual):
    return [simulate(params(rho_annual, seed=s)) for s in SEEDS]


@slow
def test_c1a_hiho_native_state():
    out = native(1.0)
    u = [o.dash.mean_u * 100 for o in out]
    pi = [o.dash.mean_pi_annual for o in out]
    inside = [o.label is HIHO and o.dash.mean_u < 0.05 and 3.0 <= o.dash.mean_pi_annual <= 5.0
              for o in out]
    check("1a HIHO native (rho*=1%/yr): HIHO, u<5%, <pi> in [3,5]%/yr",
          majority_inside(inside),
          f"labels={[str(o.label) for o in out]} u%={fmt_seeds(u)} pi={fmt_seeds(pi)}")


@slow
def test_c1b_lilo_native_state():
    out = native(3.0)
    u = [o.dash.mean_u * 100 for o in out]
    pi = [o.dash.mean_pi_annual for o in out]
    inside = [o.label is LILO and 0.30 <= o.dash.mean_u <= 0.50
              and abs(o.dash.mean_pi_annual) < 0.5 for o in out]
    check("1b LILO native (rho*=3%/yr): LILO, u in [30,50]%, |<pi>|<0.5%/yr",
          majority_inside(inside),
          f"labels={[str(o.label) for o in out]} u%={fmt_seeds(u)} pi={fmt_seeds(pi)}")


@slow
def test_c1c_real_deposit_rates():
    hiho = [o.dash.mean_real_deposit_annual for o in native(1.0)]
    lilo = [o.dash.mean_real_deposit_annual for o in native(3.0)]
    ok_h = majority_inside(-4.0 <= r <= -2.0 for r in hiho)
    ok_l = majority_inside(-0.5 <= r <= 0.5 for r in lilo)
    check("1c real deposit rate: HIHO in [-4,-2]%/yr, LILO in [-0.5,0.5]%/yr",
          ok_h and ok_l, f"HIHO={fmt_seeds(hiho)} ({'ok' if ok_h else 'out'}) "
                         f"LILO={fmt_seeds(lilo)} ({'ok' if ok_l else 'out'})")


@slow
def test_c1_runtime():
    secs = [o.seconds for o in native(1.0) + native(3.0)]
    check("1 runtime < 60 s per full run", max(secs) < 60.0,
          f"max {max(secs):.1f} s over {len(secs)} runs")


# ---------------------------------------------------------------- criterion 2

TAU_GRID = tuple(round(0.5 + 0.1 * k, 10) for k in range(16))


def tau_dagger(g, seed):
    """Smallest tau_R on the scan grid whose run is labelled HyperInflation."""
    for tau in TAU_GRID:
        if simulate(params(1.0, tau_R=tau, g_index=g, seed=seed)).label is HY:
            return tau
    return math.nan


@slow
@pytest.mark.parametrize("g, lo, hi", [(1.0, 0.8, 1.0), (0.5, 1.2, 1.6)])
def test_c2_hyperinflation_threshold(g, lo, hi):
    taus = [tau_dagger(g, s) for s in SEEDS]
    check(f"2 hyper-inflation threshold g={g}: tau_dagger in [{lo},{hi}]",
          majority_inside(lo - 1e-9 <= t <= hi + 1e-9 for t in taus),
          f"per-seed tau_dagger={fmt_seeds(taus, '{:.1f}')}")


@slow
def test_hyper_label_depends_on_indexation():
    g1 = [simulate(params(1.0, tau_R=1.2, g_index=1.0, seed=s)).label for s in SEEDS]
    g05 = [simulate(params(1.0, tau_R=1.2, g_index=0.5, seed=s)).label for s in SEEDS]
    check("classify: tau_R=1.2 HyperInflation at g=1, not at g=0.5",
          majority_inside(lab is HY for lab in g1)
          and majority_inside(lab is not HY for lab in g05),
          f"g=1 {[str(x) for x in g1]}; g=0.5 {[str(x) for x in g05]}")


# ---------------------------------------------------------------- criterion 3

R_AXIS = linspace(0.1, 2.0, 20)
RHO_AXIS_ANNUAL = linspace(0.0, 5.0, 20)


def ci_base():
    return params(1.0).replace(**CI_SCALE)


@functools.cache
def phase_diagram():
    spec = SweepSpec(ci_base(), axes=(("ratio_R", R_AXIS),
                                      ("rho_star", tuple(deannualize(r) for r in
                                                         RHO_AXIS_ANNUAL))),
                     seeds=tuple(range(8)))
    return run_sweep(spec)


@slow
def test_c3_phase_diagram_structure():
    res = phase_diagram()
    band = [p for p in res.points if p.coords[0] <= 0.28]
    all_lilo = bool(band) and all(lab is LILO for p in band for lab in p.labels)
    hiho = [p for p in res.points
            if p.coords[0] > 1.0 and p.coords[1] < deannualize(2.5) and p.label is HIHO]
    coexist = [p for p in res.points
               if 0.28 < p.coords[0] < 2.0 and detect_coexistence(p).coexists]
    detail = (f"LILO band cells={len(band)} all LILO={all_lilo}; "
              f"HIHO cells at R>1, rho*<2.5%/yr={len(hiho)}; "
              f"coexistence cells at intermediate R={len(coexist)}")
    check("3 phase diagram 20x20x8: LILO band R<=0.28, HIHO region, coexistence",
          all_lilo and len(hiho) > 0 and len(coexist) > 0, detail)


@slow
def test_c3_transition_line_non_decreasing():
    spec = SweepSpec(ci_base(), seeds=tuple(range(8)))
    rs = (1.0, 1.25, 1.5, 1.75, 2.0)
    found = [transition_locator(R, (0.0, deannualize(5.0)), spec) for R in rs]
    rho = [annualize(f.rho_dagger) for f in found]
    ok = all(f.found for f in found) and all(b >= a for a, b in zip(rho, rho[1:]))
    check("3 rho_dagger(R) non-decreasing on a 5-point R grid", ok,
          "rho_dagger%/yr=" + ", ".join(f"R={r}:{x:.2f}" for r, x in zip(rs, rho)))


@slow
def test_sweep_low_R_is_lilo_at_every_seed():
    labels = [simulate(params(rho, ratio_R=0.2, seed=s)).label
              for rho in (0.0, 2.5, 5.0) for s in SEEDS]
    check("sweep: R=0.2 LILO at every seed and rho*", all(lab is LILO for lab in labels),
          f"labels={sorted(set(str(x) for x in labels))}")


@slow
def test_sweep_transition_at_R_1_3_full_scale():
    spec = SweepSpec(params(1.0), seeds=SEEDS)
    res = transition_locator(1.3, (deannualize(0.5), deannualize(5.0)), spec)
    rho = annualize(res.rho_dagger)
    check("sweep: rho_dagger(1.3) in (1,3)%/yr at full scale",
          res.found and 1.0 < rho < 3.0, f"rho_dagger={rho:.3f}%/yr {res.reason}")


@slow
def test_cli_ci_phase_diagram(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("ratio_R: 1.3\ntau_R: 0.5\ntau_T: 0\nphi_pi: 0\n"
                   "pi_star_annual: 0\nrho_star_annual: 1\n")
    code = main(["phase-diagram", "--preset", "ci", "--config", str(cfg),
                 "--out", str(tmp_path)])
    rows = list(csv.DictReader((tmp_path / "sweep_points.csv").open()))
    labels = {r["label"] for r in rows}
    n_co = sum(r["coexistence"] == "true" for r in rows)
    check("cli: CI phase diagram has HIHO, LILO and coexistence cells",
          code == 0 and "HIHO" in labels and "LILO" in labels and n_co > 0,
          f"labels={sorted(labels)} coexistence cells={n_co}")


# ---------------------------------------------------------------- criterion 4

LILO_TARGETS = (0.25, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0)
HIHO_TARGETS = (0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0)


def target_scan(rho_annual, target):
    return [simulate(monitored(rho_annual, target, s)) for s in SEEDS]


@slow
def test_c4a_lilo_monitored_dashboard():
    out = target_scan(3.0, 4.0)
    u = [o.dash.mean_u * 100 for o in out]
    pi = [o.dash.mean_pi_annual for o in out]
    pn = [o.dash.p_neg for o in out]
    parts = {
        "u in [4,12]%": majority_inside(4.0 <= x <= 12.0 for x in u),
        "<pi> in [4,6]%/yr": majority_inside(4.0 <= x <= 6.0 for x in pi),
        "p_neg<0.02": majority_inside(x < 0.02 for x in pn),
    }
    check("4a LILO-native monitored (pi*=4%/yr)", all(parts.values()),
          f"u%={fmt_seeds(u)} pi={fmt_seeds(pi)} p_neg={fmt_seeds(pn, '{:.3f}')} "
          + " ".join(f"[{k}: {'ok' if v else 'out'}]" for k, v in parts.items()))


@slow
def test_c4b_low_targets_under_realised():
    rows = []
    ok = True
    for target in (0.25, 0.5, 1.0):
        pi = [o.dash.mean_pi_annual for o in target_scan(3.0, target)]
        ok &= majority_inside(x < target for x in pi)
        rows.append(f"pi*={target}: {fmt_seeds(pi)}")
    check("4b realised <pi> below target for pi*<=1%/yr (LILO-native)", ok, "; ".join(rows))


@slow
def test_c4c_negative_rate_probability():
    pn = {t: [o.dash.p_neg for o in target_scan(1.0, t)] for t in HIHO_TARGETS}
    falls = majority_inside(a > b for a, b in zip(pn[0.25], pn[2.0]))
    zero = all(majority_inside(x < 0.02 for x in pn[t]) for t in HIHO_TARGETS if t > 1.0)
    check("4c HIHO-native p_neg(0.25%) > p_neg(2%), p_neg~0 for pi*>1%",
          falls and zero,
          " ".join(f"pi*={t}:{np.mean(v):.3f}" for t, v in pn.items()))


@slow
def test_measure_monitored_lilo_dashboard():
    out = target_scan(3.0, 4.0)
    parts = {
        "u 7.5+-3%": majority_inside(0.045 <= o.dash.mean_u <= 0.105 for o in out),
        "pi 5+-1%/yr": majority_inside(4.0 <= o.dash.mean_pi_annual <= 6.0 for o in out),
        "p_neg~0": majority_inside(o.dash.p_neg < 0.02 for o in out),
        "real 0.5+-0.5%/yr": majority_inside(0.0 <= o.dash.mean_real_deposit_annual <= 1.0
                                             for o in out),
    }
    check("measure: monitored LILO dashboard", all(parts.values()),
          f"real={fmt_seeds([o.dash.mean_real_deposit_annual for o in out])} "
          + " ".join(f"[{k}: {'ok' if v else 'out'}]" for k, v in parts.items()))


@slow
def test_cli_dashboard_matches_monitored_run(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("ratio_R: 1.3\ntau_R: 0.5\ntau_T: 0.5\nphi_pi: 2.5\n"
                   "pi_star_annual: 4\nrho_star_annual: 3\n")
    assert main(["dashboard", "--config", str(cfg), "--seed", "0",
                 "--out", str(tmp_path)]) == 0
    rec = json.loads((tmp_path / "summary.json").read_text())
    ref = target_scan(3.0, 4.0)[0].dash
    same = (rec["mean_u"] == ref.mean_u and rec["mean_pi_annual"] == ref.mean_pi_annual
            and rec["p_neg"] == ref.p_neg)
    check("cli: dashboard summary equals the monitored LILO dashboard", same,
          f"u={rec['mean_u']:.4f} pi={rec['mean_pi_annual']:.2f} p_neg={rec['p_neg']:.3f}")


# ---------------------------------------------------------------- criterion 5


@slow
def test_c5_phillips_slopes():
    within = [o.phillips_slope for o in target_scan(3.0, 4.0)]
    pts = []
    for rho, targets in ((3.0, LILO_TARGETS), (1.0, HIHO_TARGETS)):
        for t in targets:
            out = target_scan(rho, t)
            pts.append((np.mean([o.dash.mean_u for o in out]),
                        np.mean([o.dash.mean_pi_annual for o in out])))
    across = ols([p[0] for p in pts], [p[1] for p in pts]).slope
    check("5 Phillips slopes negative (within-run and across pi*)",
          majority_inside(s < 0 for s in within) and across < 0,
          f"within={fmt_seeds(within)} across={across:.2f}")


# ---------------------------------------------------------------- criterion 6


def property_line(name, fn):
    try:
        fn()
    except AssertionError as exc:
        report(name, False, str(exc).splitlines()[0] if str(exc) else "assertion failed")
        raise
    report(name, True, "holds")


def test_c6_bank_identity():
    property_line("6 bank zero-profit identity", test_core.test_bank_zero_profit_identity)


def test_c6_budget_exhaustion():
    property_line("6 budget exhaustion <= 1e-12", test_core.test_budget_exhaustion)


def test_c6_hiring_pool():
    property_line("6 hiring-pool identity <= 1e-10", test_core.test_hiring_pool_identity)


def test_c6_wage_clamp():
    property_line("6 wage clamp gives zero profit", test_core.test_wage_clamp_gives_zero_profit)


def test_c6_oracle():
    def all_seeds():
        for seed in range(20):
            test_oracle.check(ModelParams(**test_oracle.BASE, seed=seed), T=5)

    property_line("6 scalar oracle equivalence n=3, T=5", all_seeds)


def test_c6_determinism(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("ratio_R: 1.3\ntau_R: 0.5\ntau_T: 0\nphi_pi: 0\npi_star_annual: 0\n"
                   "rho_star_annual: 1\nn_firms: 1000\nT: 3000\nT_eq: 1500\n")
    for d in ("a", "b"):
        main(["run", "--config", str(cfg), "--out", str(tmp_path / d)])
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("trajectory.csv", "summary.json"))
    check("6 determinism: byte-identical reruns", same, "trajectory.csv and summary.json")


def test_c6_scheduling_invariance():
    raw = dict(ratio_R=1.3, tau_R=0.5, tau_T=0.0, phi_pi=0.0, pi_star_annual=0.0,
               rho_star_annual=1.0, **CI_SCALE, seeds=2,
               sweep_ratio_R=[0.2, 1.3], sweep_rho_star_annual=[1.0, 3.0])
    cfg = build_config(raw)
    one = sweep_tables(cfg, run_sweep(cfg.sweep_spec(), workers=1))
    eight = sweep_tables(cfg, run_sweep(cfg.sweep_spec(), workers=8))
    check("6 sweep scheduling invariance: 1 vs 8 workers byte-identical", one == eight,
          f"{len(one[0])} + {len(one[1])} bytes")


@slow
@pytest.mark.parametrize("state, rho", [("LILO", 3.0), ("HIHO", 1.0)])
def test_c6_money_conservation_full_run(state, rho):
    devs = [simulate(params(rho, seed=s)).money_dev for s in SEEDS]
    check(f"6 money conservation <= 1e-8 relative over full {state}-native runs",
          max(devs) <= 1e-8, f"max |M-n|/n per seed={fmt_seeds(devs, '{:.1e}')}")


def test_c6_money_conservation_random_configs():
    property_line("6 money conservation on random configurations (1e-8*n + 1e-12*gross)",
                  test_core.test_step_invariants)
