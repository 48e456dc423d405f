"""Acceptance criteria 1-8.

Each test records a one-line verdict (shown in the terminal summary and on
stdout when run as a script: ``python3 tests/test_acceptance.py``).
"""

from __future__ import annotations

import time
import warnings

import numpy as np
import pytest

from conftest import record
from fuzz import random_staggered, random_two_period
from oracles import WITHIN_G3, bacon_binary, uniform_w1

from dose_did import mp_decomp, multiperiod, simlab, twfe
from dose_did.baseline import att_dd
from dose_did.inference import BootstrapSpec, bootstrap
from dose_did.panel import PanelDataset


# --------------------------------------------------------------------------
# 1. decomposition identities on fuzz panels


def test_criterion_1_decomposition_identities():
    start = time.perf_counter()
    rng = np.random.default_rng(20240601)
    worst_res, worst_norm = 0.0, 0.0
    for _ in range(100):
        two = random_two_period(rng)
        beta = twfe.twfe_beta_2p(two)
        for method in twfe.METHODS:
            rep = twfe.decompose(two, method)
            recon = sum(t.weight * t.component for t in rep.terms)
            worst_res = max(worst_res, abs(beta - recon))
            target = 0.0 if method == "levels" else 1.0
            worst_norm = max(worst_norm, abs(rep.weight_total() - target))
        mp = random_staggered(rng)
        rep = mp_decomp.decompose_mp(mp, with_nuisance=False)
        worst_res = max(worst_res, abs(mp_decomp.twfe_beta_mp(mp) - rep.reconstruct()))
        worst_norm = max(worst_norm, abs(rep.weight_total() - 1.0))
    elapsed = time.perf_counter() - start
    ok = worst_res < 1e-8 and worst_norm < 1e-10 and elapsed < 30
    record(1, ok, f"max residual {worst_res:.2e} (<1e-8), max normalization error "
                  f"{worst_norm:.2e} (<1e-10), {elapsed:.1f}s (<30s)")
    assert ok


# --------------------------------------------------------------------------
# 2. TWFE slope in the exponential-dose simulation


def test_criterion_2_exponential_simulation():
    start = time.perf_counter()
    betas = np.array([
        twfe.twfe_beta_2p(simlab.generate(simlab.DgpSpec("two-period-exp", seed=s))[0])
        for s in range(1000)
    ])
    target = simlab.oracle_twfe_target(simlab.DgpSpec("two-period-exp", seed=99))
    mc_se = betas.std(ddof=1) / np.sqrt(betas.size)
    p5 = float(np.percentile(betas, 5))
    elapsed = time.perf_counter() - start
    ok = abs(betas.mean() - target) < 2 * mc_se and p5 >= 1.5 and elapsed < 60
    record(2, ok, f"mean beta {betas.mean():.4f} vs oracle {target:.4f} "
                  f"(|diff| {abs(betas.mean() - target):.4f} < 2*MCSE {2 * mc_se:.4f}); "
                  f"5th pct {p5:.3f} >= 1.5; {elapsed:.1f}s (<60s)")
    assert ok


# --------------------------------------------------------------------------
# 3. uniform-dose weight law


def test_criterion_3_uniform_weight_law():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    n = 100_000
    D = rng.uniform(0, 1, n)
    Y = rng.normal(size=(n, 2))
    data = PanelDataset.from_arrays(D, Y)
    grid = np.linspace(0.05, 0.95, 181)
    dev = float(np.max(np.abs(twfe.w1_density(data, grid) - uniform_w1(grid))))
    elapsed = time.perf_counter() - start
    ok = dev < 0.05 and elapsed < 10
    record(3, ok, f"max |w1 - 6d(1-d)| = {dev:.4f} (<0.05), {elapsed:.1f}s (<10s)")
    assert ok


# --------------------------------------------------------------------------
# 4. staggered two-group oracle


def test_criterion_4_four_group_oracle():
    start = time.perf_counter()
    data, oracle = simlab.generate(simlab.DgpSpec("four-group", seed=4))
    T = data.n_periods
    worst_ate = 0.0
    for g in data.timing.treated_groups:
        for d in np.unique(data.dose[data.first_treated == g]):
            for t in range(g, T + 1):
                est = multiperiod.ate_gtd(data, g, t, float(d))
                worst_ate = max(worst_ate, abs(est.value - oracle.ate_gtd(g, t, float(d))))
    within = mp_decomp.delta_within(data, 3)
    rep = mp_decomp.decompose_mp(data)
    dyn = [v["dynamics_term"] for v in rep.nuisance.values()]
    worst_dyn = max(abs(x) for x in dyn)
    elapsed = time.perf_counter() - start
    ok = worst_ate < 1e-10 and abs(within - WITHIN_G3) < 1e-10 and worst_dyn < 1e-8 and elapsed < 5
    record(4, ok, f"max |ate - d^1.5| {worst_ate:.1e}; within(3) {within:.10f} vs "
                  f"{WITHIN_G3:.10f}; max |dynamics| {worst_dyn:.1e}; {elapsed:.2f}s (<5s)")
    assert ok


# --------------------------------------------------------------------------
# 5. homogeneous effects: TWFE equals the overall average slope


def _acr_star_mp(data):
    cells = multiperiod.group_time_cells(data, "acr", "nyt")
    return multiperiod.aggregate(data, cells, "star").value


def test_criterion_5_homogeneity_endgame():
    start = time.perf_counter()
    const, _ = simlab.generate(simlab.DgpSpec("constant-acr", seed=5))
    gap_const = mp_decomp.twfe_beta_mp(const) - _acr_star_mp(const)

    ramp, _ = simlab.generate(simlab.DgpSpec("ramp", seed=5))
    gap_ramp = mp_decomp.twfe_beta_mp(ramp) - _acr_star_mp(ramp)
    rep = mp_decomp.decompose_mp(ramp)
    dyn = sum(v["dynamics_contribution"] for v in rep.nuisance.values())
    het = sum(v["heterogeneity_contribution"] or 0.0 for v in rep.nuisance.values())
    elapsed = time.perf_counter() - start
    ok = (abs(gap_const) < 1e-8 and abs(gap_ramp) > 0.1
          and np.sign(dyn) == np.sign(gap_ramp) and abs(dyn) > abs(het) and elapsed < 5)
    record(5, ok, f"constant gap {gap_const:.1e} (<1e-8); ramp gap {gap_ramp:.3f} (>0.1) with "
                  f"dynamics contribution {dyn:.3f} (same sign), heterogeneity {het:.3f}; "
                  f"{elapsed:.2f}s (<5s)")
    assert ok


# --------------------------------------------------------------------------
# 6. binary staggered collapse


def test_criterion_6_binary_collapse():
    rng = np.random.default_rng(6)
    n, T = 400, 7
    G = np.array([3, 5, 6, 8])[rng.integers(0, 4, n)]
    G[:4] = [3, 5, 6, 8]
    D = np.where(G <= T, 1.0, 0.0)
    t = np.arange(1, T + 1)
    Y = rng.normal(size=(n, T)) + rng.normal(size=(n, 1)) + 0.2 * t
    Y += np.where(t[None, :] >= G[:, None], 1.0 + 0.3 * (t[None, :] - G[:, None]) + 0.5 * (G[:, None] == 3), 0.0)
    data = PanelDataset.from_arrays(D, Y, G)
    rep = mp_decomp.decompose_mp(data, with_nuisance=False)

    zero = max([abs(w) for w, _ in rep.within_terms.values()]
               + [abs(c["post_pre"][0]) for c in rep.timing_terms.values()])
    ref = {}
    for kind, a, b, w, est in bacon_binary(Y, G):
        ref[(kind, a, b)] = (w, est)
    worst = 0.0
    for (g, k), comps in rep.timing_terms.items():
        if k > T:
            mine = [comps["mid_pre"]]
            theirs = [ref[("vs_never", g, k)]]
        else:
            mine = [comps["mid_pre"], comps["post_mid"]]
            theirs = [ref[("early_vs_late", g, k)], ref[("late_vs_early", g, k)]]
        for (w1, e1), (w2, e2) in zip(mine, theirs):
            worst = max(worst, abs(w1 - w2), abs(e1 - e2))
    total_ref = sum(w * e for w, e in ref.values())
    worst = max(worst, abs(total_ref - rep.beta_twfe))
    ok = zero < 1e-12 and worst < 1e-10
    record(6, ok, f"within/long weights max {zero:.1e} (<1e-12); max deviation from "
                  f"two-group timing decomposition {worst:.1e} (<1e-10)")
    assert ok


# --------------------------------------------------------------------------
# 7. pre-tests cannot tell standard from strong parallel trends


def test_criterion_7_pretest_indistinguishability():
    T = 4
    reps = 200
    pre_diff = np.zeros((reps, T - 1))
    slope_diff = np.zeros(reps)
    bias = np.zeros(reps)
    oracle = simlab.paired_pt_oracle(T)
    for r in range(reps):
        a, b = simlab.paired_pt_dgps(1000 + r, T=T)
        pa = [x.value for x in multiperiod.pretest(a, -(T - 1))]
        pb = [x.value for x in multiperiod.pretest(b, -(T - 1))]
        pre_diff[r] = np.subtract(pa, pb)
        slope_diff[r] = _acr_star_mp(a) - _acr_star_mp(b)
        Da = a.dose[a.dose > 0]
        bias[r] = np.mean([oracle.selection_bias_slope(d) for d in Da])
    mean, se = pre_diff.mean(0), pre_diff.std(0, ddof=1) / np.sqrt(reps)
    pre_ok = bool(np.all(np.abs(mean) <= 2 * se))
    rel = abs(slope_diff.mean() - bias.mean()) / bias.mean()
    ok = pre_ok and rel < 0.10
    pre_txt = ", ".join(f"e={e}: {m:+.4f}+/-{2 * s:.4f}" for e, m, s in zip(range(-(T - 1), 0), mean, se))
    record(7, ok, f"pretest differences {pre_txt}; slope gap {slope_diff.mean():.4f} vs "
                  f"selection bias {bias.mean():.4f} (rel. err {rel:.3f} < 0.10)")
    assert ok


# --------------------------------------------------------------------------
# 8. bootstrap coverage


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_criterion_8_bootstrap_coverage():
    start = time.perf_counter()
    n_sets, covered = 500, 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for s in range(n_sets):
            data, oracle = simlab.generate(simlab.DgpSpec("two-period-exp", seed=50_000 + s, noise_sd=3.0))
            d = float(np.quantile(data.dose[data.dose > 0], 0.5, method="lower"))
            res = bootstrap(data, lambda p, d=d: att_dd(p, d), BootstrapSpec(499, seed=s))
            covered += res.ci_lower <= oracle.att_dd(d) <= res.ci_upper
    rate = covered / n_sets
    elapsed = time.perf_counter() - start
    ok = 0.93 <= rate <= 0.97 and elapsed < 300
    record(8, ok, f"coverage {rate:.3f} over {n_sets} datasets (target 0.93-0.97), {elapsed:.0f}s (<300s)")
    assert ok


if __name__ == "__main__":
    import sys

    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
