"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line with its runtime (run with ``pytest tests/test_acceptance.py -s``
to watch them stream).

Monte Carlo criteria draw from grid-discretized versions of the benchmark
data-generating processes, so every target is available in closed form
(survival and incidence curves evaluated at grid points, composed through
exact step integrals) independently of the transformation code under test.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from cutlearn.crossfit import PipelineSpec, SplitPlan, audit_fold_hygiene, run_evaluation_pipeline
from cutlearn.curves import CurveBundle, NuisanceSet
from cutlearn.metrics import evaluate
from cutlearn.nuisance import NuisanceConfig, ensemble_select
from cutlearn.simgen import (
    SettingId,
    cause_rate,
    censoring_survival,
    event_survival,
    generate,
    hybrid_cif,
    hybrid_rmtl,
    sample_discrete,
    true_hte,
    true_nuisance_set,
    true_propensity,
)
from cutlearn.transforms import (
    EstimandSpec,
    cut_values,
    if_transform_values,
    implied_mean,
    separable_cut_values,
    transform_targets,
)

RNG_SEED = 20260810


@contextmanager
def criterion(number, name, budget_seconds):
    start = time.perf_counter()
    try:
        yield
    except Exception:
        print(f"ACCEPTANCE {number:>2} {name}: FAIL ({time.perf_counter() - start:.1f}s)")
        raise
    elapsed = time.perf_counter() - start
    status = "PASS" if elapsed <= budget_seconds else f"PASS (over budget {budget_seconds}s)"
    print(f"ACCEPTANCE {number:>2} {name}: {status} ({elapsed:.1f}s)")
    assert elapsed <= budget_seconds, f"runtime {elapsed:.1f}s exceeds budget {budget_seconds}s"


def random_bundle(rng, m, n_causes=2, max_total=0.3):
    grid = np.sort(rng.uniform(0.1, 5.0, size=m))
    cause = {j: rng.uniform(0, max_total / (n_causes * m) * 3, (1, m)) for j in range(1, n_causes + 1)}
    cens = rng.uniform(0, max_total / m * 2, (1, m))
    return CurveBundle(grid, cause, cens)


def observation_mix(rng, bundle, horizon, n_extra=4):
    hi = max(bundle.grid[-1], horizon)
    times = np.concatenate([bundle.grid, rng.uniform(0.05, hi + 0.5, n_extra), [hi + 1.0]])
    causes = rng.integers(0, max(bundle.causes) + 1, size=times.size)
    return times, causes


def weighted_mean_and_se(w, y):
    est = np.sum(w * y) / np.sum(w)
    resid = w * (y - est)
    se = np.std(resid, ddof=1) / (np.mean(w) * np.sqrt(y.size))
    return est, se


def test_criterion_1_uncensored_reduction():
    with criterion(1, "uncensored reduction", 1.0):
        rng = np.random.default_rng(RNG_SEED)
        worst = 0.0
        checked = 0
        while checked < 1000:
            base = random_bundle(rng, m=int(rng.integers(3, 9)))
            b = CurveBundle(base.grid, base.cause_increments, np.zeros((1, base.grid.size)))
            h = float(rng.uniform(0.3, 5.5))
            n = 50
            times = rng.uniform(0.05, 6.0, n)
            causes = rng.integers(1, 3, size=n)
            raw = {
                ("survival", "bj"): (times > h).astype(float),
                ("survival", "ipcw1"): (times > h).astype(float),
                ("survival", "ipcw2"): (times > h).astype(float),
                ("survival", "aipcw"): (times > h).astype(float),
                ("rmst", "bj"): np.minimum(times, h),
                ("rmst", "ipcw"): np.minimum(times, h),
                ("rmst", "aipcw"): np.minimum(times, h),
                ("cif", "bj"): ((times <= h) & (causes == 1)).astype(float),
                ("cif", "ipcw"): ((times <= h) & (causes == 1)).astype(float),
                ("cif", "aipcw"): ((times <= h) & (causes == 1)).astype(float),
                ("rmtl", "bj"): (h - np.minimum(times, h)) * (causes == 1),
                ("rmtl", "ipcw"): (h - np.minimum(times, h)) * (causes == 1),
                ("rmtl", "aipcw"): (h - np.minimum(times, h)) * (causes == 1),
            }
            for (fam, kind), target in raw.items():
                spec = EstimandSpec(fam, h, 1 if fam in ("cif", "rmtl") else None)
                vals = cut_values(spec, kind, b, times, causes)
                worst = max(worst, float(np.max(np.abs(vals - target))))
            checked += n
        assert worst <= 1e-10, worst


def test_criterion_2_aipcw_algebraic_identities():
    with criterion(2, "aipcw algebraic identities", 10.0):
        rng = np.random.default_rng(RNG_SEED + 1)
        worst_forms = worst_surv = worst_rm = 0.0
        checked = 0
        while checked < 1000:
            b = random_bundle(rng, m=int(rng.integers(3, 10)))
            h = float(rng.uniform(0.3, 5.5))
            times, causes = observation_mix(rng, b, h)
            specs = [
                EstimandSpec.survival(h),
                EstimandSpec.rmst(h),
                EstimandSpec.cif(1, h),
                EstimandSpec.cif(2, h),
                EstimandSpec.rmtl(1, h),
                EstimandSpec.rmtl(2, h),
            ]
            vals = {}
            for spec in specs:
                a = cut_values(spec, "aipcw", b, times, causes, form="event")
                c = cut_values(spec, "aipcw", b, times, causes, form="censoring")
                worst_forms = max(worst_forms, float(np.max(np.abs(a - c))))
                vals[spec.family, spec.cause] = a
            surv_sum = vals["survival", None] + vals["cif", 1] + vals["cif", 2]
            worst_surv = max(worst_surv, float(np.max(np.abs(surv_sum - 1.0))))
            rm_sum = vals["rmst", None] + vals["rmtl", 1] + vals["rmtl", 2]
            worst_rm = max(worst_rm, float(np.max(np.abs(rm_sum - h))))
            checked += times.size
        assert worst_forms <= 1e-8, worst_forms
        assert worst_surv <= 1e-10, worst_surv
        assert worst_rm <= 1e-8, worst_rm


def test_criterion_3_influence_function_identity():
    with criterion(3, "aiptw-of-aipcw equals influence transform", 10.0):
        rng = np.random.default_rng(RNG_SEED + 2)
        worst = 0.0
        checked = 0
        while checked < 1000:
            grid = np.sort(rng.uniform(0.1, 5.0, 6))
            arms = {
                a: CurveBundle(
                    grid,
                    {1: rng.uniform(0, 0.08, (1, 6)), 2: rng.uniform(0, 0.08, (1, 6))},
                    rng.uniform(0, 0.12, (1, 6)),
                )
                for a in (0, 1)
            }
            pi1 = float(rng.uniform(0.15, 0.85))
            nus = NuisanceSet(np.array([pi1]), arms)
            h = float(rng.uniform(0.3, 5.0))
            times, causes = observation_mix(rng, arms[0], h)
            for spec in (
                EstimandSpec.survival(h),
                EstimandSpec.rmst(h),
                EstimandSpec.cif(1, h),
                EstimandSpec.rmtl(1, h),
            ):
                mu0 = implied_mean(spec, arms[0])[0]
                mu1 = implied_mean(spec, arms[1])[0]
                for arm in (0, 1):
                    y = cut_values(spec, "aipcw", arms[arm], times, causes)
                    _, aiptw = transform_targets("aiptw", y, np.full(times.size, arm), mu0, mu1, pi1)
                    phi = if_transform_values(spec, nus, np.full(times.size, arm), times, causes)
                    worst = max(worst, float(np.max(np.abs(aiptw - phi))))
            checked += times.size
        assert worst <= 1e-8, worst


def _five_points(seed):
    return np.random.default_rng(seed).uniform(-1.0, 1.0, (5, 6))


def _grid_for(setting, horizon):
    return np.unique(np.concatenate([np.linspace(0.02, 4.0 * horizon, 300), [horizon]]))


def test_criterion_4_cut_unbiasedness_monte_carlo():
    with criterion(4, "transformation unbiasedness (Monte Carlo)", 300.0):
        rng = np.random.default_rng(RNG_SEED + 3)
        n = 100_000
        cases = [
            ("S1", EstimandSpec.survival(2.0), ("bj", "ipcw1", "ipcw2", "aipcw")),
            ("S1", EstimandSpec.rmst(2.0), ("bj", "ipcw", "aipcw")),
            ("S3", EstimandSpec.cif(1, 3.0), ("bj", "ipcw", "aipcw")),
            ("S3", EstimandSpec.rmtl(1, 3.0), ("bj", "ipcw", "aipcw")),
        ]
        for setting, spec, kinds in cases:
            grid = _grid_for(setting, spec.horizon)
            for x in _five_points(RNG_SEED + 7):
                nus = true_nuisance_set(setting, x[None, :], grid)
                for arm in (0, 1):
                    b = nus.arm(arm)
                    target = float(implied_mean(spec, b)[0])
                    times, causes = sample_discrete(b, n, rng, beyond=grid[-1] + spec.horizon + 1)
                    for kind in kinds:
                        vals = cut_values(spec, kind, b, times, causes)
                        se = vals.std(ddof=1) / np.sqrt(n)
                        assert abs(vals.mean() - target) <= 4 * se, (setting, spec.family, kind, arm)


def _nelson_aalen_curves(setting, arm, grid, rng, n=40_000):
    """Covariate-free occurrence/exposure hazards from a marginal sample;
    deliberately misspecified relative to the conditional truth."""
    sid = SettingId(setting, n, int(rng.integers(1, 2**31)))
    data, _ = generate(sid)
    sel = data.arms == arm
    times, causes = data.times[sel], data.causes[sel]
    idx = np.searchsorted(grid, times, side="left")
    in_grid = idx <= grid.size - 1
    risk = np.zeros(grid.size)
    counts = np.bincount(np.minimum(idx, grid.size - 1) + 1, minlength=grid.size + 2)[: grid.size + 1]
    at_risk_count = sel.sum() - np.cumsum(counts)[:-1]
    cause_inc = {}
    for j in (1, 2) if setting in ("S3", "S4") else (1,):
        ev = np.zeros(grid.size)
        hit = in_grid & (causes == j)
        np.add.at(ev, np.minimum(idx[hit], grid.size - 1), 1.0)
        cause_inc[j] = np.where(at_risk_count > 0, ev / np.maximum(at_risk_count, 1), 0.0)[None, :]
    evc = np.zeros(grid.size)
    hitc = in_grid & (causes == 0)
    np.add.at(evc, np.minimum(idx[hitc], grid.size - 1), 1.0)
    cens_inc = np.where(at_risk_count > 0, evc / np.maximum(at_risk_count, 1), 0.0)[None, :]
    return cause_inc, cens_inc


def test_criterion_5_double_robustness_monte_carlo():
    with criterion(5, "double robustness (Monte Carlo)", 300.0):
        rng = np.random.default_rng(RNG_SEED + 4)
        n = 100_000
        cases = [
            ("S1", EstimandSpec.survival(2.0)),
            ("S1", EstimandSpec.rmst(2.0)),
            ("S3", EstimandSpec.cif(1, 3.0)),
            ("S3", EstimandSpec.rmtl(1, 3.0)),
        ]
        for setting, spec in cases:
            grid = _grid_for(setting, spec.horizon)
            na_by_arm = {a: _nelson_aalen_curves(setting, a, grid, rng) for a in (0, 1)}
            for x in _five_points(RNG_SEED + 8)[:3]:
                nus = true_nuisance_set(setting, x[None, :], grid)
                for arm in (0, 1):
                    b_true = nus.arm(arm)
                    na_cause, na_cens = na_by_arm[arm]
                    wrong_g = CurveBundle(grid, b_true.cause_increments, na_cens)
                    wrong_event = CurveBundle(grid, na_cause, b_true.censoring_increments)
                    target = float(implied_mean(spec, b_true)[0])
                    times, causes = sample_discrete(b_true, n, rng, beyond=grid[-1] + spec.horizon + 1)
                    for label, mixed in (("wrong censoring", wrong_g), ("wrong events", wrong_event)):
                        vals = cut_values(spec, "aipcw", mixed, times, causes)
                        se = vals.std(ddof=1) / np.sqrt(n)
                        assert abs(vals.mean() - target) <= 4 * se, (setting, spec.family, label, arm)


def test_criterion_6_transformed_minimizer_recovers_truth():
    with criterion(6, "cell-wise minimizer recovery (all transformed learners)", 300.0):
        rng = np.random.default_rng(RNG_SEED + 5)
        spec = EstimandSpec.rmst(2.0)
        grid = _grid_for("S1", spec.horizon)
        anchors = _five_points(RNG_SEED + 9)
        n_cell = 100_000
        for x in anchors:
            nus = true_nuisance_set("S1", x[None, :], grid)
            pi1 = float(true_propensity("S1", x[None, :])[0])
            mu = {a: float(implied_mean(spec, nus.arm(a))[0]) for a in (0, 1)}
            psi0 = mu[1] - mu[0]
            arms = (rng.uniform(size=n_cell) < pi1).astype(int)
            y = np.empty(n_cell)
            phi = np.empty(n_cell)
            for a in (0, 1):
                rows = np.flatnonzero(arms == a)
                tt, cc = sample_discrete(nus.arm(a), rows.size, rng, beyond=grid[-1] + 3.0)
                y[rows] = cut_values(spec, "aipcw", nus.arm(a), tt, cc)
                phi[rows] = if_transform_values(spec, nus, np.full(rows.size, a), tt, cc)
            for kind in ("iptw", "ra", "aiptw", "if", "mc", "mcea", "r", "u"):
                y_in = phi if kind == "if" else y
                w, ystar = transform_targets(kind, y_in, arms, mu[0], mu[1], pi1)
                est, se = weighted_mean_and_se(w, ystar)
                assert abs(est - psi0) <= 4 * se, (kind, psi0, est, se)


def _discrete_hybrid_target(setting, x, grid, j, cause_arm, competing_arm, horizon, scale):
    """Independent oracle for the grid-rounded hybrid incidence: closed-form
    per-arm hazard increments composed through explicit products and sums."""
    other = 2 if j == 1 else 1
    s_prev = {}
    for arm in (cause_arm, competing_arm):
        s_vals = np.array([event_survival(setting, t, x[None, :], arm)[0] for t in grid])
        s_prev[arm] = np.concatenate(([1.0], s_vals[:-1]))
    def cause_increments(jj, arm):
        f_vals = np.array([hybrid_cif(setting, t, x[None, :], jj, arm, arm)[0] for t in grid])
        f_prev = np.concatenate(([0.0], f_vals[:-1]))
        return (f_vals - f_prev) / s_prev[arm]
    dj = cause_increments(j, cause_arm)
    do = cause_increments(other, competing_arm)
    s_hyb_prev = np.concatenate(([1.0], np.cumprod(1.0 - dj - do)[:-1]))
    f_hyb = np.cumsum(s_hyb_prev * dj)
    k = int(np.searchsorted(grid, horizon, side="right")) - 1
    if scale == "cif":
        return float(f_hyb[k])
    knots = np.concatenate(([0.0], grid[: k + 1], [horizon]))
    vals = np.concatenate(([0.0], f_hyb[: k + 1]))
    return float(np.sum(vals * np.diff(knots)))


def test_criterion_7_separable_decomposition():
    with criterion(7, "separable direct + indirect = total", 120.0):
        rng = np.random.default_rng(RNG_SEED + 6)
        # analytic part: closed forms, both scales, both fixed arms
        x = rng.uniform(-1, 1, (200, 6))
        for t in (2.0, 4.0):
            total_c = true_hte("S3", EstimandSpec.cif(1, t), x)
            total_r = true_hte("S3", EstimandSpec.rmtl(1, t), x)
            for a_star in (0, 1):
                dir_c = true_hte("S3", EstimandSpec.separable_direct_cif(1, t, a_star), x)
                ind_c = true_hte("S3", EstimandSpec.separable_indirect_cif(1, t, 1 - a_star), x)
                assert np.max(np.abs(dir_c + ind_c - total_c)) <= 1e-10
                dir_r = true_hte("S3", EstimandSpec.separable_direct_rmtl(1, t, a_star), x)
                ind_r = true_hte("S3", EstimandSpec.separable_indirect_rmtl(1, t, 1 - a_star), x)
                assert np.max(np.abs(dir_r + ind_r - total_r)) <= 1e-10

        # Monte Carlo part: transformed means at two covariate points
        n = 100_000
        t = 3.0
        grid = _grid_for("S3", t)
        for x0 in _five_points(RNG_SEED + 10)[:2]:
            nus = true_nuisance_set("S3", x0[None, :], grid)
            draws = {
                a: sample_discrete(nus.arm(a), n, rng, beyond=grid[-1] + t + 1.0) for a in (0, 1)
            }

            def mc_mean(spec, arm, scale):
                tt, cc = draws[arm]
                if spec.is_separable:
                    vals = separable_cut_values(spec, nus, arm, tt, cc)
                else:
                    vals = cut_values(spec, "aipcw", nus.arm(arm), tt, cc)
                return vals.mean(), vals.std(ddof=1) / np.sqrt(n)

            for scale in ("cif", "rmtl"):
                fam_dir = f"sep_direct_{scale}"
                fam_ind = f"sep_indirect_{scale}"
                base_total = EstimandSpec(scale, t, 1)
                parts = {}
                for arm in (0, 1):
                    m, s = mc_mean(EstimandSpec(fam_dir, t, 1, 1), arm, scale)
                    tgt = _discrete_hybrid_target("S3", x0, grid, 1, arm, 1, t, scale)
                    assert abs(m - tgt) <= 4 * s, (fam_dir, arm)
                    parts[("dir", arm)] = (m, s)
                    m, s = mc_mean(EstimandSpec(fam_ind, t, 1, 0), arm, scale)
                    tgt = _discrete_hybrid_target("S3", x0, grid, 1, 0, arm, t, scale)
                    assert abs(m - tgt) <= 4 * s, (fam_ind, arm)
                    parts[("ind", arm)] = (m, s)
                    m, s = mc_mean(base_total, arm, scale)
                    parts[("tot", arm)] = (m, s)
                combo = (
                    parts[("dir", 1)][0] - parts[("dir", 0)][0]
                    + parts[("ind", 1)][0] - parts[("ind", 0)][0]
                    - parts[("tot", 1)][0] + parts[("tot", 0)][0]
                )
                combo_se = np.sqrt(sum(v[1] ** 2 for v in parts.values()))
                assert abs(combo) <= 4 * combo_se, scale


def test_criterion_8_ensemble_selector_dominance():
    with criterion(8, "ensemble selector dominates every vertex", 30.0):
        rng = np.random.default_rng(RNG_SEED + 11)
        for task in range(20):
            n = int(rng.integers(50, 400))
            v = int(rng.integers(1, 7))
            y = rng.normal(size=n)
            preds = rng.normal(size=(n, v)) + y[:, None] * rng.uniform(-0.5, 1.0, v)
            w = rng.uniform(0.05, 2.0, n)
            ew = ensemble_select(preds, y, w)
            assert ew.cv_loss <= ew.candidate_losses.min() + 1e-8, task
            assert abs(ew.weights.sum() - 1.0) <= 1e-10
            assert np.all(ew.weights >= -1e-10)


BENCH_LEARNERS = ("s", "t", "x", "if", "iptw", "ra", "aiptw", "mc", "mcea", "r", "u")
NON_IPW = ("s", "t", "x", "ra", "r")  # no inverse-propensity factor in w* or Y*


@pytest.fixture(scope="module")
def desk_bench():
    cfg = NuisanceConfig(
        base_learners=("constant", "ridge", "knn"), grid_cap=64, hazard_bins=12, cv_folds=2
    )
    spec_est = EstimandSpec.rmst(2.0)
    medians = {}
    audits = 0
    for setting in ("S1", "S2"):
        pehe = {k: [] for k in BENCH_LEARNERS}
        for rep in range(10):
            seed = 1000 + 37 * rep
            data, truth = generate(SettingId(setting, 2000, seed))
            spec = PipelineSpec(
                estimand=spec_est,
                learners=BENCH_LEARNERS,
                nuisance=cfg.with_seed(seed),
                plan=SplitPlan(k1=2, k2=2, k3=2, seed=seed),
            )
            result = run_evaluation_pipeline(data, spec)
            assert audit_fold_hygiene(result) == []
            audits += 1
            psi0 = truth.true_hte(spec_est)
            for k in BENCH_LEARNERS:
                pehe[k].append(evaluate(result.predictions[k], psi0).pehe)
        medians[setting] = {k: float(np.median(v)) for k, v in pehe.items()}
    return medians, audits


def test_criterion_9_desk_scale_benchmark(desk_bench):
    with criterion(9, "qualitative overlap benchmark (S1/S2, n=2000, 10 reps)", 1800.0):
        medians, _ = desk_bench
        s1 = medians["S1"]
        non_ipw = {k: s1[k] for k in NON_IPW}
        best = min(non_ipw.values())
        spread_ok = max(non_ipw.values()) <= 2.0 * best
        assert spread_ok, f"S1 non-IPW medians {non_ipw} spread beyond 2x of best"
        s2 = medians["S2"]
        for unstable in ("iptw", "mc"):
            for stable in ("ra", "aiptw", "r"):
                assert s2[unstable] > s2[stable], (unstable, stable, s2)
        # losing overlap strictly hurts the inverse-weighted learner itself
        assert s2["iptw"] > s1["iptw"]


def test_criterion_10_fold_hygiene_on_bench(desk_bench):
    with criterion(10, "fold-hygiene audit clean on every bench run", 5.0):
        _, audits = desk_bench
        assert audits == 20
