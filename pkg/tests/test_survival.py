import numpy as np
import pytest

from cutlearn.survival import (
    CifCurve,
    CumulativeHazard,
    GridMismatchError,
    InvalidHazardError,
    Observation,
    StepFunction,
    cif_from_hazards,
    martingale_integral,
    product_limit,
    restricted_integral,
    step_eval,
    step_left_limit,
)


def step(times, values, init=0.0):
    return StepFunction(np.asarray(times, float), np.asarray(values, float), init)


class TestStepEvaluation:
    def test_before_first_jump(self):
        f = step([2.0], [0.5], init=1.0)
        assert step_eval(f, 1.9) == 1.0

    def test_right_continuity_at_jump(self):
        f = step([2.0], [0.5], init=1.0)
        assert step_eval(f, 2.0) == 0.5

    def test_constant_after_last_jump(self):
        f = step([2.0], [0.5], init=1.0)
        assert step_eval(f, 3.0) == 0.5

    def test_left_limit_at_jump(self):
        f = step([2.0], [0.5], init=1.0)
        assert step_left_limit(f, 2.0) == 1.0
        assert step_left_limit(f, 2.5) == 0.5

    def test_left_limit_no_jumps(self):
        f = step([], [], init=0.7)
        assert step_left_limit(f, 7.0) == 0.7

    def test_right_continuity_property(self, rng):
        times = np.sort(rng.uniform(0.1, 5, 8))
        f = step(times, rng.normal(size=8), init=rng.normal())
        eps = 1e-12
        for t in times:
            assert step_eval(f, t) == step_eval(f, t + eps)

    def test_increasing_jump_times_required(self):
        with pytest.raises(ValueError):
            step([2.0, 2.0], [1.0, 2.0])


class TestProductLimit:
    def test_single_factor(self):
        lam = CumulativeHazard(np.array([1.0]), np.array([0.5]))
        s = product_limit(lam)
        assert step_eval(s, 1.0) == pytest.approx(0.5)
        assert step_eval(s, 0.99) == 1.0

    def test_two_factors(self):
        lam = CumulativeHazard(np.array([1.0, 2.0]), np.array([0.5, 1.0]))
        s = product_limit(lam)
        assert step_eval(s, 2.0) == pytest.approx(0.25)

    def test_zero_hazard_identity(self):
        lam = CumulativeHazard(np.array([1.0, 2.0]), np.array([0.0, 0.0]))
        s = product_limit(lam)
        assert step_eval(s, 5.0) == 1.0

    def test_invalid_increment_rejected(self):
        with pytest.raises(InvalidHazardError):
            CumulativeHazard(np.array([1.0, 2.0]), np.array([0.5, 1.8]))

    def test_monotone_in_unit_interval(self, rng):
        for trial in range(25):
            inc = rng.uniform(0, 1, 10)
            lam = CumulativeHazard(np.arange(1.0, 11.0), np.cumsum(inc))
            vals = product_limit(lam).jump_values
            assert np.all(vals >= 0) and np.all(vals <= 1)
            assert np.all(np.diff(vals) <= 1e-15)


class TestCifFromHazards:
    def test_single_jump(self):
        lam = CumulativeHazard(np.array([1.0]), np.array([0.4]))
        f = cif_from_hazards(lam, lam)
        assert step_eval(f, 1.0) == pytest.approx(0.4)

    def test_zero_cause(self):
        lam_all = CumulativeHazard(np.array([1.0]), np.array([0.4]))
        lam_j = CumulativeHazard(np.array([1.0]), np.array([0.0]))
        f = cif_from_hazards(lam_j, lam_all)
        assert step_eval(f, 5.0) == 0.0

    def test_two_causes_sum(self):
        l1 = CumulativeHazard(np.array([1.0]), np.array([0.2]))
        l2 = CumulativeHazard(np.array([1.0]), np.array([0.1]))
        lall = CumulativeHazard(np.array([1.0]), np.array([0.3]))
        f1, f2 = cif_from_hazards(l1, lall), cif_from_hazards(l2, lall)
        s = product_limit(lall)
        assert step_eval(f1, 1.0) == pytest.approx(0.2)
        assert step_eval(f2, 1.0) == pytest.approx(0.1)
        assert step_eval(s, 1.0) == pytest.approx(0.7)
        assert step_eval(f1, 1.0) + step_eval(f2, 1.0) + step_eval(s, 1.0) == pytest.approx(1.0)

    def test_grid_mismatch(self):
        l1 = CumulativeHazard(np.array([1.0]), np.array([0.2]))
        l2 = CumulativeHazard(np.array([2.0]), np.array([0.2]))
        with pytest.raises(GridMismatchError):
            cif_from_hazards(l1, l2)

    def test_cause_exceeding_total(self):
        lj = CumulativeHazard(np.array([1.0]), np.array([0.5]))
        lall = CumulativeHazard(np.array([1.0]), np.array([0.3]))
        with pytest.raises(InvalidHazardError):
            cif_from_hazards(lj, lall)

    def test_adding_up_random(self, rng):
        # S + sum_j F_j == 1 at every grid point, to machine precision
        for trial in range(30):
            m = rng.integers(2, 12)
            grid = np.sort(rng.uniform(0.1, 9, m))
            d1 = rng.uniform(0, 0.5, m)
            d2 = rng.uniform(0, 0.4, m)
            lall = CumulativeHazard(grid, np.cumsum(d1 + d2))
            l1 = CumulativeHazard(grid, np.cumsum(d1))
            l2 = CumulativeHazard(grid, np.cumsum(d2))
            s = product_limit(lall)
            f1, f2 = cif_from_hazards(l1, lall), cif_from_hazards(l2, lall)
            total = s.jump_values + f1.jump_values + f2.jump_values
            assert np.max(np.abs(total - 1.0)) <= 1e-12


class TestRestrictedIntegral:
    def test_constant_one(self):
        s = StepFunction(np.array([]), np.array([]), 1.0)
        assert restricted_integral(s, 5.0) == pytest.approx(5.0)

    def test_two_pieces(self):
        s = StepFunction(np.array([2.0]), np.array([0.5]), 1.0)
        assert restricted_integral(s, 4.0) == pytest.approx(3.0)

    def test_zero_curve(self):
        f = StepFunction(np.array([]), np.array([]), 0.0)
        assert restricted_integral(f, 3.0) == 0.0

    def test_linearity_and_monotonicity(self, rng):
        for trial in range(20):
            m = rng.integers(1, 8)
            grid = np.sort(rng.uniform(0.1, 5, m))
            v1, v2 = rng.uniform(0, 1, m), rng.uniform(0, 1, m)
            tau = float(rng.uniform(0.5, 6.0))
            f = StepFunction(grid, v1, 0.5)
            g = StepFunction(grid, v2, 0.25)
            both = StepFunction(grid, 2.0 * v1 + 3.0 * v2, 2 * 0.5 + 3 * 0.25)
            lhs = restricted_integral(both, tau)
            rhs = 2.0 * restricted_integral(f, tau) + 3.0 * restricted_integral(g, tau)
            assert lhs == pytest.approx(rhs, abs=1e-12)
            dominating = StepFunction(grid, v1 + 0.1, 0.6)
            assert restricted_integral(dominating, tau) >= restricted_integral(f, tau)


class TestMartingaleIntegral:
    def _obs(self, time, cause):
        return Observation(0, np.zeros(2), 1, time, cause)

    def test_event_single_jump(self):
        lam = CumulativeHazard(np.array([1.0]), np.array([0.3]))
        f = StepFunction(np.array([]), np.array([]), 1.0)
        val = martingale_integral(self._obs(2.0, 1), f, lam, {1}, 3.0)
        assert val == pytest.approx(0.7)

    def test_pure_counting(self):
        lam = CumulativeHazard(np.array([1.0]), np.array([0.0]))
        f = StepFunction(np.array([]), np.array([]), 1.0)
        assert martingale_integral(self._obs(2.0, 1), f, lam, {1}, 3.0) == pytest.approx(1.0)

    def test_compensator_only_for_censored(self):
        lam = CumulativeHazard(np.array([1.0]), np.array([0.3]))
        f = StepFunction(np.array([]), np.array([]), 1.0)
        val = martingale_integral(self._obs(2.0, 0), f, lam, {1}, 3.0)
        assert val == pytest.approx(-0.3)

    def test_horizon_positive_required(self):
        lam = CumulativeHazard(np.array([1.0]), np.array([0.3]))
        f = StepFunction(np.array([]), np.array([]), 1.0)
        with pytest.raises(ValueError):
            martingale_integral(self._obs(2.0, 1), f, lam, {1}, 0.0)

    def test_zero_mean_monte_carlo(self):
        # simulate from a known discrete hazard with independent censoring on a
        # disjoint grid; the sample mean over 1e5 draws stays within 4 SE of 0
        rng = np.random.default_rng(7)
        grid = np.array([0.5, 1.0, 1.7, 2.4])
        inc = np.array([0.1, 0.15, 0.2, 0.25])
        lam = CumulativeHazard(grid, np.cumsum(inc))
        cens_grid = np.array([0.7, 1.4, 2.0])
        cens_inc = np.array([0.1, 0.1, 0.15])
        n = 100_000
        surv_prob = np.concatenate(([1.0], np.cumprod(1 - inc)))
        pmf_t = surv_prob[:-1] * inc
        pick = rng.choice(grid.size + 1, size=n, p=np.concatenate((pmf_t, [surv_prob[-1]])))
        t_event = np.where(pick < grid.size, grid[np.minimum(pick, grid.size - 1)], 99.0)
        gsurv = np.concatenate(([1.0], np.cumprod(1 - cens_inc)))
        pmf_c = gsurv[:-1] * cens_inc
        pick_c = rng.choice(cens_grid.size + 1, size=n, p=np.concatenate((pmf_c, [gsurv[-1]])))
        t_cens = np.where(pick_c < cens_grid.size, cens_grid[np.minimum(pick_c, cens_grid.size - 1)], 99.0)
        tt = np.minimum(t_event, t_cens)
        cause = (t_event <= t_cens).astype(int)
        f = StepFunction(np.array([1.2]), np.array([0.5]), 2.0)
        vals = np.array(
            [
                martingale_integral(Observation(i, np.zeros(1), 0, tt[i], cause[i]), f, lam, {1}, 3.0)
                for i in range(0, n, 10)
            ]
        )
        se = vals.std(ddof=1) / np.sqrt(vals.size)
        assert abs(vals.mean()) <= 4 * se


class TestObservation:
    def test_validation(self):
        with pytest.raises(ValueError):
            Observation(0, np.zeros(2), 1, -1.0, 1)
        with pytest.raises(ValueError):
            Observation(0, np.zeros(2), 2, 1.0, 1)
        with pytest.raises(ValueError):
            Observation(0, np.array([np.nan]), 1, 1.0, 1)
        with pytest.raises(ValueError):
            Observation(0, np.zeros(2), 1, 1.0, -1)

    def test_event_flag(self):
        assert Observation(0, np.zeros(1), 0, 1.0, 2).event == 1
        assert Observation(0, np.zeros(1), 0, 1.0, 0).event == 0


class TestCurveValidation:
    def test_survival_curve_monotone(self):
        with pytest.raises(ValueError):
            SurvivalCurve = __import__("cutlearn.survival", fromlist=["SurvivalCurve"]).SurvivalCurve
            SurvivalCurve(np.array([1.0, 2.0]), np.array([0.5, 0.8]))

    def test_cif_monotone(self):
        with pytest.raises(ValueError):
            CifCurve(np.array([1.0, 2.0]), np.array([0.5, 0.3]))
