import math

import numpy as np
from django.test import SimpleTestCase

from lab.conf import thresholds
from lab.exceptions import InvalidParameter
from lab.services import moments, verify
from lab.services.rng_paths import BrownianPath, SeedSpec, generate


def _within(verdict, target, n_se=5.0):
    se = (verdict.ci_high - verdict.ci_low) / (2 * 1.96)
    return abs(verdict.statistic - target) <= n_se * se


def _row(verdict, name):
    return next(e for e in verdict.estimates if e.row == name)


class MomentCheckTests(SimpleTestCase):
    def test_var_j(self):
        v = verify.check_var_j((0.5, 1.0, 2.0), n_paths=2000, steps=100, seed=SeedSpec(1))
        self.assertEqual(len(v.estimates), 6)
        self.assertAlmostEqual(v.statistic / v.threshold, 1.0, delta=0.15)

    def test_covariance(self):
        v = verify.check_covariance(1.0, n_paths=2000, steps=100, density_points=200, seed=SeedSpec(2))
        self.assertTrue(_row(v, "density_violations").passed)
        self.assertTrue(_row(v, "det_relative_error").passed)
        self.assertAlmostEqual(_row(v, "cov_bj").estimate, 0.5, delta=0.1)

    def test_rejects_bad_times(self):
        with self.assertRaises(InvalidParameter):
            verify.check_var_j((0.0, 1.0), n_paths=10, steps=10)


class StrongSchemeTests(SimpleTestCase):
    def test_isometry(self):
        v = verify.check_isometry(0.75, 1.0, 0.0, horizon=1.0, steps=200, n_paths=2000, seed=SeedSpec(3))
        self.assertTrue(_within(v, 0.0))
        self.assertTrue(_within_row(_row(v, "martingale"), 0.0))

    def test_zero_solution(self):
        v = verify.check_zero_solution(0.5, horizon=1.0, steps=200, seed=SeedSpec(4))
        self.assertTrue(v.passed)
        self.assertEqual(v.statistic, 0.0)

    def test_uniqueness(self):
        v = verify.check_uniqueness(0.75, 1.0, 0.0, (1e-2, 1e-3, 1e-4), n_paths=100, horizon=1.0, dt=1e-2,
                                    seed=SeedSpec(5))
        self.assertTrue(v.passed)
        self.assertLess(v.statistic, v.threshold)

    def test_uniqueness_rejects_origin_and_low_alpha(self):
        with self.assertRaises(InvalidParameter):
            verify.check_uniqueness(0.75, 0.0, 0.0, n_paths=10)
        with self.assertRaises(InvalidParameter):
            verify.check_uniqueness(0.5, 1.0, 0.0, n_paths=10)

    def test_origin_avoidance(self):
        v = verify.check_origin_avoidance(0.75, 1.0, 0.0, n_paths=100, horizon=1.0, dt_list=(1e-2, 5e-3),
                                          seed=SeedSpec(6))
        quantiles = [e for e in v.estimates if e.kind == "quantile"]
        self.assertEqual(len(quantiles), 2)
        self.assertTrue(all(e.estimate > 0 for e in quantiles))
        self.assertEqual(v.samples["minima"].shape, (100, 2))

    def test_origin_rejects_non_nested_steps(self):
        with self.assertRaises(InvalidParameter):
            verify.check_origin_avoidance(0.75, n_paths=10, horizon=1.0, dt_list=(1e-2, 3e-3))
        with self.assertRaises(InvalidParameter):
            verify.check_origin_avoidance(0.75, n_paths=10, horizon=1.0, dt_list=(5e-3, 1e-2))


def _within_row(est, target, n_se=5.0):
    se = (est.ci_high - est.ci_low) / (2 * 1.96)
    return abs(est.estimate - target) <= n_se * se


class WeakSolutionCheckTests(SimpleTestCase):
    def test_weak_isometry_away_from_origin(self):
        v = verify.check_weak_isometry(0.75, 1.0, 0.0, clock_horizon=1.0, steps=200, n_paths=300, seed=SeedSpec(7))
        self.assertTrue(_within(v, 0.0))

    def test_nonuniqueness(self):
        v = verify.check_nonuniqueness(0.5, n_paths=100, tilde_horizon=1.0, steps=200, grading=3.0, seed=SeedSpec(8))
        self.assertEqual(v.statistic, 1.0)
        self.assertTrue(_row(v, "zero_max_norm").passed)
        self.assertTrue(_row(v, "zero_replay_exact").passed)
        self.assertLess(abs(_row(v, "clock_refinement_change").estimate), 0.05)
        self.assertIsNone(_row(v, "clock_refinement_change").passed)
        self.assertIsNone(_row(v, "sign_positive").passed)
        self.assertTrue(_within_row(_row(v, "weak_isometry_gap"), 0.0))

    def test_nonuniqueness_alpha_range(self):
        with self.assertRaises(InvalidParameter):
            verify.check_nonuniqueness(1.0, n_paths=10)


class TransienceTests(SimpleTestCase):
    def test_hits_on_a_far_path(self):
        times = np.linspace(0.0, 100.0, 101)
        values = np.full(101, 50.0)
        values[0] = 0.0
        path = BrownianPath(times, values, np.full(101, 50.0))
        np.testing.assert_array_equal(verify.transience_hits(path, (10.0, 100.0), 0.4), [True, True])

    def test_misses_on_a_returning_path(self):
        times = np.linspace(0.0, 100.0, 101)
        values = np.full(101, 50.0)
        values[80] = 0.0
        path = BrownianPath(times, values, np.where(np.arange(101) == 80, 0.0, 50.0))
        np.testing.assert_array_equal(verify.transience_hits(path, (10.0, 100.0), 0.4), [True, False])

    def test_check_transience_shape(self):
        v = verify.check_transience(n_paths=40, checkpoints=(10.0, 100.0), steps=2000, seed=SeedSpec(9))
        fractions = [e for e in v.estimates if e.kind == "fraction"]
        self.assertEqual(len(fractions), 2)
        self.assertTrue(all(0.0 <= e.estimate <= 1.0 for e in fractions))
        with self.assertRaises(InvalidParameter):
            verify.check_transience(n_paths=4, checkpoints=(100.0, 10.0), steps=100)

    def test_mirrored_noise_gives_identical_hits(self):
        for i in range(20):
            path = generate(SeedSpec(90, i), 100.0, 2000)
            np.testing.assert_array_equal(
                verify.transience_hits(path, (10.0, 50.0, 100.0), 0.4),
                verify.transience_hits(path.negated(), (10.0, 50.0, 100.0), 0.4),
            )

    def test_final_interval_reported_against_fraction(self):
        v = verify.check_transience(n_paths=40, checkpoints=(10.0, 100.0), steps=2000, seed=SeedSpec(9))
        bound = _row(v, "r_final_lower_bound")
        self.assertIsNone(bound.passed)
        self.assertEqual(bound.threshold, v.threshold)
        self.assertEqual(bound.estimate, v.ci_low)
        self.assertEqual(bound.ci_high, v.ci_high)


class BlowupTests(SimpleTestCase):
    def test_curve_is_consistent(self):
        v, curve = verify.check_blowup(1.5, 1.0, 0.0, levels=(1e1, 1e2), horizon=10.0, n_paths=20, steps=500,
                                       seed=SeedSpec(10))
        np.testing.assert_array_equal(curve.levels, [10.0, 100.0])
        self.assertTrue(np.all(np.diff(curve.hit_fractions) <= 0))
        sigma = v.samples["sigma"]
        finite = sigma[np.isfinite(sigma)]
        self.assertTrue(np.all(finite <= 10.0))
        # The lower level is always reached no later than the higher one.
        both = np.isfinite(sigma[:, 1])
        self.assertTrue(np.all(sigma[both, 0] <= sigma[both, 1]))

    def test_control_never_reaches_the_level(self):
        v, curve = verify.check_blowup_control(0.9, 1.0, 0.0, levels=(1e3, 1e4), horizon=2.0, n_paths=20, steps=200,
                                               seed=SeedSpec(11))
        self.assertEqual(v.statistic, 0.0)
        self.assertTrue(v.passed)

    def test_separation(self):
        seed = SeedSpec(0)
        main = verify.Verdict("blowup", 1.0, 1.0, 1.0, 0.99, True, 1000, seed)
        control = verify.Verdict("blowup_control", 0.0, 0.0, 0.0, 0.01, True, 1000, seed)
        v = verify.blowup_separation(main, control)
        self.assertEqual(v.statistic, 1.0)
        self.assertTrue(v.passed)

    def test_blowup_needs_superlinear_alpha(self):
        with self.assertRaises(InvalidParameter):
            verify.check_blowup(1.0, n_paths=2)
        with self.assertRaises(InvalidParameter):
            verify.check_blowup_control(1.5, n_paths=2)

    def test_levels_validated(self):
        with self.assertRaises(InvalidParameter):
            verify.check_blowup(1.5, levels=(1e3, 1e2), n_paths=2)

    def test_curve_rejects_increasing_fractions(self):
        with self.assertRaises(AssertionError):
            verify.BlowupCurve(np.array([1.0, 2.0]), np.array([0.5, 0.6]), np.array([1.0, 2.0]))


class LemmaTests(SimpleTestCase):
    def test_lemma2_integrable(self):
        v = verify.check_lemma2(0.5, 1.0, n_paths=200, steps=200, refinements=1, seed=SeedSpec(12))
        self.assertAlmostEqual(v.statistic / moments.lemma2_mean(0.5, 1.0), 1.0, delta=0.25)
        self.assertEqual(v.threshold, moments.lemma2_mean(0.5, 1.0))

    def test_lemma2_divergent(self):
        v = verify.check_lemma2(0.9, 1.0, n_paths=200, steps=1000, grading=8.0, refinements=2, seed=SeedSpec(13))
        # Wilson interval of the flagged fraction must reach the acceptance fraction.
        self.assertEqual(v.threshold, 0.95)
        self.assertGreaterEqual(v.ci_high, v.threshold)
        self.assertGreater(_row(v, "median_growth[refinement=1]").estimate, 0.1)
        self.assertGreater(_row(v, "median_growth[refinement=2]").estimate, 0.1)

    def test_lemma4_is_finite(self):
        v = verify.check_lemma4(0.8, 1.0, 0.0, t_max_list=(20.0, 40.0), dt=0.05, n_paths=20, seed=SeedSpec(14))
        self.assertTrue(_row(v, "finite").passed)
        self.assertTrue(math.isfinite(v.statistic))
        with self.assertRaises(InvalidParameter):
            verify.check_lemma4(0.8, 1.0, 0.0, t_max_list=(20.0,), n_paths=2)

    def test_lemma5_zero_mean(self):
        v = verify.check_lemma5(moments.MomentSpec(0.0, 1.0, 0.5), mc_samples=100_000, seed=SeedSpec(15))
        self.assertTrue(_row(v, "closed_form").passed)
        self.assertTrue(_row(v, "mellin").passed)

    def test_lemma5_shifted(self):
        thr = thresholds(mc_se_tolerance=5.0)
        v = verify.check_lemma5(moments.MomentSpec(1.0, 1.0, 0.4), mc_samples=100_000, seed=SeedSpec(16), thr=thr)
        self.assertTrue(v.passed)
        self.assertAlmostEqual(v.threshold, moments.frac_inv_moment_quad(moments.MomentSpec(1.0, 1.0, 0.4)))


class CouplingTests(SimpleTestCase):
    def test_zero_offset_gives_zero_divergence(self):
        v = verify.check_uniqueness(0.75, 1.0, 0.0, (1e-2, 1e-3, 0.0), n_paths=20, horizon=1.0, dt=1e-2,
                                    seed=SeedSpec(21))
        self.assertEqual(_row(v, "D[eps=0]").estimate, 0.0)
        self.assertTrue(_row(v, "D[eps=0]").passed)

    def test_offset_side_does_not_change_divergence(self):
        kwargs = dict(eps_list=(1e-2, 1e-3, 1e-4), n_paths=50, horizon=1.0, dt=1e-2, seed=SeedSpec(22))
        second = verify.check_uniqueness(0.75, 1.0, 0.0, **kwargs)
        first = verify.check_uniqueness(0.75, 1.0, 0.0, offset_first=True, **kwargs)
        for eps in (1e-2, 1e-3, 1e-4):
            row = f"D[eps={eps:g}]"
            np.testing.assert_allclose(_row(first, row).estimate, _row(second, row).estimate, rtol=1e-12)
        np.testing.assert_allclose(first.samples["sup_sq"], second.samples["sup_sq"], rtol=1e-12)
        self.assertEqual(first.passed, second.passed)
