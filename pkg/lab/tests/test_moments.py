import math

import numpy as np
from django.test import SimpleTestCase
from scipy import special

from lab.exceptions import InvalidParameter
from lab.services import moments
from lab.services.rng_paths import SeedSpec, generate, generate_graded
from lab.services.stats import proportion_ci
from lab.services.timechange import PowerMap, h_eval


class GaussPairTests(SimpleTestCase):
    def test_determinant(self):
        for t in (0.5, 1.0, 2.0):
            pair = moments.GaussPair(t)
            self.assertAlmostEqual(np.linalg.det(pair.cov) / pair.det, 1.0, places=10)

    def test_density_bound(self):
        for t in (0.01, 1.0, 100.0):
            pair = moments.GaussPair(t)
            self.assertLessEqual(moments.joint_density(pair, 0.0, 0.0), moments.density_bound(pair))

    def test_rejects_nonpositive_time(self):
        with self.assertRaises(InvalidParameter):
            moments.GaussPair(0.0)


class FractionalMomentTests(SimpleTestCase):
    def test_abs_moment_closed_form(self):
        expected = 2.0 ** -0.25 * special.gamma(0.25) / math.sqrt(math.pi)
        self.assertAlmostEqual(moments.gaussian_abs_moment(0.5), expected, places=12)

    def test_quadrature_matches_closed_form_at_zero_mean(self):
        for beta in (0.3, 0.5, 0.9):
            for sigma in (0.5, 1.0, 2.0):
                quad = moments.frac_inv_moment_quad(moments.MomentSpec(0.0, sigma, beta))
                closed = sigma ** -beta * moments.gaussian_abs_moment(beta)
                self.assertAlmostEqual(quad / closed, 1.0, delta=1e-8)

    def test_quadrature_matches_mellin(self):
        for m, beta in ((1.0, 0.8), (3.0, 0.5), (-2.0, 0.3), (5.0, 0.6)):
            spec = moments.MomentSpec(m, 1.0, beta)
            quad = moments.frac_inv_moment_quad(spec)
            mellin = moments.mellin_moment(spec)
            self.assertAlmostEqual(mellin / quad, 1.0, delta=1e-6)

    def test_large_mean_approaches_power(self):
        spec = moments.MomentSpec(100.0, 1.0, 0.5)
        self.assertAlmostEqual(moments.frac_inv_moment_quad(spec) * 100.0 ** 0.5, 1.0, delta=1e-3)

    def test_quadrature_matches_monte_carlo(self):
        spec = moments.MomentSpec(1.0, 1.0, 0.4)
        z = np.random.default_rng(0).standard_normal(200_000)
        samples = np.abs(spec.m + spec.sigma * z) ** -spec.beta
        se = samples.std(ddof=1) / math.sqrt(samples.size)
        self.assertLess(abs(samples.mean() - moments.frac_inv_moment_quad(spec)), 5 * se)

    def test_laplace_transform(self):
        self.assertEqual(moments.laplace_transform_check(1.0, 1.0, 0.0), 1.0)
        self.assertAlmostEqual(moments.laplace_transform_check(0.0, 1.0, 1.5), 0.5)
        with self.assertRaises(InvalidParameter):
            moments.laplace_transform_check(0.0, 1.0, -1.0)

    def test_spec_validation(self):
        for m, sigma, beta in ((0.0, 1.0, 0.0), (0.0, 1.0, 1.0), (0.0, 0.0, 0.5), (math.inf, 1.0, 0.5)):
            with self.assertRaises(InvalidParameter):
                moments.MomentSpec(m, sigma, beta)


class PathIntegralTests(SimpleTestCase):
    def test_lemma2_mean_diverges_past_two_thirds(self):
        self.assertTrue(math.isinf(moments.lemma2_mean(0.7, 1.0)))
        self.assertTrue(math.isfinite(moments.lemma2_mean(0.5, 1.0)))
        with self.assertRaises(InvalidParameter):
            moments.lemma2_mean(0.5, 0.0)

    def test_lemma2_estimator_agrees_with_brute_force(self):
        exact, brute = 0.0, 0.0
        for i in range(100):
            path = generate(SeedSpec(21, i), 1.0, 100)
            exact += moments.lemma2_integral(0.5, 1.0, path, refinements=0, cutoff_node=0).estimate
            brute += moments.riemann_power_integral(path.j_values, path.times, 0.5, factor=1024)
        self.assertAlmostEqual(brute / exact, 1.0, delta=0.01)

    def test_lemma4_estimator_agrees_with_brute_force(self):
        # h(3) = 48.6 at beta = 0.8 keeps the integrand away from zero up to t = 5.
        beta, x0, y0 = 0.8, 3.0, -1.0
        shift = h_eval(PowerMap(moments.lemma4_alpha(beta)), x0)
        exact, brute = 0.0, 0.0
        for i in range(100):
            path = generate(SeedSpec(23, i), 5.0, 250)
            head, _ = moments.lemma4_integral(beta, x0, y0, path, 5.0)
            exact += head
            brute += moments.riemann_power_integral(shift + y0 * path.times + path.j_values, path.times, beta, factor=64)
        self.assertAlmostEqual(brute / exact, 1.0, delta=0.01)

    def test_lemma2_integrable_mean(self):
        seed = SeedSpec(31)
        values = []
        for i in range(200):
            noise = generate_graded(seed.stream(i), 1.0, 200, 4.0)
            values.append(moments.lemma2_integral(0.5, 1.0, noise, refinements=0).estimate)
        self.assertAlmostEqual(np.mean(values) / moments.lemma2_mean(0.5, 1.0), 1.0, delta=0.25)

    def test_lemma2_divergence_flag(self):
        # Shipped acceptance grid: K=1000, grading 8, two refinements.
        seed = SeedSpec(32)
        flags = []
        for i in range(200):
            noise = generate_graded(seed.stream(i), 1.0, 1000, 8.0)
            res = moments.lemma2_integral(0.9, 1.0, noise, seed.stream(i), refinements=2, grading=8.0)
            self.assertEqual(len(res.growth), 2)
            self.assertEqual(len(res.scored), 3)
            flags.append(res.divergent)
        _, _, high = proportion_ci(int(np.sum(flags)), len(flags))
        self.assertGreaterEqual(high, 0.95)

    def test_lemma2_flag_stays_quiet_when_integrable(self):
        seed = SeedSpec(33)
        flags = []
        for i in range(100):
            noise = generate_graded(seed.stream(i), 1.0, 1000, 8.0)
            flags.append(moments.lemma2_integral(0.5, 1.0, noise, seed.stream(i), refinements=2, grading=8.0).divergent)
        self.assertLessEqual(np.mean(flags), 0.05)

    def test_lemma2_score_excludes_cells_below_cutoff(self):
        noise = generate_graded(SeedSpec(34), 1.0, 100, 4.0)
        full = moments.lemma2_integral(0.9, 1.0, noise, refinements=0, cutoff_node=0)
        cut = moments.lemma2_integral(0.9, 1.0, noise, refinements=0, cutoff_node=10)
        self.assertEqual(full.estimate, cut.estimate)
        self.assertEqual(full.scored[0], full.estimate)
        self.assertLess(cut.scored[0], full.scored[0])
        with self.assertRaises(InvalidParameter):
            moments.lemma2_integral(0.9, 1.0, noise, refinements=0, cutoff_node=100)

    def test_lemma2_refinement_needs_seed(self):
        noise = generate(SeedSpec(1), 1.0, 10)
        bare = type(noise)(noise.times, noise.values, noise.j_values)
        with self.assertRaises(InvalidParameter):
            moments.lemma2_integral(0.5, 1.0, bare, refinements=1, cutoff_node=2)

    def test_lemma4(self):
        self.assertAlmostEqual(moments.lemma4_alpha(0.8), 2.0)
        noise = generate(SeedSpec(5), 50.0, 2500)
        head, tail = moments.lemma4_integral(0.8, 1.0, 0.0, noise, 50.0)
        self.assertTrue(math.isfinite(head) and head > 0)
        self.assertAlmostEqual(tail, moments.lemma4_tail_bound(0.8, 50.0))
        with self.assertRaises(InvalidParameter):
            moments.lemma4_integral(0.8, 0.0, 0.0, noise, 50.0)
        with self.assertRaises(InvalidParameter):
            moments.lemma4_integral(0.5, 1.0, 0.0, noise, 50.0)

    def test_tail_bound_decreases(self):
        self.assertGreater(moments.lemma4_tail_bound(0.8, 100.0), moments.lemma4_tail_bound(0.8, 200.0))
