import math

import numpy as np
from django.test import SimpleTestCase

from lab.exceptions import InvalidParameter
from lab.services.rng_paths import BrownianPath, SeedSpec, generate, generate_graded
from lab.services.sde_core import StopReason, SystemParams, Trajectory
from lab.services.timechange import (
    PowerMap,
    TimeChangeMap,
    build_T,
    construct_weak_solution,
    h_eval,
    h_inv_eval,
    invert_T,
    linear_power_integral,
)


def _traj(times, xs):
    times = np.asarray(times, dtype=float)
    return Trajectory(times, np.asarray(xs, dtype=float), np.zeros(len(times)), StopReason.HORIZON, float(times[-1]))


class PowerMapTests(SimpleTestCase):
    def test_round_trip(self):
        pmap = PowerMap(0.75)
        x = np.array([-3.0, -0.2, 0.0, 0.1, 2.5])
        np.testing.assert_allclose(h_inv_eval(pmap, h_eval(pmap, x)), x, rtol=1e-12, atol=1e-15)

    def test_round_trip_over_twelve_decades(self):
        magnitudes = np.logspace(-6, 6, 241)
        x = np.concatenate([-magnitudes[::-1], magnitudes])
        for alpha in (0.25, 0.75, 1.5, 3.0):
            pmap = PowerMap(alpha)
            v = h_eval(pmap, x)
            self.assertTrue(np.all(np.diff(v) > 0))
            np.testing.assert_array_equal(h_eval(pmap, -x), -v)
            np.testing.assert_allclose(h_inv_eval(pmap, v), x, rtol=1e-12, atol=0.0)

    def test_scalar_in_scalar_out(self):
        self.assertIsInstance(h_eval(PowerMap(0.5), 2.0), float)
        self.assertAlmostEqual(h_eval(PowerMap(0.5), 2.0), 2.0)

    def test_clock_exponent(self):
        self.assertAlmostEqual(PowerMap(0.75).clock_exponent, 0.6)
        self.assertAlmostEqual(PowerMap(2.0).clock_exponent, 0.8)
        self.assertAlmostEqual(PowerMap(0.5).clock_constant, 2.0 ** -0.5)

    def test_rejects_nonpositive_alpha(self):
        with self.assertRaises(InvalidParameter):
            PowerMap(0.0)


class TimeChangeTests(SimpleTestCase):
    def test_unit_speed_is_identity(self):
        tmap = build_T(_traj(np.linspace(0, 2, 21), np.ones(21)), 0.75)
        t = np.array([0.0, 0.3, 1.7])
        np.testing.assert_allclose(invert_T(tmap, t), t, atol=1e-12)

    def test_flat_stretch_maps_to_right_end(self):
        tmap = TimeChangeMap(np.array([0.0, 1.0, 2.0, 3.0]), np.array([0.0, 0.5, 0.5, 1.0]))
        self.assertAlmostEqual(invert_T(tmap, 0.5), 2.0)
        self.assertAlmostEqual(invert_T(tmap, 0.25), 0.5)

    def test_top_value(self):
        tmap = TimeChangeMap(np.array([0.0, 1.0, 2.0]), np.array([0.0, 1.0, 1.0]))
        self.assertAlmostEqual(invert_T(tmap, 1.0), 1.0)

    def test_range_checks(self):
        tmap = TimeChangeMap(np.array([0.0, 1.0]), np.array([0.0, 1.0]))
        with self.assertRaises(InvalidParameter):
            invert_T(tmap, -0.1)
        with self.assertRaises(InvalidParameter):
            invert_T(tmap, 1.5)


class LinearPowerIntegralTests(SimpleTestCase):
    def test_constant(self):
        pieces, crossing = linear_power_integral(np.ones(3), np.array([0.0, 0.5, 1.0]), 0.5)
        np.testing.assert_allclose(pieces, [0.5, 0.5])
        self.assertFalse(crossing.any())

    def test_same_sign_closed_form(self):
        # int_0^1 (1 + s)^(-1/2) ds = 2 (sqrt 2 - 1)
        pieces, _ = linear_power_integral(np.array([1.0, 2.0]), np.array([0.0, 1.0]), 0.5)
        self.assertAlmostEqual(pieces[0], 2.0 * (math.sqrt(2.0) - 1.0), places=12)

    def test_crossing_is_finite(self):
        # int_0^1 |2s - 1|^(-1/2) ds = 2
        pieces, crossing = linear_power_integral(np.array([-1.0, 1.0]), np.array([0.0, 1.0]), 0.5)
        self.assertTrue(crossing[0])
        self.assertAlmostEqual(pieces[0], 2.0, places=12)

    def test_vanishing_interval_is_infinite(self):
        pieces, _ = linear_power_integral(np.array([0.0, 0.0]), np.array([0.0, 1.0]), 0.5)
        self.assertTrue(math.isinf(pieces[0]))

    def test_beta_range(self):
        with self.assertRaises(InvalidParameter):
            linear_power_integral(np.ones(2), np.array([0.0, 1.0]), 1.0)


class WeakSolutionTests(SimpleTestCase):
    def test_from_origin(self):
        noise = generate_graded(SeedSpec(8), 1.0, 200, 3.0)
        traj = construct_weak_solution(noise, SystemParams(0.5, 0.0, 0.0), 1.0)
        self.assertEqual(traj.xs[0], 0.0)
        self.assertEqual(traj.times[0], 0.0)
        self.assertTrue(np.all(np.diff(traj.times) > 0))
        self.assertGreater(abs(traj.xs[-1]), 0.0)
        self.assertIsNotNone(traj.clock)
        self.assertGreaterEqual(traj.zero_crossings, 0)

    def test_start_is_kept(self):
        noise = generate(SeedSpec(8), 1.0, 100)
        traj = construct_weak_solution(noise, SystemParams(0.75, 1.0, 0.5), 1.0)
        self.assertAlmostEqual(traj.xs[0], 1.0)
        self.assertEqual(traj.ys[0], 0.5)

    def test_short_noise_rejected(self):
        noise = generate(SeedSpec(8), 0.5, 100)
        with self.assertRaises(InvalidParameter):
            construct_weak_solution(noise, SystemParams(0.75, 1.0, 0.0), 1.0)


class ClosedFormExampleTests(SimpleTestCase):
    def test_h_at_alpha_one(self):
        pmap = PowerMap(1.0)
        self.assertAlmostEqual(h_eval(pmap, 2.0), 8.0 / 3.0)
        self.assertAlmostEqual(h_inv_eval(pmap, 1.0 / 3.0), 1.0)
        self.assertEqual(h_eval(pmap, 0.0), 0.0)
        self.assertEqual(h_inv_eval(pmap, 0.0), 0.0)

    def test_build_T_of_linear_path(self):
        s = np.linspace(0.0, 1.0, 1001)
        tmap = build_T(_traj(s, s), 1.0)
        np.testing.assert_allclose(tmap.t_values, s**3 / 3.0, atol=1e-6)
        self.assertTrue(np.all(np.diff(tmap.t_values) >= 0))

    def test_build_T_of_zero_path(self):
        tmap = build_T(_traj(np.linspace(0, 1, 5), np.zeros(5)), 0.75)
        np.testing.assert_array_equal(tmap.t_values, np.zeros(5))

    def test_invert_linear_and_flat(self):
        linear = TimeChangeMap(np.array([0.0, 1.0, 2.0]), np.array([0.0, 2.0, 4.0]))
        self.assertAlmostEqual(invert_T(linear, 1.0), 0.5)
        flat = TimeChangeMap(np.array([0.0, 1.0, 2.0, 3.0, 4.0]), np.array([0.0, 0.5, 1.0, 1.0, 2.0]))
        self.assertAlmostEqual(invert_T(flat, 1.0), 3.0)

    def test_round_trip_on_grid(self):
        s = np.linspace(0.0, 2.0, 201)
        tmap = build_T(_traj(s, 1.0 + np.sin(3 * s)), 0.75)
        for k in (10, 57, 150):
            back = invert_T(tmap, tmap.t_values[k])
            self.assertAlmostEqual(float(np.interp(back, s, tmap.t_values)), tmap.t_values[k], delta=1e-10)

    def test_zero_noise_clock_closed_form(self):
        alpha, x0, y0 = 0.75, 1.0, 5.0
        pmap = PowerMap(alpha)
        beta = pmap.clock_exponent
        times = np.linspace(0.0, 1.0, 51)
        quiet = BrownianPath(times, np.zeros(51), np.zeros(51))
        traj = construct_weak_solution(quiet, SystemParams(alpha, x0, y0), 1.0)
        h0 = h_eval(pmap, x0)
        exact = pmap.clock_constant * ((h0 + y0) ** (1 - beta) - h0 ** (1 - beta)) / ((1 - beta) * y0)
        self.assertAlmostEqual(traj.times[-1] / exact, 1.0, places=10)
