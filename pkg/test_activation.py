import math
import unittest

import numpy as np

from src.snn_stability_lab.exceptions import ConfigurationError, DomainError
from src.snn_stability_lab.main.activation import ActivationSpec, certify_bounds, phi, phi1, phi2


class CertifiedBoundsTest(unittest.TestCase):

    def test_tanh(self):
        spec = certify_bounds("tanh")
        self.assertEqual(spec.kind, "tanh")
        self.assertEqual((spec.b_phi, spec.b_phi1), (1.0, 1.0))
        self.assertAlmostEqual(spec.b_phi2, 0.7698003589195010, places=14)

    def test_sigmoid(self):
        spec = certify_bounds("sigmoid")
        self.assertEqual((spec.b_phi, spec.b_phi1), (1.0, 0.25))
        self.assertAlmostEqual(spec.b_phi2, 1 / (6 * math.sqrt(3)), places=15)
        self.assertAlmostEqual(spec.b_phi2, 0.0962250448649376, places=14)

    def test_cached(self):
        self.assertIs(certify_bounds("tanh"), certify_bounds("tanh"))

    def test_unsupported(self):
        for kind in ("relu", "", None):
            with self.assertRaises(ConfigurationError):
                certify_bounds(kind)
        with self.assertRaises(ConfigurationError):
            ActivationSpec("relu", 1.0, 1.0, 1.0)

    def test_invalid_bounds(self):
        for bounds in ((1.0, 1.0, 0.0), (1.0, -1.0, 1.0), (math.inf, 1.0, 1.0), (math.nan, 1.0, 1.0)):
            with self.assertRaises(ConfigurationError):
                ActivationSpec("tanh", *bounds)

    def test_peak_of_tanh_curvature(self):
        spec = certify_bounds("tanh")
        u = math.atanh(1 / math.sqrt(3))
        self.assertAlmostEqual(abs(spec.deriv2(u)), spec.b_phi2, places=14)

    def test_bounds_hold_on_random_points(self):
        u = np.random.default_rng(0).normal(0, 10, 100_000)
        for kind in ("tanh", "sigmoid"):
            spec = certify_bounds(kind)
            self.assertLessEqual(np.max(np.abs(spec.phi(u))), spec.b_phi)
            self.assertLessEqual(np.max(np.abs(spec.phi1(u))), spec.b_phi1)
            self.assertLessEqual(np.max(np.abs(spec.phi2(u))), spec.b_phi2 * (1 + 1e-12))


class ScalarEvaluationTest(unittest.TestCase):

    def test_values_at_zero(self):
        tanh = certify_bounds("tanh")
        sigmoid = certify_bounds("sigmoid")
        self.assertEqual(tanh.eval(0.0), 0.0)
        self.assertEqual(tanh.deriv(0.0), 1.0)
        self.assertEqual(tanh.deriv2(0.0), 0.0)
        self.assertEqual(sigmoid.eval(0.0), 0.5)
        self.assertEqual(sigmoid.deriv(0.0), 0.25)
        self.assertEqual(sigmoid.deriv2(0.0), 0.0)

    def test_saturation(self):
        sigmoid = certify_bounds("sigmoid")
        self.assertEqual(sigmoid.eval(1000.0), 1.0)
        self.assertEqual(sigmoid.eval(-1000.0), 0.0)
        self.assertEqual(sigmoid.deriv(-1000.0), 0.0)

    def test_non_finite_input(self):
        spec = certify_bounds("tanh")
        for u in (math.inf, -math.inf, math.nan):
            with self.assertRaises(DomainError):
                spec.eval(u)
            with self.assertRaises(DomainError):
                spec.deriv(u)
            with self.assertRaises(DomainError):
                spec.deriv2(u)

    def test_derivatives_against_central_differences(self):
        h = 1e-5
        u = np.random.default_rng(1).uniform(-4, 4, 200)
        for kind in ("tanh", "sigmoid"):
            fd1 = (phi(kind, u + h) - phi(kind, u - h)) / (2 * h)
            fd2 = (phi1(kind, u + h) - phi1(kind, u - h)) / (2 * h)
            np.testing.assert_allclose(phi1(kind, u), fd1, rtol=1e-7, atol=1e-10)
            np.testing.assert_allclose(phi2(kind, u), fd2, rtol=1e-6, atol=1e-10)

    def test_scalar_matches_vectorized(self):
        spec = certify_bounds("sigmoid")
        u = np.linspace(-3, 3, 13)
        np.testing.assert_array_equal(spec.phi(u), [spec.eval(v) for v in u])
        np.testing.assert_array_equal(spec.phi2(u), [spec.deriv2(v) for v in u])


if __name__ == "__main__":
    unittest.main()
