import math
import unittest

import numpy as np

from src.snn_stability_lab.exceptions import ConfigurationError, DataBoundError, DomainError, ShapeError
from src.snn_stability_lab.main.activation import certify_bounds
from src.snn_stability_lab.main.data import (
    Dataset,
    NeighborSet,
    TeacherDistribution,
    make_neighbor,
    make_teacher,
    noise_floor,
    planted_teacher,
    population_risk_mc,
    sample_dataset,
)
from src.snn_stability_lab.main.model import Example, ModelState


def teacher_distribution(d=5, noise_std=0.0, input_law="sphere", **kw):
    teacher = make_teacher(d, 8, certify_bounds("tanh"), seed=11)
    return TeacherDistribution(teacher, input_law, noise_std, **kw)


class DistributionTest(unittest.TestCase):

    def test_sphere_inputs(self):
        dist = teacher_distribution()
        X = dist.draw_inputs(np.random.default_rng(0), 500)
        np.testing.assert_allclose(np.linalg.norm(X, axis=1), 1.0, rtol=1e-14)

    def test_gaussian_inputs_within_radius(self):
        dist = teacher_distribution(input_law="gaussian", c_x=2.0, radius=1.5)
        X = dist.draw_inputs(np.random.default_rng(0), 2000)
        self.assertLessEqual(np.max(np.linalg.norm(X, axis=1)), 1.5 * (1 + 1e-12))

    def test_realizable_labels(self):
        dist = teacher_distribution()
        self.assertTrue(dist.realizable)
        X, y = dist.draw(np.random.default_rng(1), 100)
        np.testing.assert_array_equal(y, np.clip(dist.teacher.forward_batch(X), -1, 1))

    def test_noisy_labels_clipped(self):
        dist = teacher_distribution(noise_std=5.0)
        _, y = dist.draw(np.random.default_rng(2), 1000)
        self.assertLessEqual(np.max(np.abs(y)), 1.0)
        self.assertGreater(np.count_nonzero(np.abs(y) == 1.0), 0)

    def test_invalid(self):
        teacher = make_teacher(3, 2, certify_bounds("tanh"), seed=0)
        with self.assertRaises(ConfigurationError):
            TeacherDistribution(teacher, "uniform")
        with self.assertRaises(ConfigurationError):
            TeacherDistribution(teacher, noise_std=-1.0)
        with self.assertRaises(ConfigurationError):
            TeacherDistribution(teacher, c_x=1.0, radius=2.0)
        with self.assertRaises(ConfigurationError):
            TeacherDistribution(teacher, c_y=0.0)

    def test_certified_c0_zero_init(self):
        dist = teacher_distribution()
        init = ModelState.initialize(5, 16, certify_bounds("tanh"))
        self.assertEqual(dist.certified_c0(init), 0.5)

    def test_certified_c0_bounds_initial_losses(self):
        dist = teacher_distribution(noise_std=0.3)
        init = ModelState.initialize(5, 16, certify_bounds("sigmoid"), signs="random", init="gaussian", seed=4)
        S = sample_dataset(dist, 500, seed=3, init=init)
        self.assertLessEqual(S.c_0, dist.certified_c0(init))

    def test_noise_floor(self):
        self.assertEqual(noise_floor(teacher_distribution(noise_std=0.2)), 0.5 * 0.2 ** 2)
        self.assertEqual(noise_floor(teacher_distribution()), 0.0)


class DatasetTest(unittest.TestCase):

    def test_deterministic(self):
        dist = teacher_distribution()
        self.assertTrue(sample_dataset(dist, 20, seed=5).identical_to(sample_dataset(dist, 20, seed=5)))
        self.assertFalse(sample_dataset(dist, 20, seed=5).identical_to(sample_dataset(dist, 20, seed=6)))

    def test_bounds_validated(self):
        with self.assertRaises(DataBoundError) as cm:
            Dataset(np.array([[0.6, 0.8], [1.0, 1.0]]), np.array([0.0, 0.0]), 1.0, 1.0)
        self.assertEqual(cm.exception.index, 1)
        with self.assertRaises(DataBoundError):
            Dataset(np.array([[0.6, 0.8]]), np.array([1.5]), 1.0, 1.0)
        with self.assertRaises(DataBoundError):
            Dataset(np.array([[math.nan, 0.0]]), np.array([0.0]), 1.0, 1.0)

    def test_shapes(self):
        with self.assertRaises(ShapeError):
            Dataset(np.zeros((3, 2)), np.zeros(2), 1.0, 1.0)
        with self.assertRaises(ShapeError):
            Dataset(np.zeros(3), np.zeros(3), 1.0, 1.0)
        with self.assertRaises(DomainError):
            Dataset(np.zeros((0, 2)), np.zeros(0), 1.0, 1.0)
        with self.assertRaises(DomainError):
            sample_dataset(teacher_distribution(), 0, seed=0)

    def test_c0_from_init(self):
        dist = teacher_distribution()
        init = ModelState.initialize(5, 16, certify_bounds("tanh"))
        S = sample_dataset(dist, 50, seed=1, init=init)
        self.assertEqual(S.c_0, float(np.max(0.5 * S.y ** 2)))
        self.assertIsNone(sample_dataset(dist, 50, seed=1).c_0)

    def test_replace_and_subset(self):
        S = sample_dataset(teacher_distribution(), 10, seed=2)
        z = Example(np.array([1.0, 0.0, 0.0, 0.0, 0.0]), 0.25)
        R = S.replace(3, z)
        np.testing.assert_array_equal(R.X[3], z.x)
        self.assertEqual(R.y[3], 0.25)
        np.testing.assert_array_equal(np.delete(R.X, 3, axis=0), np.delete(S.X, 3, axis=0))
        self.assertEqual(len(S.subset([0, 2, 4])), 3)
        with self.assertRaises(DomainError):
            S.replace(10, z)
        with self.assertRaises(DomainError):
            S.replace(-1, z)


class NeighborTest(unittest.TestCase):

    def test_ghost_neighbor(self):
        dist = teacher_distribution()
        S = sample_dataset(dist, 8, seed=1)
        G = sample_dataset(dist, 8, seed=2)
        nb = NeighborSet.from_ghost(S, G, 5)
        D = nb.dataset
        differing = np.flatnonzero(np.any(D.X != S.X, axis=1) | (D.y != S.y))
        np.testing.assert_array_equal(differing, [5])
        np.testing.assert_array_equal(D.X[5], G.X[5])

    def test_identical_replacement(self):
        S = sample_dataset(teacher_distribution(), 8, seed=1)
        nb = make_neighbor(S, 2, replacement=S[2])
        self.assertTrue(nb.dataset.identical_to(S))

    def test_replacement_validated(self):
        S = sample_dataset(teacher_distribution(), 8, seed=1)
        with self.assertRaises(DataBoundError):
            NeighborSet(S, 0, Example(np.full(5, 1.0), 0.0))
        with self.assertRaises(DomainError):
            make_neighbor(S, 8, seed=0, dist=teacher_distribution())
        with self.assertRaises(ConfigurationError):
            make_neighbor(S, 0)


class PopulationRiskTest(unittest.TestCase):

    def test_teacher_has_zero_risk(self):
        dist = teacher_distribution(c_y=10.0)
        risk, se = population_risk_mc(dist.teacher, dist, 5000, seed=0)
        self.assertEqual(risk, 0.0)
        self.assertEqual(se, 0.0)

    def test_noise_floor_of_teacher(self):
        dist = teacher_distribution(noise_std=0.1, c_y=10.0)
        risk, se = population_risk_mc(dist.teacher, dist, 50_000, seed=1)
        self.assertLess(abs(risk - noise_floor(dist)), 4 * se)

    def test_floor(self):
        dist = teacher_distribution()
        with self.assertRaises(ConfigurationError):
            population_risk_mc(dist.teacher, dist, 999)

    def test_deterministic(self):
        dist = teacher_distribution(noise_std=0.1)
        init = ModelState.initialize(5, 16, certify_bounds("tanh"))
        self.assertEqual(population_risk_mc(init, dist, 3000, seed=4), population_risk_mc(init, dist, 3000, seed=4))

    def test_planted_teacher(self):
        init = ModelState.initialize(5, 16, certify_bounds("tanh"), init="gaussian", seed=1)
        teacher = planted_teacher(init, 0.3, seed=2)
        self.assertAlmostEqual(teacher.dist_to_init, 0.3, places=12)
        np.testing.assert_array_equal(teacher.init_weights, init.init_weights)
        with self.assertRaises(ConfigurationError):
            planted_teacher(init, -1.0)


if __name__ == "__main__":
    unittest.main()
