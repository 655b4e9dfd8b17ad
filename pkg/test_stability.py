import json
import math
import os
import unittest

import numpy as np

from src.snn_stability_lab.exceptions import BudgetExceededError, ConfigurationError
from src.snn_stability_lab.main.activation import certify_bounds
from src.snn_stability_lab.features.seeding import Role, task_seed
from src.snn_stability_lab.main import theory
from src.snn_stability_lab.main.data import (
    NeighborSet,
    TeacherDistribution,
    make_teacher,
    planted_teacher,
    population_risk_mc,
    sample_dataset,
)
from src.snn_stability_lab.main.model import ModelState
from src.snn_stability_lab.main.optim import IndexStream, TrainConfig, coupled_run, gd_run, sgd_run, train
from src.snn_stability_lab.main.stability import (
    IterateRiskAverage,
    average_iterate_risk,
    empirical_generalization_gap,
    estimate_on_average_stability,
    rate_sweep,
    stability_scaling_sweep,
)


def distribution(noise_std=0.1, c_y=1.0):
    return TeacherDistribution(make_teacher(3, 6, certify_bounds("tanh"), seed=7), noise_std=noise_std, c_y=c_y)


def make_init(m):
    return ModelState.initialize(3, m, certify_bounds("tanh"))


class OnAverageStabilityTest(unittest.TestCase):

    def test_zero_horizon(self):
        report = estimate_on_average_stability(distribution(), 6, TrainConfig(0.1, 0), 2, 1, make_init(16))
        self.assertEqual(report.on_average_sq, 0.0)
        self.assertEqual(report.bound_gd_uniform, 0.0)
        self.assertEqual(report.per_step_trace, [0.0])
        self.assertEqual(len(report.risk_trace), 1)

    def test_copy_policy_is_zero(self):
        for algorithm in ("gd", "sgd"):
            report = estimate_on_average_stability(
                distribution(), 6, TrainConfig(0.1, 8, algorithm), 2, 1, make_init(16), neighbor_policy="copy",
            )
            self.assertEqual(report.on_average_sq, 0.0)
            self.assertEqual(report.per_index_max_distance, [0.0] * 6)

    def test_aggregates(self):
        report = estimate_on_average_stability(distribution(), 8, TrainConfig(0.1, 10), 3, 2, make_init(32))
        self.assertEqual(len(report.per_index_sq_distance), 8)
        self.assertAlmostEqual(report.on_average_sq, float(np.mean(report.per_index_sq_distance)), places=15)
        self.assertAlmostEqual(report.per_step_trace[-1], report.on_average_sq, places=15)
        self.assertEqual(report.per_step_trace[0], 0.0)
        self.assertGreater(report.on_average_sq, 0.0)
        self.assertEqual(len(report.step_rows()), 11)
        self.assertEqual(report.index_rows()[3][0], 3)
        self.assertAlmostEqual(report.epsilon_hat, math.sqrt(report.on_average_sq), places=15)
        self.assertIn("on_average_sq", json.loads(report.to_json()))

    def test_gd_bound_respected_when_wide(self):
        report = estimate_on_average_stability(distribution(), 8, TrainConfig(0.1, 10), 2, 3, make_init(512))
        self.assertTrue(report.m_bound_satisfied)
        self.assertEqual(report.uniform_bound_violations, 0)
        self.assertLessEqual(max(report.per_index_max_distance), report.bound_gd_uniform)
        self.assertFalse(report.notes)

    def test_narrow_width_is_noted(self):
        report = estimate_on_average_stability(distribution(), 8, TrainConfig(0.1, 10), 1, 3, make_init(1))
        self.assertFalse(report.m_bound_satisfied)
        self.assertTrue(report.notes)

    def test_deterministic_across_jobs(self):
        config = TrainConfig(0.1, 6, "sgd")
        a = estimate_on_average_stability(distribution(), 6, config, 2, 4, make_init(16), jobs=1)
        b = estimate_on_average_stability(distribution(), 6, config, 2, 4, make_init(16), jobs=2)
        self.assertEqual(a.to_dict(), b.to_dict())

    def test_invalid(self):
        config = TrainConfig(0.1, 4)
        with self.assertRaises(ConfigurationError):
            estimate_on_average_stability(distribution(), 6, config, 0, 1, make_init(8))
        with self.assertRaises(ConfigurationError):
            estimate_on_average_stability(distribution(), 1, config, 1, 1, make_init(8))
        with self.assertRaises(ConfigurationError):
            estimate_on_average_stability(distribution(), 6, config, 1, 1, make_init(8), neighbor_policy="swap")

    def test_budget(self):
        with self.assertRaises(BudgetExceededError) as cm:
            estimate_on_average_stability(distribution(), 6, TrainConfig(0.1, 10), 2, 1, make_init(8), budget=100)
        self.assertEqual(cm.exception.required, 10 * 2 * (6 + 1))
        self.assertEqual(cm.exception.point, {"n": 6})


class GeneralizationGapTest(unittest.TestCase):

    def test_realizable_teacher_has_no_gap(self):
        dist = distribution(noise_std=0.0, c_y=10.0)
        S = sample_dataset(dist, 20, seed=1)
        gap, se = empirical_generalization_gap(dist.teacher, S, dist, 2000, seed=2)
        self.assertEqual(gap, 0.0)
        self.assertEqual(se, 0.0)

    def test_gap_of_trained_model(self):
        dist = distribution()
        init = make_init(32)
        S = sample_dataset(dist, 16, seed=1, init=init)
        state = gd_run(S, TrainConfig(0.1, 30), init).final
        gap, se = empirical_generalization_gap(state, S, dist, 5000, seed=3)
        self.assertTrue(math.isfinite(gap))
        self.assertGreater(se, 0.0)


class SweepTest(unittest.TestCase):

    def test_grid_validation(self):
        config = TrainConfig(0.1, 2)
        for grid in ((8, 16), (8, 16, 16), (16, 8, 32)):
            with self.assertRaises(ConfigurationError):
                stability_scaling_sweep(distribution(), grid, config, 1, 0, make_init(8))
            with self.assertRaises(ConfigurationError):
                rate_sweep(distribution(), grid, 0.1, "gd", make_init, 1, 0)

    def test_stability_sweep(self):
        table = stability_scaling_sweep(distribution(), (4, 8, 16), TrainConfig(0.1, 5), 2, 1, make_init(32))
        self.assertEqual(table.kind, "stability")
        self.assertEqual(table.column("n"), [4, 8, 16])
        self.assertEqual(len(table.reports), 3)
        self.assertEqual(len(table.csv_rows()[0]), 5)
        self.assertTrue(math.isfinite(table.slope))
        self.assertLess(table.slope, 0.0)

    def test_sweep_budget_names_point(self):
        with self.assertRaises(BudgetExceededError) as cm:
            stability_scaling_sweep(distribution(), (4, 8, 16), TrainConfig(0.1, 5), 1, 1, make_init(8), budget=60)
        self.assertEqual(cm.exception.point, {"n": 8})

    def test_rate_sweep(self):
        table = rate_sweep(distribution(), (8, 16, 32), 0.1, "gd", make_init, 2, 0, horizon_per_n=0.25, n_mc=1000)
        self.assertEqual(table.kind, "rate")
        self.assertEqual(table.column("horizon"), [2, 4, 8])
        self.assertEqual(table.column("m"), [1, 1, 1])
        trend = table.column("trend")
        self.assertAlmostEqual(trend[0], 0.1 * 2 * 0.005 / 8 + 1 / 0.2, places=12)

    def test_rate_sweep_sgd_caps_width(self):
        table = rate_sweep(
            distribution(), (8, 16, 32), 0.1, "sgd", make_init, 1, 0, horizon_per_n=2.0, m_scale=4.0, m_cap=64,
            n_mc=1000,
        )
        self.assertEqual(table.column("m"), [17, 64, 64])
        self.assertAlmostEqual(table.column("trend")[0], 1 / (0.1 * 16) + 0.1 * 0.005, places=14)


class ReplayedReportTest(unittest.TestCase):

    def test_matches_lockstep_runs(self):
        dist, init, n, base_seed = distribution(), make_init(16), 6, 5
        for algorithm in ("gd", "sgd"):
            config = TrainConfig(0.1, 8, algorithm)
            report = estimate_on_average_stability(dist, n, config, 1, base_seed, init)
            S = sample_dataset(dist, n, task_seed(base_seed, Role.SAMPLE, n, 0), init)
            S_prime = sample_dataset(dist, n, task_seed(base_seed, Role.GHOST, n, 0))
            stream = None
            if algorithm == "sgd":
                stream = IndexStream.draw(task_seed(base_seed, Role.STREAM, n, 0), n, 8)
            for i in range(n):
                trace = coupled_run(S, NeighborSet.from_ghost(S, S_prime, i), config, init, stream)
                self.assertAlmostEqual(report.per_index_sq_distance[i], trace.final_distance ** 2, places=14)
                self.assertAlmostEqual(report.per_index_max_distance[i], trace.max_distance, places=14)
            self.assertEqual(report.risk_trace, train(S, config, init, stream).scalars.empirical_risk)


class IterateRiskTest(unittest.TestCase):

    def test_single_step_scores_initial_weights(self):
        dist, init = distribution(), make_init(16)
        S = sample_dataset(dist, 8, seed=1, init=init)
        risk, se = average_iterate_risk(S, TrainConfig(0.1, 1), init, dist, 5000, seed=9)
        expected, expected_se = population_risk_mc(init, dist, 5000, seed=9)
        self.assertAlmostEqual(risk, expected, places=14)
        self.assertAlmostEqual(se, expected_se, places=14)

    def test_averages_every_iterate(self):
        dist, init = distribution(), make_init(16)
        S = sample_dataset(dist, 8, seed=1, init=init)
        config = TrainConfig(0.2, 8, "sgd", seed=3)
        averager = IterateRiskAverage(dist, 8000, seed=4)
        train(S, config, init, observer=averager)
        self.assertEqual(averager.iterates, 8)
        risk, se = averager.result()

        traj = sgd_run(S, TrainConfig(0.2, 8, "sgd", seed=3, checkpoint_stride=1), init)
        scored = [population_risk_mc(traj.checkpoints[t], dist, 20_000, seed=t) for t in range(8)]
        brute = float(np.mean([r for r, _ in scored]))
        brute_se = math.sqrt(sum(s ** 2 for _, s in scored)) / 8
        self.assertLess(abs(risk - brute), 5 * (se + brute_se))

    def test_zero_horizon_and_floor(self):
        dist, init = distribution(), make_init(4)
        S = sample_dataset(dist, 8, seed=1, init=init)
        risk, se = average_iterate_risk(S, TrainConfig(0.1, 0), init, dist, 1000)
        self.assertTrue(math.isnan(risk))
        self.assertTrue(math.isnan(se))
        with self.assertRaises(ConfigurationError):
            average_iterate_risk(S, TrainConfig(0.1, 4), init, dist, 999)


@unittest.skipUnless(os.environ.get("SNN_LAB_SLOW") == "1", "set SNN_LAB_SLOW=1 for the full property suite")
class AcceptanceTest(unittest.TestCase):
    """Bounds against measurement at desk scale (d = 5, tanh)."""

    @staticmethod
    def dist(noise_std=0.1):
        return TeacherDistribution(make_teacher(5, 8, certify_bounds("tanh"), seed=11), noise_std=noise_std)

    @staticmethod
    def init(m):
        return ModelState.initialize(5, m, certify_bounds("tanh"))

    @staticmethod
    def theory_constants(dist, init):
        return theory.TheoryConstants(init.activation, dist.c_x, dist.c_y, dist.certified_c0(init), init.m)

    def test_sgd_stability_within_bound(self):
        dist, init, n, eta, T = self.dist(), self.init(256), 32, 0.1, 32
        report = estimate_on_average_stability(dist, n, TrainConfig(eta, T, "sgd"), 32, 21, init)
        c = self.theory_constants(dist, init)
        for s in (T // 4, T // 2, T):
            bound = theory.sgd_stability_bound(c, n, eta, s - 1, report.risk_trace)
            self.assertLessEqual(report.per_step_trace[s], bound + 2 * report.per_step_trace_se[s], s)
        self.assertAlmostEqual(report.bound_sgd_on_avg, bound, places=14)

    def test_generalization_gap_within_bound(self):
        dist, n, eta, T, seeds = self.dist(), 64, 0.1, 20, 32
        for algorithm, m in (("gd", 512), ("sgd", 1024)):
            init = self.init(m)
            c = self.theory_constants(dist, init)
            if algorithm == "gd":
                self.assertGreaterEqual(m, theory.threshold_m_bound(c, n, eta, T))
            else:
                self.assertGreaterEqual(m, theory.threshold_sgd_iterate(c, eta, T))
            gaps, risks = [], []
            for r in range(seeds):
                S = sample_dataset(dist, n, 100 + r, init)
                traj = train(S, TrainConfig(eta, T, algorithm, seed=200 + r), init)
                gaps.append(empirical_generalization_gap(traj.final, S, dist, 20_000, seed=300 + r)[0])
                risks.append(traj.scalars.empirical_risk)
            mean_risks = np.mean(risks, axis=0)
            if algorithm == "gd":
                bound = theory.gd_generalization_bound(c, n, eta, T, mean_risks)
            else:
                bound = theory.sgd_generalization_bound(c, n, eta, T, mean_risks)
            se = float(np.std(gaps, ddof=1)) / math.sqrt(seeds)
            self.assertLessEqual(float(np.mean(gaps)), bound + 2 * se, algorithm)

    def test_stability_decays_like_inverse_n(self):
        table = stability_scaling_sweep(self.dist(), (64, 128, 256, 512), TrainConfig(0.1, 10), 2, 5, self.init(64))
        self.assertGreaterEqual(table.slope, -1.3)
        self.assertLessEqual(table.slope, -0.7)

    def test_excess_risk_decreases_with_n(self):
        init = self.init(256)
        dist = TeacherDistribution(planted_teacher(init, 2.0, seed=13))
        for algorithm in ("gd", "sgd"):
            # eta T = 4, 8, 16, 32: every point reaches the width cap, so the planted teacher stays realizable
            table = rate_sweep(
                dist, (32, 64, 128, 256), 0.25, algorithm, lambda m: init, 4, 17, horizon_per_n=0.5,
                m_scale=4.0, m_cap=256,
            )
            self.assertEqual(table.column("m"), [256] * 4)
            excess = table.column("excess_risk")
            self.assertTrue(all(a > b for a, b in zip(excess, excess[1:])), (algorithm, excess))
            self.assertLessEqual(table.slope, -0.5, algorithm)

    def test_wide_gd_within_on_average_bound(self):
        config = TrainConfig(0.1, 50)
        report = estimate_on_average_stability(self.dist(noise_std=0.0), 64, config, 8, 3, self.init(4096))
        self.assertLessEqual(report.on_average_sq, report.bound_gd_on_avg)


if __name__ == "__main__":
    unittest.main()
