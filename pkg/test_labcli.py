import json
import os
import tempfile
import unittest
from pathlib import Path

import numpy as np

from src.snn_stability_lab.cli import EXIT_CONFIG, EXIT_OK, EXIT_VIOLATIONS, main
from src.snn_stability_lab.exceptions import ConfigurationError, ShapeError
from src.snn_stability_lab.features import records
from src.snn_stability_lab.features.config import ExperimentConfig
from src.snn_stability_lab.features.pool import run_tasks
from src.snn_stability_lab.features.seeding import Role, task_seed
from src.snn_stability_lab.main.activation import certify_bounds
from src.snn_stability_lab.main.data import Dataset, TeacherDistribution, make_neighbor, make_teacher, sample_dataset
from src.snn_stability_lab.main.model import ModelState

MINIMAL = """
[distribution]
d = 3

[model]
m = 16

[training]
eta = 0.1
horizon = 10
"""

TINY_CHECK = """
[check]
instances = 3
m_dense = 4
pairs = 20
gd_runs = 1
n = 8
horizon = 10
coupled_runs = 1
trajectory_points = 4
sgd_runs = 1
sgd_m = 8
uniform_m = 8
uniform_replicates = 1
"""


def square(x):
    return x * x


class ConfigTest(unittest.TestCase):

    def test_minimal(self):
        config = ExperimentConfig.parse(MINIMAL)
        self.assertEqual(config.distribution.d, 3)
        self.assertEqual(config.training.n, 64)
        self.assertEqual(config.master_seed, 0)
        self.assertIsNone(config.distribution.radius)
        self.assertEqual(config.output.formats, ("csv", "json"))

    def test_missing_required(self):
        with self.assertRaisesRegex(ConfigurationError, r"distribution\.d"):
            ExperimentConfig.parse("[model]\nm = 4\n[training]\neta = 0.1\nhorizon = 2\n")
        with self.assertRaisesRegex(ConfigurationError, r"training\.horizon"):
            ExperimentConfig.parse("[distribution]\nd = 2\n[model]\nm = 4\n[training]\neta = 0.1\n")

    def test_unknown(self):
        with self.assertRaisesRegex(ConfigurationError, r"model\.width"):
            ExperimentConfig.parse(MINIMAL.replace("m = 16", "m = 16\nwidth = 3"))
        with self.assertRaisesRegex(ConfigurationError, r"\[plots\]"):
            ExperimentConfig.parse(MINIMAL + "\n[plots]\nx = 1\n")

    def test_values(self):
        with self.assertRaisesRegex(ConfigurationError, r"training\.eta"):
            ExperimentConfig.parse(MINIMAL.replace("eta = 0.1", "eta = fast"))
        with self.assertRaises(ConfigurationError):
            ExperimentConfig.parse(MINIMAL.replace("eta = 0.1", "eta = nan"))
        with self.assertRaises(ConfigurationError):
            ExperimentConfig.parse(MINIMAL + "\n[training2\n")
        config = ExperimentConfig.parse(
            MINIMAL + "\n[sweep]\nn_grid = 8, 16, 32\n[stability]\nneighbor_policy = copy\n"
            + "[budget]\nmax_steps = none\n[experiment]\njobs = 2  # inline comment\n"
        )
        self.assertEqual(config.sweep.n_grid, (8, 16, 32))
        self.assertEqual(config.stability.neighbor_policy, "copy")
        self.assertIsNone(config.budget.max_steps)
        self.assertEqual(config.experiment.jobs, 2)
        config = ExperimentConfig.parse(MINIMAL.replace("horizon = 10", "horizon = 10\nstrict_mode = no"))
        self.assertFalse(config.training.strict_mode)

    def test_snapshot_round_trip(self):
        config = ExperimentConfig.parse(MINIMAL + TINY_CHECK)
        again = ExperimentConfig.parse(config.snapshot())
        self.assertEqual(again, config)
        self.assertEqual(again.snapshot(), config.snapshot())

    def test_overrides(self):
        config = ExperimentConfig.parse(MINIMAL).with_overrides(seed=9, out="elsewhere", jobs=3, budget=100)
        self.assertEqual(config.master_seed, 9)
        self.assertEqual(config.output.directory, "elsewhere")
        self.assertEqual(config.experiment.jobs, 3)
        self.assertEqual(config.budget.max_steps, 100)
        self.assertEqual(ExperimentConfig.parse(MINIMAL).with_overrides(), ExperimentConfig.parse(MINIMAL))

    def test_factories(self):
        config = ExperimentConfig.parse(MINIMAL.replace("m = 16", "m = 16\ninit = gaussian"))
        init = config.init()
        self.assertEqual(init.weights.shape, (3, 16))
        np.testing.assert_array_equal(init.init_weights, config.init().init_weights)
        self.assertEqual(config.init(4).m, 4)
        self.assertEqual(config.train_config(horizon=3).horizon, 3)
        dist = config.teacher_distribution()
        self.assertEqual(dist.d, 3)
        planted = ExperimentConfig.parse(MINIMAL.replace("d = 3", "d = 3\nplanted_distance = 0.5"))
        teacher = planted.teacher_distribution().teacher
        self.assertAlmostEqual(teacher.dist_to_init, 0.5, places=12)
        self.assertEqual(teacher.m, 16)


class SeedingAndPoolTest(unittest.TestCase):

    def test_task_seed(self):
        self.assertEqual(task_seed(1, Role.SAMPLE, 8, 0), task_seed(1, Role.SAMPLE, 8, 0))
        seeds = {task_seed(1, role, 8, 0) for role in Role}
        self.assertEqual(len(seeds), len(Role))
        self.assertNotEqual(task_seed(1, Role.SAMPLE, 8, 0), task_seed(1, Role.SAMPLE, 8, 1))
        self.assertNotEqual(task_seed(1, Role.SAMPLE, 8, 0), task_seed(2, Role.SAMPLE, 8, 0))

    def test_neighbor_stream_is_separate(self):
        dist = TeacherDistribution(make_teacher(3, 4, certify_bounds("tanh"), seed=1), noise_std=0.1)
        S = sample_dataset(dist, 4, task_seed(1, Role.SAMPLE, 11))
        for r in range(4):
            seed = task_seed(1, Role.NEIGHBOR, 11, r)
            self.assertNotIn(seed, {task_seed(1, role, 11, r) for role in Role if role != Role.NEIGHBOR})
            nb = make_neighbor(S, r, seed, dist)
            X, y = dist.draw(np.random.default_rng(seed), 1)
            np.testing.assert_array_equal(nb.replacement.x, X[0])
            self.assertEqual(nb.replacement.y, y[0])
            self.assertFalse(np.array_equal(nb.replacement.x, S[0].x))

    def test_run_tasks(self):
        tasks = [((k,), (k,)) for k in (3, 1, 2)]
        self.assertEqual(run_tasks(square, tasks), {(1,): 1, (2,): 4, (3,): 9})
        self.assertEqual(run_tasks(square, tasks, jobs=2), {(1,): 1, (2,): 4, (3,): 9})
        self.assertEqual(list(run_tasks(square, tasks, jobs=2)), [(1,), (2,), (3,)])
        self.assertEqual(run_tasks(square, []), {})


class RecordsTest(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_atomic_write(self):
        path = self.dir / "a.txt"
        with records.atomic_write(path) as f:
            f.write("first")
        with self.assertRaises(RuntimeError):
            with records.atomic_write(path) as f:
                f.write("second")
                raise RuntimeError
        self.assertEqual(path.read_text(), "first")
        self.assertEqual(os.listdir(self.dir), ["a.txt"])

    def test_csv_floats_exact(self):
        values = [0.1, 1 / 3, 1e-300, float("inf"), float("nan")]
        records.write_csv(self.dir / "v.csv", ("v",), [(v,) for v in values])
        header, rows = records.read_csv(self.dir / "v.csv")
        self.assertEqual(header, ["v"])
        self.assertEqual([float(r[0]) for r in rows[:4]], values[:4])
        self.assertEqual(rows[4], ["nan"])

    def test_state_file(self):
        init = ModelState.initialize(3, 5, certify_bounds("sigmoid"), signs="random", init="gaussian", seed=1)
        state = init.with_weights(init.init_weights + 0.25)
        records.save_state(self.dir / "w.state", state)
        loaded = records.load_state(self.dir / "w.state")
        np.testing.assert_array_equal(loaded.weights, state.weights)
        np.testing.assert_array_equal(loaded.init_weights, state.init_weights)
        np.testing.assert_array_equal(loaded.signs, state.signs)
        self.assertEqual(loaded.activation.kind, "sigmoid")
        data = (self.dir / "w.state").read_bytes()
        (self.dir / "short.state").write_bytes(data[:-8])
        with self.assertRaises(ShapeError):
            records.load_state(self.dir / "short.state")
        (self.dir / "bad.state").write_bytes(b"XXXX" + data[4:])
        with self.assertRaises(ShapeError):
            records.load_state(self.dir / "bad.state")

    def test_dataset_file(self):
        S = Dataset(np.array([[0.6, 0.8], [1.0, 0.0]]), np.array([0.5, -0.25]), 1.0, 1.0)
        records.write_dataset_csv(self.dir / "d.csv", S)
        self.assertTrue(records.read_dataset_csv(self.dir / "d.csv", 1.0, 1.0).identical_to(S))
        (self.dir / "e.csv").write_text("a,b\n1,2\n")
        with self.assertRaises(ShapeError):
            records.read_dataset_csv(self.dir / "e.csv", 1.0, 1.0)
        (self.dir / "f.csv").write_text("x_0,x_1,y\n0.1,0.2\n")
        with self.assertRaises(ShapeError):
            records.read_dataset_csv(self.dir / "f.csv", 1.0, 1.0)


class CommandTest(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def run_command(self, command, text, *args, out="out"):
        path = self.dir / "lab.ini"
        path.write_text(text)
        return main([command, "--config", str(path), "--out", str(self.dir / out), *args])

    def summary(self, out="out"):
        return json.loads((self.dir / out / "summary.json").read_text())

    def test_missing_config_file(self):
        self.assertEqual(main(["train", "--config", str(self.dir / "absent.ini")]), EXIT_CONFIG)

    def test_invalid_config(self):
        self.assertEqual(self.run_command("train", MINIMAL.replace("d = 3", "")), EXIT_CONFIG)

    def test_train(self):
        self.assertEqual(self.run_command("train", MINIMAL + "[stability]\nn_mc = 1000\n", "--checkpoint"), EXIT_OK)
        out = self.dir / "out"
        for name in ("config.snapshot", "summary.json", "dataset.csv", "trajectory.csv", "final.state",
                     "checkpoint_0.state", "checkpoint_10.state"):
            self.assertTrue((out / name).exists(), name)
        header, rows = records.read_csv(out / "trajectory.csv")
        self.assertEqual(header, ["step", "empirical_risk", "grad_norm", "dist_to_init"])
        self.assertEqual(len(rows), 11)
        summary = self.summary()
        self.assertEqual(summary["command"], "train")
        self.assertEqual(summary["exit_status"], EXIT_OK)
        self.assertEqual(ExperimentConfig.load(out / "config.snapshot").training.horizon, 10)

    def test_strict_step_size(self):
        self.assertEqual(self.run_command("train", MINIMAL.replace("eta = 0.1", "eta = 25")), EXIT_CONFIG)

    def test_budget(self):
        self.assertEqual(self.run_command("train", MINIMAL, "--budget", "5"), EXIT_CONFIG)
        self.assertEqual(self.run_command("stability", MINIMAL, "--budget", "5"), EXIT_CONFIG)

    def test_check_holds(self):
        self.assertEqual(self.run_command("check", MINIMAL + TINY_CHECK), EXIT_OK)
        header, rows = records.read_csv(self.dir / "out" / "lemmas.csv")
        self.assertEqual(header, ["lemma", "checks", "violations", "worst_margin", "skipped"])
        self.assertTrue(all(row[2] == "0" for row in rows))

    def test_check_broken_assumption(self):
        text = "\n".join((
            "[distribution]", "d = 2",
            "[model]", "m = 16",
            "[training]", "eta = 25", "horizon = 10", "strict_mode = false",
        )) + TINY_CHECK
        self.assertEqual(self.run_command("check", text), EXIT_VIOLATIONS)
        self.assertGreater(self.summary()["check"]["lemmas"]["descent"]["violations"], 0)

    def test_stability(self):
        text = MINIMAL.replace("m = 16", "m = 512").replace("horizon = 10", "horizon = 5\nn = 8")
        self.assertEqual(self.run_command("stability", text + "[stability]\nreplicates = 2\n"), EXIT_OK)
        _, rows = records.read_csv(self.dir / "out" / "stability_index.csv")
        self.assertEqual(len(rows), 8)
        _, rows = records.read_csv(self.dir / "out" / "stability_steps.csv")
        self.assertEqual(len(rows), 6)
        self.assertTrue(self.summary()["stability"]["m_bound_satisfied"])

    def test_single_point_sweep_is_stability(self):
        text = MINIMAL.replace("horizon = 10", "horizon = 3") + "[sweep]\nn_grid = 6\n[stability]\nreplicates = 1\n"
        self.assertEqual(self.run_command("sweep", text), EXIT_OK)
        self.assertEqual(self.summary()["command"], "stability")
        self.assertTrue((self.dir / "out" / "stability_index.csv").exists())

    def test_sweep(self):
        text = MINIMAL.replace("horizon = 10", "horizon = 3") + "[sweep]\nn_grid = 4, 8, 16\n[stability]\nreplicates = 1\n"
        self.assertEqual(self.run_command("sweep", text, "--out", str(self.dir / "sweep")), EXIT_OK)
        header, rows = records.read_csv(self.dir / "sweep" / "sweep.csv")
        self.assertEqual(header, ["n", "epsilon_hat", "epsilon_se", "bound", "slope"])
        self.assertEqual(len(rows), 3)

    def test_sweep_errors(self):
        self.assertEqual(self.run_command("sweep", MINIMAL + "[sweep]\nkind = width\n"), EXIT_CONFIG)
        planted = MINIMAL.replace("d = 3", "d = 3\nplanted_distance = 0.5") + "[sweep]\nkind = rate\n"
        self.assertEqual(self.run_command("sweep", planted), EXIT_CONFIG)

    def bounds_config(self, m=16):
        return (
            MINIMAL.replace("m = 16", f"m = {m}").replace("horizon = 10", "horizon = 10\nn = 100")
            + "[bounds]\nsurrogate_n = 10000\nreference_steps = 20\nn_mc = 1000\n"
        )

    def test_bounds_with_zero_risks(self):
        risks = self.dir / "risks.csv"
        records.write_csv(risks, ("empirical_risk",), [(0.0,)] * 11)
        self.assertEqual(self.run_command("bounds", self.bounds_config(), "--risks", str(risks)), EXIT_OK)
        header, rows = records.read_csv(self.dir / "out" / "bounds_vs_measured.csv")
        self.assertEqual(header, ["step", "empirical_risk", "gen_bound_gd", "gen_bound_sgd", "stab_bound_sgd"])
        self.assertEqual(len(rows), 11)
        self.assertTrue(all(float(row[2]) == 0.0 for row in rows))
        self.assertTrue(self.summary()["bounds"]["risks_measured"])

    def test_bounds_below_every_threshold(self):
        self.assertEqual(self.run_command("bounds", self.bounds_config(m=1)), EXIT_OK)
        _, rows = records.read_csv(self.dir / "out" / "thresholds.csv")
        self.assertEqual(len(rows), 6)
        self.assertTrue(all(row[3] == "false" for row in rows))
        self.assertFalse((self.dir / "out" / "bounds_vs_measured.csv").exists())

    def test_bounds_short_risks(self):
        risks = self.dir / "risks.csv"
        records.write_csv(risks, ("empirical_risk",), [(0.0,)] * 5)
        self.assertEqual(self.run_command("bounds", self.bounds_config(), "--risks", str(risks)), EXIT_CONFIG)

    def test_json_only_output(self):
        text = MINIMAL.replace("horizon = 10", "horizon = 3") + "[stability]\nreplicates = 1\n[output]\nformats = json\n"
        self.assertEqual(self.run_command("stability", text.replace("[training]", "[training]\nn = 4")), EXIT_OK)
        self.assertFalse((self.dir / "out" / "stability_index.csv").exists())
        self.assertTrue((self.dir / "out" / "stability.json").exists())


if __name__ == "__main__":
    unittest.main()
