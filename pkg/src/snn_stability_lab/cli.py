"""
Command-line orchestration::

    snn-stability-lab {check,stability,sweep,bounds,train} --config lab.ini [--seed S] [--out DIR]
                      [--jobs K] [--budget STEPS] [-v]

Every command writes one directory with ``config.snapshot``, ``summary.json`` and
per-table CSVs. Exit codes: 0 success, 1 violations found, 2 configuration or
input error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import logging
from pathlib import Path
from typing import Any, Callable, Sequence

from . import __version__
from .exceptions import BudgetExceededError, CapacityError, ConfigurationError, NumericError
from .features import records
from .features.config import ExperimentConfig
from .features.lemmas import run_property_suite
from .features.seeding import Role, task_seed
from .main import theory
from .main.data import sample_dataset
from .main.optim import train
from .main.stability import (
    empirical_generalization_gap,
    estimate_on_average_stability,
    rate_sweep,
    stability_scaling_sweep,
)

__all__ = (
    "EXIT_OK",
    "EXIT_VIOLATIONS",
    "EXIT_CONFIG",
    "EXIT_NUMERIC",
    "build_parser",
    "cmd_check",
    "cmd_stability",
    "cmd_sweep",
    "cmd_bounds",
    "cmd_train",
    "main",
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class RunDirectory:
    """output directory of one command"""

    def __init__(self, config: ExperimentConfig, command: str):
        self.config = config
        self.command = command
        self.path = Path(config.output.directory)
        self.path.mkdir(parents=True, exist_ok=True)
        with records.atomic_write(self.path / "config.snapshot") as f:
            f.write(config.snapshot())

    def wants(self, fmt: str) -> bool:
        return fmt in self.config.output.formats

    def csv(self, name: str, header: Sequence[str], rows):
        if self.wants("csv"):
            records.write_csv(self.path / name, header, rows)
            logger.info("written: %s", self.path / name)

    def json(self, name: str, obj: Any):
        if self.wants("json"):
            records.write_json(self.path / name, obj)
            logger.info("written: %s", self.path / name)

    def summary(self, status: int, **content):
        records.write_json(self.path / "summary.json", {
            "command": self.command,
            "version": __version__,
            "master_seed": self.config.master_seed,
            "exit_status": status,
            **content,
        })


def cmd_check(config: ExperimentConfig) -> int:
    """runs the property suite; exit 1 on any violation"""
    out = RunDirectory(config, "check")
    init = config.init()
    report = run_property_suite(
        config.teacher_distribution(init),
        config.init,
        config.model.m,
        config.train_config(),
        config.check,
        config.master_seed,
    )
    rows = [
        (name, r.checks, r.violations, r.worst_margin if r.checks else None, r.skipped or "")
        for name, r in sorted(report.reports.items())
    ]
    out.csv("lemmas.csv", ("lemma", "checks", "violations", "worst_margin", "skipped"), rows)
    status = EXIT_VIOLATIONS if report.violations else EXIT_OK
    out.summary(status, check=report.to_dict())
    if report.violations:
        logger.warning("%d violations in %d checks", report.violations, report.checks)
    return status


def _stability(config: ExperimentConfig, n: int, out: RunDirectory) -> int:
    init = config.init()
    dist = config.teacher_distribution(init)
    report = estimate_on_average_stability(
        dist, n, config.train_config(), config.stability.replicates, config.master_seed, init,
        config.experiment.jobs, config.budget.max_steps, config.stability.neighbor_policy,
    )
    out.csv("stability_index.csv", ("i", "mean_sq_distance"), report.index_rows())
    out.csv(
        "stability_steps.csv",
        ("step", "mean_sq_distance", "mean_sq_distance_se", "empirical_risk", "empirical_risk_se"),
        report.step_rows(),
    )
    out.json("stability.json", report.to_dict())
    violated = report.algorithm == "gd" and report.m_bound_satisfied and report.uniform_bound_violations > 0
    status = EXIT_VIOLATIONS if violated else EXIT_OK
    out.summary(status, stability={
        "n": report.n,
        "on_average_sq": report.on_average_sq,
        "on_average_se": report.on_average_se,
        "epsilon_hat": report.epsilon_hat,
        "bound_gd_uniform": report.bound_gd_uniform,
        "bound_gd_on_avg": report.bound_gd_on_avg,
        "bound_sgd_on_avg": report.bound_sgd_on_avg,
        "uniform_bound_violations": report.uniform_bound_violations,
        "m_bound_satisfied": report.m_bound_satisfied,
        "assumptions_violated": report.assumptions_violated,
    })
    return status


def cmd_stability(config: ExperimentConfig) -> int:
    """on-average stability at the configured n"""
    return _stability(config, config.training.n, RunDirectory(config, "stability"))


def cmd_sweep(config: ExperimentConfig) -> int:
    """stability or rate sweep over ``sweep.n_grid``; a single grid point is a stability run"""
    sw = config.sweep
    if sw.kind not in ("stability", "rate"):
        raise ConfigurationError(f"unknown sweep kind: {sw.kind!r} (supported: stability, rate)")
    if sw.kind == "stability" and len(sw.n_grid) == 1:
        return _stability(config, sw.n_grid[0], RunDirectory(config, "stability"))
    out = RunDirectory(config, "sweep")
    if sw.kind == "stability":
        init = config.init()
        table = stability_scaling_sweep(
            config.teacher_distribution(init), sw.n_grid, config.train_config(), config.stability.replicates,
            config.master_seed, init, config.experiment.jobs, config.budget.max_steps,
            config.stability.neighbor_policy,
        )
        out.csv("sweep.csv", table.header + ("slope",), table.csv_rows())
    else:
        if config.distribution.planted_distance is not None:
            raise ConfigurationError("rate sweeps change the width; distribution.planted_distance is not supported")
        table = rate_sweep(
            config.teacher_distribution(), sw.n_grid, config.training.eta, config.training.algorithm,
            config.init, config.stability.replicates, config.master_seed, sw.horizon_per_n, sw.m_scale,
            sw.m_cap, sw.n_mc, config.training.strict_mode, config.experiment.jobs, config.budget.max_steps,
        )
        out.csv("rate.csv", table.header + ("slope",), table.csv_rows())
    out.summary(EXIT_OK, sweep=table.to_dict())
    return EXIT_OK


def _read_risks(path: str, count: int) -> list[float]:
    """the ``empirical_risk`` column of a trajectory CSV, or the only column of a plain one"""
    header, rows = records.read_csv(path)
    column = header.index("empirical_risk") if "empirical_risk" in header else 0
    if len(header) > 1 and "empirical_risk" not in header:
        raise ConfigurationError(f"{path}: no empirical_risk column in {header}")
    try:
        risks = [float(row[column]) for row in rows]
    except (ValueError, IndexError) as e:
        raise ConfigurationError(f"{path}: unreadable risk value ({e})") from None
    if len(risks) < count:
        raise ConfigurationError(f"{path}: {len(risks)} risks, the bounds need {count} (steps 0..T)")
    return risks


def cmd_bounds(config: ExperimentConfig, risks_path: str | None = None) -> int:
    """thresholds and bound values; with `risks_path` side by side with the measured risks"""
    out = RunDirectory(config, "bounds")
    tr = config.training
    bs = config.bounds
    init = config.init()
    dist = config.teacher_distribution(init)
    risks = _read_risks(risks_path, tr.horizon + 1) if risks_path else None
    c = theory.TheoryConstants(
        init.activation, dist.c_x, dist.c_y, dist.certified_c0(init), init.m, dist.d, tr.n, tr.eta, tr.horizon,
    )
    lam = bs.lam if bs.lam is not None else 1.0 / (tr.eta * max(tr.horizon, 1))
    ref = theory.build_regularized_reference(
        dist, lam, init, bs.surrogate_n, bs.reference_steps, task_seed(config.master_seed, Role.REFERENCE),
        bs.n_mc, bs.reference_tol,
    )
    report = theory.bound_report(
        c, tr.n, tr.eta, tr.horizon, ref, risks, assumptions_violated=tr.eta > c.max_step(),
    )
    out.csv("thresholds.csv", ("name", "required_m", "configured_m", "satisfied"),
            [tuple(row.values()) for row in report.threshold_rows()])
    if risks is not None:
        rows = []
        for t in range(tr.horizon + 1):
            rows.append((
                t,
                risks[t],
                theory.gd_generalization_bound(c, tr.n, tr.eta, t, risks),
                theory.sgd_generalization_bound(c, tr.n, tr.eta, t, risks),
                theory.sgd_stability_bound(c, tr.n, tr.eta, t - 1, risks) if t else 0.0,
            ))
        out.csv("bounds_vs_measured.csv",
                ("step", "empirical_risk", "gen_bound_gd", "gen_bound_sgd", "stab_bound_sgd"), rows)
    out.json("bounds.json", report.to_dict())
    out.summary(EXIT_OK, bounds={
        "stab_bound_gd_uniform": report.stab_bound_gd_uniform,
        "gen_bound_gd": report.gen_bound_gd,
        "gen_bound_sgd": report.gen_bound_sgd,
        "stab_bound_sgd": report.stab_bound_sgd,
        "thresholds": {name: th.satisfied for name, th in report.thresholds.items()},
        "risks_measured": report.risks_measured,
        "assumptions_violated": report.assumptions_violated,
    })
    return EXIT_OK


def cmd_train(config: ExperimentConfig, checkpoints: bool = False) -> int:
    """one run: trajectory scalars, final state and the generalization gap"""
    out = RunDirectory(config, "train")
    tr = config.training
    init = config.init()
    dist = config.teacher_distribution(init)
    if config.budget.max_steps is not None and tr.horizon > config.budget.max_steps:
        raise BudgetExceededError(tr.horizon, config.budget.max_steps)
    S = sample_dataset(dist, tr.n, task_seed(config.master_seed, Role.SAMPLE, tr.n), init)
    traj = train(S, config.train_config(seed=task_seed(config.master_seed, Role.STREAM, tr.n)), init)
    if out.wants("csv"):
        records.write_dataset_csv(out.path / "dataset.csv", S)
        records.write_trajectory_csv(out.path / "trajectory.csv", traj.scalars)
    records.save_state(out.path / "final.state", traj.final)
    if checkpoints:
        for t, state in sorted(traj.checkpoints.items()):
            records.save_state(out.path / f"checkpoint_{t}.state", state)
    gap, se = empirical_generalization_gap(
        traj.final, S, dist, config.stability.n_mc, task_seed(config.master_seed, Role.MC, tr.n),
    )
    out.summary(EXIT_OK, train={
        "algorithm": traj.algorithm,
        "n": tr.n,
        "m": init.m,
        "eta": tr.eta,
        "horizon": tr.horizon,
        "final_empirical_risk": traj.final.empirical_risk(S),
        "final_dist_to_init": traj.final.dist_to_init,
        "generalization_gap": gap,
        "generalization_gap_se": se,
        "assumptions_violated": traj.assumptions_violated,
    })
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="snn-stability-lab",
        description="stability and generalization experiments for shallow networks trained by GD/SGD",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="sectioned configuration file")
    common.add_argument("--seed", type=int, default=None, help="override experiment.master_seed")
    common.add_argument("--out", default=None, metavar="DIR", help="override output.directory")
    common.add_argument("--jobs", type=int, default=None, help="override experiment.jobs")
    common.add_argument("--budget", type=int, default=None, metavar="STEPS", help="override budget.max_steps")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v: info, -vv: debug")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("check", parents=[common], help="run the inequality property suite")
    sub.add_parser("stability", parents=[common], help="estimate on-average stability")
    sub.add_parser("sweep", parents=[common], help="stability or rate sweep over sweep.n_grid")
    bounds = sub.add_parser("bounds", parents=[common], help="thresholds and bound values")
    bounds.add_argument("--risks", default=None, metavar="CSV", help="measured per-step empirical risks")
    tr = sub.add_parser("train", parents=[common], help="single GD/SGD run")
    tr.add_argument("--checkpoint", action="store_true", help="also write every checkpoint state")
    return p


_COMMANDS: dict[str, Callable[..., int]] = {
    "check": lambda config, args: cmd_check(config),
    "stability": lambda config, args: cmd_stability(config),
    "sweep": lambda config, args: cmd_sweep(config),
    "bounds": lambda config, args: cmd_bounds(config, args.risks),
    "train": lambda config, args: cmd_train(config, args.checkpoint),
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = ExperimentConfig.load(args.config).with_overrides(args.seed, args.out, args.jobs, args.budget)
        return _COMMANDS[args.command](config, args)
    except (ValueError, OSError) as e:
        logger.error("%s", e)
        return EXIT_CONFIG
    except (NumericError, CapacityError) as e:
        logger.error("%s", e)
        return EXIT_NUMERIC
