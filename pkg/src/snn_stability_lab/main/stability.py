"""
Empirical on-average stability, uniform per-index stability and generalization gaps,
with the matching bound values.

Expectations are Monte-Carlo means over seeded replicates and are reported with
standard errors. Every (replicate, index) coupled run is an independent task;
results are reduced in sorted key order.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Any, Callable, Literal, Sequence

import numpy as np
from numpy.typing import NDArray

from ..exceptions import BudgetExceededError, ConfigurationError, DivergenceError
from ..features.pool import run_tasks
from ..features.seeding import Role, task_seed
from . import theory
from .data import MC_FLOOR, NeighborSet, noise_floor, population_risk_mc, sample_dataset
from .optim import IndexStream, RunObserver, TrainConfig, WeightRecorder, coupled_run, planned_steps, train

if TYPE_CHECKING:
    from .data import Dataset, TeacherDistribution
    from .model import ModelState

__all__ = (
    "NeighborPolicy",
    "StabilityReport",
    "SweepTable",
    "estimate_on_average_stability",
    "empirical_generalization_gap",
    "IterateRiskAverage",
    "average_iterate_risk",
    "stability_scaling_sweep",
    "rate_sweep",
)

logger = logging.getLogger(__name__)

NeighborPolicy = Literal["ghost", "copy"]

_UNIFORM_SLACK = 1e-8


def _se(values: NDArray[np.float64], axis: int = 0) -> NDArray[np.float64]:
    k = values.shape[axis]
    if k < 2:
        return np.zeros(np.delete(values.shape, axis))
    return np.std(values, axis=axis, ddof=1) / math.sqrt(k)


@dataclass
class StabilityReport:
    """Result of ``estimate_on_average_stability``.

    :ivar per_index_sq_distance: ||A(S) - A(S^(i))||^2 per i, averaged over replicates
    :ivar on_average_sq: mean of ``per_index_sq_distance`` (epsilon^2)
    :ivar on_average_se: standard error of ``on_average_sq`` across replicates
    :ivar per_step_trace: mean over (replicate, i) of ||W_t - W_t^(i)||^2, t = 0..T
    :ivar per_step_trace_se: its standard error across replicates
    :ivar per_index_max_distance: max over replicates and t of ||W_t - W_t^(i)||
    :ivar risk_trace: mean over replicates of L_S(W_t), t = 0..T
    :ivar risk_trace_se: its standard error
    :ivar bound_gd_uniform: per-realization GD bound on every ||W_t - W_t^(i)||
    :ivar bound_sgd_on_avg: SGD bound on epsilon^2 at T with the measured risk sum
    :ivar bound_gd_on_avg: GD bound on epsilon^2 at T with the measured risk sum
    :ivar uniform_bound_violations: indices whose max distance exceeds ``bound_gd_uniform``
    """

    n: int
    algorithm: str
    eta: float
    horizon: int
    replicates: int
    per_index_sq_distance: list[float]
    on_average_sq: float
    on_average_se: float
    per_step_trace: list[float]
    per_step_trace_se: list[float]
    per_index_max_distance: list[float]
    risk_trace: list[float]
    risk_trace_se: list[float]
    bound_gd_uniform: float
    bound_sgd_on_avg: float
    bound_gd_on_avg: float
    m_bound_required: float
    m: int
    uniform_bound_violations: int
    assumptions_violated: bool = False
    notes: list[str] = field(default_factory=list)

    @property
    def epsilon_hat(self) -> float:
        """root on-average stability"""
        return math.sqrt(self.on_average_sq)

    @property
    def m_bound_satisfied(self) -> bool:
        return self.m >= self.m_bound_required

    def index_rows(self) -> list[tuple[int, float]]:
        """``i,mean_sq_distance``"""
        return list(enumerate(self.per_index_sq_distance))

    def step_rows(self) -> list[tuple[int, float, float, float, float]]:
        """``step,mean_sq_distance,mean_sq_distance_se,empirical_risk,empirical_risk_se``"""
        return [
            (t, d, dse, r, rse)
            for t, (d, dse, r, rse) in enumerate(
                zip(self.per_step_trace, self.per_step_trace_se, self.risk_trace, self.risk_trace_se)
            )
        ]

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["epsilon_hat"] = self.epsilon_hat
        d["m_bound_satisfied"] = self.m_bound_satisfied
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _replicate_task(
        S: Dataset,
        neighbors: list[NeighborSet],
        config: TrainConfig,
        init: ModelState,
        stream: IndexStream | None,
        r: int,
) -> tuple[list[float], NDArray[np.float64], bool]:
    recorder = WeightRecorder()
    try:
        traj = train(S, config, init, stream, recorder)
    except DivergenceError as e:
        raise e.with_context(replicate=r, run="base") from None
    distances = np.empty((len(neighbors), config.horizon + 1))
    violated = traj.assumptions_violated
    for k, nb in enumerate(neighbors):
        try:
            trace = coupled_run(S, nb, config, init, stream, base_weights=recorder.weights)
        except DivergenceError as e:
            raise e.with_context(replicate=r, index=nb.replacement_index) from None
        distances[k] = trace.distances
        violated |= trace.assumptions_violated
    return traj.scalars.empirical_risk, distances, violated


def _check_budget(required: int, budget: int | None, point: Any = None):
    if budget is not None and required > budget:
        raise BudgetExceededError(required, budget, point)


def estimate_on_average_stability(
        dist: TeacherDistribution,
        n: int,
        config: TrainConfig,
        replicates: int,
        base_seed: int,
        init: ModelState,
        jobs: int = 1,
        budget: int | None = None,
        neighbor_policy: NeighborPolicy = "ghost",
) -> StabilityReport:
    """For every replicate r: draws S and a ghost sample S', runs and records the base
    trajectory once (risk trace) and replays it against the n runs on S^(i), S^(i) taking
    z'_i from S' (``ghost``) or z_i itself (``copy``), so a replicate costs n + 1 runs.
    SGD replicates share one index stream between all runs of the replicate. Replicates
    are the units of work handed to the pool.

    :raises ConfigurationError: replicates < 1, n < 2, unknown neighbor policy
    :raises BudgetExceededError: more optimizer steps than `budget`
    :raises DivergenceError: carries (replicate, index)
    """
    if replicates < 1:
        raise ConfigurationError(f"replicates must be >= 1, got {replicates}")
    if n < 2:
        raise ConfigurationError(f"stability needs n >= 2, got {n}")
    if neighbor_policy not in ("ghost", "copy"):
        raise ConfigurationError(f"unknown neighbor policy: {neighbor_policy!r} (supported: ghost, copy)")
    _check_budget(planned_steps(config, replicates, replayed_runs=replicates * n), budget, {"n": n})

    tasks = []
    for r in range(replicates):
        S = sample_dataset(dist, n, task_seed(base_seed, Role.SAMPLE, n, r), init)
        stream = None
        if config.algorithm == "sgd":
            stream = IndexStream.draw(task_seed(base_seed, Role.STREAM, n, r), n, config.horizon)
        if neighbor_policy == "ghost":
            S_prime = sample_dataset(dist, n, task_seed(base_seed, Role.GHOST, n, r))
            neighbors = [NeighborSet.from_ghost(S, S_prime, i) for i in range(n)]
        else:
            neighbors = [NeighborSet(S, i, S[i]) for i in range(n)]
        tasks.append(((r,), (S, neighbors, config, init, stream, r)))
    logger.info(
        "stability: %s n=%d m=%d eta=%g T=%d, %d replicates", config.algorithm, n, init.m, config.eta,
        config.horizon, replicates,
    )

    results = run_tasks(_replicate_task, tasks, jobs)

    T = config.horizon
    dist_sq = np.empty((replicates, n, T + 1))
    max_dist = np.zeros(n)
    violated = False
    for (r,), (_, distances, flag) in results.items():
        dist_sq[r] = distances ** 2
        max_dist = np.maximum(max_dist, distances.max(axis=1))
        violated |= flag
    risk = np.array([results[(r,)][0] for r in range(replicates)])

    final = dist_sq[:, :, T]
    per_replicate = final.mean(axis=1)
    step_per_replicate = dist_sq.mean(axis=1)
    risk_trace = risk.mean(axis=0)

    c = theory.TheoryConstants(init.activation, dist.c_x, dist.c_y, dist.certified_c0(init), init.m, dist.d, n)
    bound_uniform = theory.gd_stability_bound_uniform(c, n, config.eta, T)
    notes = []
    if T:
        bound_sgd = theory.sgd_stability_bound(c, n, config.eta, T - 1, risk_trace)
        bound_gd = theory.gd_on_average_stability_bound(c, n, config.eta, T - 1, risk_trace)
    else:
        bound_sgd = bound_gd = 0.0
    m_required = theory.threshold_m_bound(c, n, config.eta, T)
    if init.m < m_required:
        notes.append(f"width {init.m} below the GD threshold {m_required:.6g}: uniform bound not guaranteed")

    report = StabilityReport(
        n=n,
        algorithm=config.algorithm,
        eta=config.eta,
        horizon=T,
        replicates=replicates,
        per_index_sq_distance=final.mean(axis=0).tolist(),
        on_average_sq=float(np.mean(final)),
        on_average_se=float(_se(per_replicate)),
        per_step_trace=step_per_replicate.mean(axis=0).tolist(),
        per_step_trace_se=_se(step_per_replicate).tolist(),
        per_index_max_distance=max_dist.tolist(),
        risk_trace=risk_trace.tolist(),
        risk_trace_se=_se(risk).tolist(),
        bound_gd_uniform=bound_uniform,
        bound_sgd_on_avg=bound_sgd,
        bound_gd_on_avg=bound_gd,
        m_bound_required=m_required,
        m=init.m,
        uniform_bound_violations=int(np.count_nonzero(max_dist > bound_uniform + _UNIFORM_SLACK)),
        assumptions_violated=violated,
        notes=notes,
    )
    logger.info("stability: epsilon^2 = %.6g +- %.3g", report.on_average_sq, report.on_average_se)
    return report


def empirical_generalization_gap(
        state: ModelState,
        S: Dataset,
        dist: TeacherDistribution,
        n_mc: int,
        seed: int | None = None,
) -> tuple[float, float]:
    """L(W) - L_S(W) and the standard error of the Monte-Carlo estimate of L(W)"""
    risk, se = population_risk_mc(state, dist, n_mc, seed)
    return risk - state.empirical_risk(S), se


@dataclass
class SweepTable:
    kind: str
    header: tuple[str, ...]
    rows: list[tuple]
    slope: float
    """fitted log-log slope of the measured column against n"""
    reports: list[Any] = field(default_factory=list)

    def csv_rows(self) -> list[tuple]:
        return [row + (self.slope,) for row in self.rows]

    def column(self, name: str) -> list:
        k = self.header.index(name)
        return [row[k] for row in self.rows]

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "slope": self.slope,
            "rows": [dict(zip(self.header, row)) for row in self.rows],
        }


def _validate_grid(n_grid: Sequence[int]) -> list[int]:
    grid = [int(n) for n in n_grid]
    if len(grid) < 3:
        raise ConfigurationError(f"a sweep grid needs at least 3 points, got {grid}")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigurationError(f"sweep grid must be strictly increasing, got {grid}")
    return grid


def _loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        return math.nan
    return float(np.polyfit(np.log(np.asarray(x, dtype=np.float64)), np.log(y), 1)[0])


def stability_scaling_sweep(
        dist: TeacherDistribution,
        n_grid: Sequence[int],
        config: TrainConfig,
        replicates: int,
        base_seed: int,
        init: ModelState,
        jobs: int = 1,
        budget: int | None = None,
        neighbor_policy: NeighborPolicy = "ghost",
) -> SweepTable:
    """Root on-average stability over `n_grid` at fixed eta, T and m.

    Rows ``n,epsilon_hat,epsilon_se,bound``; the bound is the square root of the on-average
    bound of the algorithm with the measured risk sum.

    :raises ConfigurationError: grid shorter than 3 or not strictly increasing
    :raises BudgetExceededError: names the grid point at which the budget runs out
    """
    grid = _validate_grid(n_grid)
    spent = 0
    for n in grid:
        spent += planned_steps(config, replicates, replayed_runs=replicates * n)
        _check_budget(spent, budget, {"n": n})
    rows = []
    reports = []
    for n in grid:
        rep = estimate_on_average_stability(dist, n, config, replicates, base_seed, init, jobs, None, neighbor_policy)
        eps = rep.epsilon_hat
        se = rep.on_average_se / (2 * eps) if eps > 0 else 0.0
        bound = rep.bound_gd_on_avg if config.algorithm == "gd" else rep.bound_sgd_on_avg
        rows.append((n, eps, se, math.sqrt(bound)))
        reports.append(rep)
        logger.info("sweep n=%d: epsilon_hat=%.6g bound=%.6g", n, eps, math.sqrt(bound))
    slope = _loglog_slope(grid, [row[1] for row in rows])
    logger.info("sweep slope: %.4g", slope)
    return SweepTable("stability", ("n", "epsilon_hat", "epsilon_se", "bound"), rows, slope, reports)


class IterateRiskAverage(RunObserver):
    """Monte-Carlo estimate of (1/T) sum_{t<T} L(W_t) collected while the run proceeds.

    Every iterate t < T is scored on its own block of ceil(n_mc / T) fresh draws, so all
    T iterates enter with equal weight at the cost of about n_mc loss evaluations.
    The standard error pools every scored loss (conservative across blocks).
    """

    def __init__(self, dist: TeacherDistribution, n_mc: int, seed: int | None = None):
        if n_mc < MC_FLOOR:
            raise ConfigurationError(f"n_mc must be >= {MC_FLOOR}, got {n_mc}")
        self.dist = dist
        self.n_mc = n_mc
        self.seed = seed
        self._losses: list[NDArray[np.float64]] = []

    def atStart(self, S: Dataset, config: TrainConfig):
        self._horizon = config.horizon
        self._block = math.ceil(self.n_mc / max(config.horizon, 1))
        self._rng = np.random.default_rng(self.seed)
        self._losses = []

    def atStep(self, t: int, state: ModelState):
        if t < self._horizon:
            X, y = self.dist.draw(self._rng, self._block)
            self._losses.append(state.losses(X, y))

    @property
    def iterates(self) -> int:
        return len(self._losses)

    def result(self) -> tuple[float, float]:
        """(estimate, standard error); nan without scored iterates (T = 0)"""
        if not self._losses:
            return math.nan, math.nan
        losses = np.concatenate(self._losses)
        return float(np.mean(losses)), float(np.std(losses, ddof=1) / math.sqrt(len(losses)))


def average_iterate_risk(
        S: Dataset,
        config: TrainConfig,
        init: ModelState,
        dist: TeacherDistribution,
        n_mc: int,
        seed: int | None = None,
        stream: IndexStream | None = None,
) -> tuple[float, float]:
    """Trains on S and returns the Monte-Carlo estimate of (1/T) sum_{t<T} L(W_t) with its standard error.

    :raises ConfigurationError: n_mc < ``MC_FLOOR``
    """
    averager = IterateRiskAverage(dist, n_mc, seed)
    train(S, config, init, stream, averager)
    return averager.result()


def _rate_task(
        dist: TeacherDistribution,
        S: Dataset,
        config: TrainConfig,
        init: ModelState,
        n_mc: int,
        mc_seed: int,
        point: tuple[int, int],
) -> float:
    try:
        if config.algorithm == "sgd":
            return average_iterate_risk(S, config, init, dist, n_mc, mc_seed)[0]
        traj = train(S, config, init)
    except DivergenceError as e:
        raise e.with_context(n=point[0], replicate=point[1]) from None
    return population_risk_mc(traj.final, dist, n_mc, mc_seed)[0]


def rate_sweep(
        dist: TeacherDistribution,
        n_grid: Sequence[int],
        eta: float,
        algorithm: Literal["gd", "sgd"],
        make_init: Callable[[int], ModelState],
        replicates: int,
        base_seed: int,
        horizon_per_n: float = 0.5,
        m_scale: float = 1.0,
        m_cap: int = 8192,
        n_mc: int = 20_000,
        strict_mode: bool = True,
        jobs: int = 1,
        budget: int | None = None,
) -> SweepTable:
    """Excess risk over `n_grid` with T = ceil(horizon_per_n * n) and
    m = min(m_cap, ceil(m_scale * (eta T)^3)).

    GD reports L(W_T) - L(W*), SGD the mean of L(W_t) - L(W*) over all
    iterates t < T (``average_iterate_risk``).
    L(W*) is the noise floor of `dist`. The trend column evaluates the rate expression of the
    algorithm with the regularity value taken as lambda = 1/(eta T).

    Rows ``n,eta,horizon,m,excess_risk,excess_risk_se,trend``.
    """
    grid = _validate_grid(n_grid)
    best = noise_floor(dist)
    points = []
    spent = 0
    for n in grid:
        T = max(1, math.ceil(horizon_per_n * n))
        m = min(m_cap, max(1, math.ceil(m_scale * (eta * T) ** 3)))
        spent += T * replicates
        _check_budget(spent, budget, {"n": n, "horizon": T, "m": m})
        points.append((n, T, m))

    tasks = []
    for k, (n, T, m) in enumerate(points):
        init = make_init(m)
        for r in range(replicates):
            S = sample_dataset(dist, n, task_seed(base_seed, Role.SAMPLE, n, r), init)
            config_r = TrainConfig(
                eta, T, algorithm, task_seed(base_seed, Role.STREAM, n, r), record_scalars=False,
                strict_mode=strict_mode,
            )
            tasks.append(((k, r), (dist, S, config_r, init, n_mc, task_seed(base_seed, Role.MC, n, r), (n, r))))
    risks = run_tasks(_rate_task, tasks, jobs)

    rows = []
    for k, (n, T, m) in enumerate(points):
        excess = np.array([risks[(k, r)] for r in range(replicates)]) - best
        lam = 1.0 / (eta * T)
        if algorithm == "gd":
            trend = theory.gd_excess_risk_rate(eta, T, n, best, lam)
        else:
            trend = theory.sgd_excess_risk_rate(eta, best, lam)
        rows.append((n, eta, T, m, float(np.mean(excess)), float(_se(excess)), trend))
        logger.info("rate sweep n=%d T=%d m=%d: excess risk %.6g", n, T, m, rows[-1][4])
    slope = _loglog_slope(grid, [row[4] for row in rows])
    return SweepTable("rate", ("n", "eta", "horizon", "m", "excess_risk", "excess_risk_se", "trend"), rows, slope)
