"""
Full-batch GD and single-example SGD on the empirical risk,

    GD:   W_{t+1} = W_t - eta grad L_S(W_t)
    SGD:  W_{t+1} = W_t - eta grad l(W_t; z_{i_t}),   i_t uniform on {0, ..., n-1}

and lock-step coupled runs on neighboring datasets S, S^(i). Coupled SGD runs replay
the same index stream on both datasets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal, get_args

import numpy as np
from numpy.typing import NDArray

from ..exceptions import AssumptionViolationError, ConfigurationError, DivergenceError
from .theory import smoothness_constant

if TYPE_CHECKING:
    from .data import Dataset, NeighborSet
    from .model import ModelState

__all__ = (
    "Algorithm",
    "TrainConfig",
    "IndexStream",
    "StepScalars",
    "Trajectory",
    "DistanceTrace",
    "RunObserver",
    "WeightRecorder",
    "CoupledObserver",
    "check_step_size",
    "gd_run",
    "sgd_run",
    "train",
    "coupled_run",
    "planned_steps",
)

logger = logging.getLogger(__name__)

Algorithm = Literal["gd", "sgd"]


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer configuration.

    With `strict_mode` a step size above 1/(2 rho) is refused at run start,
    without it the run proceeds and its results are flagged.
    """

    eta: float
    """step size"""
    horizon: int
    """number of steps T"""
    algorithm: Algorithm = "gd"
    seed: int = 0
    """drives the SGD index stream"""
    checkpoint_stride: int | None = None
    """snapshot W_t every stride steps (None: only W_0 and W_T)"""
    record_scalars: bool = True
    """record L_S(W_t), ||grad L_S(W_t)||, ||W_t - W_0|| at every step"""
    strict_mode: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.eta) and self.eta > 0):
            raise ConfigurationError(f"step size must be finite and > 0, got {self.eta!r}")
        if self.horizon < 0:
            raise ConfigurationError(f"horizon must be >= 0, got {self.horizon!r}")
        if self.algorithm not in get_args(Algorithm):
            raise ConfigurationError(f"unknown algorithm: {self.algorithm!r} (supported: gd, sgd)")
        if self.checkpoint_stride is not None and self.checkpoint_stride < 1:
            raise ConfigurationError(f"checkpoint_stride must be >= 1, got {self.checkpoint_stride!r}")

    def stream(self, n: int) -> IndexStream:
        """the index stream of this configuration on a dataset of size n"""
        return IndexStream.draw(self.seed, n, self.horizon)


@dataclass(frozen=True, eq=False)
class IndexStream:
    """SGD indices i_0, ..., i_{T-1}, each in [0, n)."""

    indices: NDArray[np.intp]
    n: int
    seed: int | None = None

    def __post_init__(self):
        indices = np.array(self.indices, dtype=np.intp).ravel()
        if len(indices) and (indices.min() < 0 or indices.max() >= self.n):
            raise ConfigurationError(f"stream indices must lie in [0, {self.n})")
        indices.setflags(write=False)
        object.__setattr__(self, "indices", indices)

    @classmethod
    def draw(cls, seed: int, n: int, length: int) -> IndexStream:
        """iid uniform indices, reproducible from `seed`"""
        return cls(np.random.default_rng(seed).integers(0, n, size=length), n, seed)

    @classmethod
    def constant(cls, i: int, n: int, length: int) -> IndexStream:
        return cls(np.full(length, i), n)

    def __len__(self) -> int:
        return len(self.indices)

    def __getitem__(self, t: int) -> int:
        return int(self.indices[t])


@dataclass(eq=False)
class StepScalars:
    """per-step diagnostics for t = 0..T"""

    empirical_risk: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    dist_to_init: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.empirical_risk)

    def record(self, state: ModelState, S: Dataset, grad: NDArray[np.float64] | None = None):
        if grad is None:
            grad = state.grad_empirical_risk(S)
        self.empirical_risk.append(state.empirical_risk(S))
        self.grad_norm.append(float(np.linalg.norm(grad)))
        self.dist_to_init.append(state.dist_to_init)

    def rows(self) -> list[tuple[int, float, float, float]]:
        """``step,empirical_risk,grad_norm,dist_to_init``"""
        return [
            (t, r, g, w)
            for t, (r, g, w) in enumerate(zip(self.empirical_risk, self.grad_norm, self.dist_to_init))
        ]


@dataclass(eq=False)
class Trajectory:
    checkpoints: dict[int, ModelState]
    scalars: StepScalars | None
    final: ModelState
    algorithm: Algorithm
    steps_executed: int
    assumptions_violated: bool = False


@dataclass(eq=False)
class DistanceTrace:
    """||W_t - W_t^(i)|| and max(||W_t - W_0||, ||W_t^(i) - W_0||) for t = 0..T"""

    distances: NDArray[np.float64]
    radii: NDArray[np.float64]
    final: ModelState
    final_neighbor: ModelState
    steps_executed: int
    assumptions_violated: bool = False

    @property
    def final_distance(self) -> float:
        return float(self.distances[-1])

    @property
    def max_distance(self) -> float:
        return float(np.max(self.distances))


class RunObserver:
    """Hooks of a single run (all no-ops by default)."""

    def atStart(self, S: Dataset, config: TrainConfig):
        ...

    def atStep(self, t: int, state: ModelState):
        """called for every t = 0..T with W_t"""
        ...

    def atEnd(self, trajectory: Trajectory):
        ...


class WeightRecorder(RunObserver):
    """Keeps W_0, ..., W_T of one run in a single (T+1, d, m) array."""

    weights: NDArray[np.float64] | None

    def __init__(self):
        self.weights = None
        self._horizon = 0

    def atStart(self, S: Dataset, config: TrainConfig):
        self.weights = None
        self._horizon = config.horizon

    def atStep(self, t: int, state: ModelState):
        if self.weights is None:
            self.weights = np.empty((self._horizon + 1, *state.weights.shape))
        self.weights[t] = state.weights


class CoupledObserver:
    """Hooks of a coupled run (all no-ops by default)."""

    def atStart(self, S: Dataset, S_i: Dataset, config: TrainConfig):
        ...

    def atStep(self, t: int, state: ModelState, state_i: ModelState):
        """called for every t = 0..T with W_t and W_t^(i)"""
        ...

    def atEnd(self, trace: DistanceTrace):
        ...


def check_step_size(S: Dataset, config: TrainConfig, init: ModelState) -> bool:
    """Tests eta <= 1/(2 rho) for the data bounds of `S`; returns True if violated (non-strict mode).

    :raises AssumptionViolationError: violated with strict_mode
    """
    rho = smoothness_constant(init.activation, S.c_x, S.c_y, init.m)
    if config.eta <= 1 / (2 * rho):
        return False
    if config.strict_mode:
        raise AssumptionViolationError(config.eta, rho)
    logger.warning("eta=%g exceeds 1/(2 rho)=%g; results are flagged as assumptions violated", config.eta, 1 / (2 * rho))
    return True


def _start(init: ModelState) -> ModelState:
    return init.with_weights(init.init_weights)


def _advance(state: ModelState, grad: NDArray[np.float64], eta: float, step: int, algorithm: str) -> ModelState:
    weights = state.weights - eta * grad
    if not np.all(np.isfinite(weights)):
        raise DivergenceError(step, algorithm)
    return state.with_weights(weights)


def _snapshot(checkpoints: dict, config: TrainConfig, t: int, state: ModelState):
    if t == 0 or t == config.horizon or (config.checkpoint_stride and t % config.checkpoint_stride == 0):
        checkpoints[t] = state


def gd_run(S: Dataset, config: TrainConfig, init: ModelState, observer: RunObserver | None = None) -> Trajectory:
    """T steps of full-batch GD from W_0 = ``init.init_weights``.

    :raises DivergenceError: non-finite weights (carries the failing step)
    """
    if config.algorithm != "gd":
        raise ConfigurationError(f"gd_run called with algorithm={config.algorithm!r}")
    violated = check_step_size(S, config, init)
    observer = observer or RunObserver()
    observer.atStart(S, config)
    state = _start(init)
    scalars = StepScalars() if config.record_scalars else None
    checkpoints: dict[int, ModelState] = {}
    for t in range(config.horizon):
        _snapshot(checkpoints, config, t, state)
        observer.atStep(t, state)
        grad = state.grad_empirical_risk(S)
        if scalars is not None:
            scalars.record(state, S, grad)
        state = _advance(state, grad, config.eta, t + 1, "gd")
    _snapshot(checkpoints, config, config.horizon, state)
    observer.atStep(config.horizon, state)
    if scalars is not None:
        scalars.record(state, S)
    trajectory = Trajectory(checkpoints, scalars, state, "gd", config.horizon, violated)
    observer.atEnd(trajectory)
    return trajectory


def sgd_run(
        S: Dataset,
        config: TrainConfig,
        init: ModelState,
        stream: IndexStream | None = None,
        observer: RunObserver | None = None,
) -> Trajectory:
    """T steps of single-example SGD from W_0 along `stream` (default: ``config.stream(n)``).

    :raises ConfigurationError: stream shorter than T or drawn for another n
    :raises DivergenceError: non-finite weights (carries the failing step)
    """
    if config.algorithm != "sgd":
        raise ConfigurationError(f"sgd_run called with algorithm={config.algorithm!r}")
    stream = _check_stream(S, config, stream)
    violated = check_step_size(S, config, init)
    observer = observer or RunObserver()
    observer.atStart(S, config)
    state = _start(init)
    scalars = StepScalars() if config.record_scalars else None
    checkpoints: dict[int, ModelState] = {}
    for t in range(config.horizon):
        _snapshot(checkpoints, config, t, state)
        observer.atStep(t, state)
        if scalars is not None:
            scalars.record(state, S)
        i = stream[t]
        grad = state._batch_gradient(S.X[i:i + 1], S.y[i:i + 1])
        state = _advance(state, grad, config.eta, t + 1, "sgd")
    _snapshot(checkpoints, config, config.horizon, state)
    observer.atStep(config.horizon, state)
    if scalars is not None:
        scalars.record(state, S)
    trajectory = Trajectory(checkpoints, scalars, state, "sgd", config.horizon, violated)
    observer.atEnd(trajectory)
    return trajectory


def train(
        S: Dataset,
        config: TrainConfig,
        init: ModelState,
        stream: IndexStream | None = None,
        observer: RunObserver | None = None,
) -> Trajectory:
    """dispatches on ``config.algorithm``"""
    if config.algorithm == "gd":
        return gd_run(S, config, init, observer)
    return sgd_run(S, config, init, stream, observer)


def _check_stream(S: Dataset, config: TrainConfig, stream: IndexStream | None) -> IndexStream:
    if stream is None:
        return config.stream(len(S))
    if len(stream) < config.horizon:
        raise ConfigurationError(f"index stream of length {len(stream)} is shorter than the horizon {config.horizon}")
    if stream.n != len(S):
        raise ConfigurationError(f"index stream drawn for n={stream.n}, dataset has n={len(S)}")
    return stream


def coupled_run(
        S: Dataset,
        S_i: Dataset | NeighborSet,
        config: TrainConfig,
        init: ModelState,
        stream: IndexStream | None = None,
        observer: CoupledObserver | None = None,
        base_weights: NDArray[np.float64] | None = None,
) -> DistanceTrace:
    """Runs the algorithm on S and S^(i) in lock-step from the same W_0 (and, for SGD,
    the same index stream) and records the per-step distance without keeping either trajectory.

    With `base_weights`, the (T+1, d, m) iterates of an earlier run on S with the same
    configuration (see ``WeightRecorder``), only S^(i) is stepped and W_t is read back.

    :raises ConfigurationError: datasets of different size, `base_weights` of the wrong shape
    :raises DivergenceError: non-finite weights, context names the diverging run
    """
    if hasattr(S_i, "dataset"):
        S_i = S_i.dataset
    if len(S) != len(S_i) or S.d != S_i.d:
        raise ConfigurationError(f"coupled datasets differ in shape: {S.X.shape} vs {S_i.X.shape}")
    if config.algorithm == "sgd":
        stream = _check_stream(S, config, stream)
    if base_weights is not None and base_weights.shape != (config.horizon + 1, *init.init_weights.shape):
        raise ConfigurationError(
            f"recorded base run has shape {base_weights.shape}, "
            f"expected {(config.horizon + 1, *init.init_weights.shape)}"
        )
    violated = check_step_size(S, config, init) | check_step_size(S_i, config, init)
    observed = observer is not None
    observer = observer or CoupledObserver()
    observer.atStart(S, S_i, config)

    state = _start(init)
    state_i = state
    distances = np.empty(config.horizon + 1)
    radii = np.empty(config.horizon + 1)
    for t in range(config.horizon + 1):
        if base_weights is not None and t:
            W = base_weights[t]
            distances[t] = float(np.linalg.norm(W - state_i.weights))
            radii[t] = max(float(np.linalg.norm(W - init.init_weights)), state_i.dist_to_init)
            if observed or t == config.horizon:
                state = init.with_weights(W)
        else:
            distances[t] = state.distance(state_i)
            radii[t] = max(state.dist_to_init, state_i.dist_to_init)
        observer.atStep(t, state, state_i)
        if t == config.horizon:
            break
        if config.algorithm == "gd":
            if base_weights is None:
                grad = state.grad_empirical_risk(S)
            grad_i = state_i.grad_empirical_risk(S_i)
        else:
            k = stream[t]
            if base_weights is None:
                grad = state._batch_gradient(S.X[k:k + 1], S.y[k:k + 1])
            grad_i = state_i._batch_gradient(S_i.X[k:k + 1], S_i.y[k:k + 1])
        if base_weights is None:
            try:
                state = _advance(state, grad, config.eta, t + 1, config.algorithm)
            except DivergenceError as e:
                raise e.with_context(run="base") from None
        try:
            state_i = _advance(state_i, grad_i, config.eta, t + 1, config.algorithm)
        except DivergenceError as e:
            raise e.with_context(run="neighbor") from None

    steps = config.horizon if base_weights is not None else 2 * config.horizon
    trace = DistanceTrace(distances, radii, state, state_i, steps, violated)
    observer.atEnd(trace)
    return trace


def planned_steps(config: TrainConfig, base_runs: int = 0, coupled_runs: int = 0, replayed_runs: int = 0) -> int:
    """optimizer steps executed by `base_runs` single runs, `coupled_runs` lock-step coupled runs
    and `replayed_runs` coupled runs against a recorded base run"""
    return config.horizon * (base_runs + 2 * coupled_runs + replayed_runs)
