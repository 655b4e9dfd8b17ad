"""
Inequality checkers for the loss landscape and the GD/SGD trajectories.

Every checker returns a *margin* (right side minus left side, oriented so that the
inequality holds iff margin >= 0); a margin below ``-TOL`` is a violation.
Violations are data: they are collected in ``LemmaReport`` objects, never raised.

``run_property_suite`` runs the whole collection on random instances and along
real trajectories.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Callable, Iterable, Literal, NamedTuple

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import eigvalsh
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from ..exceptions import EigenSolverError
from ..main import theory
from ..main.data import sample_dataset, make_neighbor
from ..main.model import DENSE_HESSIAN_LIMIT, Example
from ..main.optim import CoupledObserver, TrainConfig, coupled_run, gd_run, sgd_run
from .seeding import Role, task_seed

if TYPE_CHECKING:
    from ..main.data import TeacherDistribution
    from ..main.model import ModelState
    from ..main.optim import StepScalars
    from ..main.theory import TheoryConstants

__all__ = (
    "TOL",
    "LemmaReport",
    "SuiteReport",
    "Curvature",
    "CheckSettings",
    "central_difference_gradient",
    "gradient_error",
    "hvp_error",
    "lambda_min",
    "lambda_max_dense",
    "check_curvature",
    "smoothness_margin",
    "self_bounding_margin",
    "check_smoothness_selfbounding",
    "check_weak_convexity",
    "check_cococoercivity",
    "descent_margins",
    "running_average_margins",
    "gd_iterate_margins",
    "sgd_iterate_margins",
    "uniform_stability_margins",
    "epsilon_margins",
    "check_one_step_recursion",
    "TrajectoryPairChecker",
    "run_property_suite",
)

logger = logging.getLogger(__name__)

TOL: float = 1e-8
"""absolute slack of every inequality"""


@dataclass
class LemmaReport:
    """violation count and worst margin of one inequality"""

    name: str
    checks: int = 0
    violations: int = 0
    worst_margin: float = math.inf
    skipped: str | None = None

    def add(self, margin: float, tol: float = TOL) -> bool:
        """registers one margin; returns True if it holds"""
        margin = float(margin)
        self.checks += 1
        if margin < self.worst_margin or math.isnan(margin):
            self.worst_margin = margin
        if not margin >= -tol:
            self.violations += 1
            return False
        return True

    def extend(self, margins: Iterable[float], tol: float = TOL):
        for margin in margins:
            self.add(margin, tol)

    def to_dict(self) -> dict[str, Any]:
        return {
            "checks": self.checks,
            "violations": self.violations,
            "worst_margin": self.worst_margin if self.checks else None,
            "skipped": self.skipped,
        }


@dataclass
class SuiteReport:
    reports: dict[str, LemmaReport] = field(default_factory=dict)

    def __getitem__(self, name: str) -> LemmaReport:
        if name not in self.reports:
            self.reports[name] = LemmaReport(name)
        return self.reports[name]

    @property
    def violations(self) -> int:
        return sum(r.violations for r in self.reports.values())

    @property
    def checks(self) -> int:
        return sum(r.checks for r in self.reports.values())

    def to_dict(self) -> dict[str, Any]:
        return {
            "checks": self.checks,
            "violations": self.violations,
            "lemmas": {name: self.reports[name].to_dict() for name in sorted(self.reports)},
        }


# ---- finite-difference oracles


def central_difference_gradient(
        f: Callable[[NDArray[np.float64]], float],
        W: NDArray[np.float64],
        h: float = 1e-5,
) -> NDArray[np.float64]:
    """entrywise central differences (f(W + h e_p) - f(W - h e_p)) / 2h"""
    W = np.array(W, dtype=np.float64)
    grad = np.empty_like(W)
    flat = W.reshape(-1)
    gflat = grad.reshape(-1)
    for p in range(flat.size):
        x = flat[p]
        flat[p] = x + h
        fp = f(W)
        flat[p] = x - h
        fm = f(W)
        flat[p] = x
        gflat[p] = (fp - fm) / (2 * h)
    return grad


def _relative_error(approx: NDArray[np.float64], exact: NDArray[np.float64]) -> float:
    scale = float(np.max(np.abs(exact)))
    return float(np.max(np.abs(approx - exact))) / max(scale, 1e-12)


def gradient_error(state: ModelState, z: Example, h: float = 1e-5) -> float:
    """relative max-norm error of ``grad_loss`` against central differences of ``loss``"""
    fd = central_difference_gradient(lambda W: state.with_weights(W).loss(z), state.weights, h)
    return _relative_error(fd, state.grad_loss(z))


def hvp_error(state: ModelState, z: Example, V: NDArray[np.float64], h: float = 1e-5) -> float:
    """relative max-norm error of ``hvp`` against central differences of ``grad_loss`` along V"""
    fd = (
        state.with_weights(state.weights + h * V).grad_loss(z)
        - state.with_weights(state.weights - h * V).grad_loss(z)
    ) / (2 * h)
    return _relative_error(fd, state.hvp(z, V))


# ---- curvature


def lambda_max_dense(state: ModelState, z: Example) -> float:
    H = state.dense_hessian(z)
    return float(eigvalsh(H, subset_by_index=[H.shape[0] - 1, H.shape[0] - 1])[0])


def lambda_min(
        state: ModelState,
        z: Example,
        shift: float,
        method: Literal["auto", "dense", "lanczos"] = "auto",
        tol: float = 1e-10,
) -> float:
    """Smallest eigenvalue of the Hessian of l(W; z).

    ``dense``: full eigensolve (d * m <= ``DENSE_HESSIAN_LIMIT``).
    ``lanczos``: matrix-free Lanczos on the PSD operator shift * I - Hessian, with
    `shift` >= lambda_max (rho is admissible); lambda_min = shift - its largest eigenvalue.

    :raises EigenSolverError: Lanczos did not converge, or its residual is too large
    """
    if method == "auto":
        method = "dense" if state.d * state.m <= DENSE_HESSIAN_LIMIT else "lanczos"
    if method == "dense":
        H = state.dense_hessian(z)
        return float(eigvalsh(H, subset_by_index=[0, 0])[0])

    shape = state.weights.shape
    p = state.d * state.m

    def matvec(v):
        v = np.asarray(v, dtype=np.float64).reshape(shape)
        return (shift * v - state.hvp(z, v)).reshape(-1)

    if p < 3:
        H = np.column_stack([matvec(e) for e in np.eye(p)])
        return float(shift - np.max(eigvalsh(0.5 * (H + H.T))))

    op = LinearOperator((p, p), matvec=matvec, dtype=np.float64)
    v0 = np.ones(p) / math.sqrt(p)
    try:
        vals, vecs = eigsh(op, k=1, which="LA", tol=tol, v0=v0, maxiter=max(20 * p, 1000))
    except ArpackNoConvergence as e:
        residual = math.inf
        if len(e.eigenvalues):
            v = e.eigenvectors[:, 0]
            residual = float(np.linalg.norm(matvec(v) - e.eigenvalues[0] * v))
        raise EigenSolverError("Lanczos iteration for lambda_min did not converge", residual) from None
    mu = float(vals[0])
    v = vecs[:, 0]
    residual = float(np.linalg.norm(matvec(v) - mu * v))
    logger.debug("lanczos lambda_min=%.12g residual=%.3g", shift - mu, residual)
    if residual > 1e-6 * max(1.0, abs(shift)):
        raise EigenSolverError("Lanczos eigenpair for lambda_min is inaccurate", residual)
    return shift - mu


class Curvature(NamedTuple):
    lambda_min: float
    bound_residual: float
    """-(C_x^2 B_phi'' / sqrt(m)) |f_W(x) - y|"""
    bound_radius: float
    """-(b' / sqrt(m)) max(||W - W_0||, 1)"""
    bound_min_eig: float
    """-(C_x^2 B_phi'' / sqrt(m)) (C_x B_phi' ||W - W_0|| + sqrt(2 l(W_0; z)))"""

    @property
    def margin(self) -> float:
        return self.lambda_min - max(self.bound_residual, self.bound_radius, self.bound_min_eig)

    @property
    def holds(self) -> bool:
        return self.margin >= -TOL


def check_curvature(
        state: ModelState,
        z: Example,
        c: TheoryConstants,
        method: Literal["auto", "dense", "lanczos"] = "auto",
) -> Curvature:
    """lambda_min of the Hessian of l(W; z) and its three lower bounds"""
    a = state.activation
    scale = c.c_x ** 2 * a.b_phi2 / math.sqrt(state.m)
    residual = abs(state.forward(z.x) - z.y)
    init_loss = state.with_weights(state.init_weights).loss(z)
    radius = state.dist_to_init
    return Curvature(
        lambda_min(state, z, c.rho, method),
        -scale * residual,
        -(c.b_prime / math.sqrt(state.m)) * max(radius, 1.0),
        -scale * (c.c_x * a.b_phi1 * radius + math.sqrt(2 * init_loss)),
    )


# ---- smoothness, self-bounding, weak convexity, co-coercivity


def smoothness_margin(c: TheoryConstants, state: ModelState, other: ModelState, z: Example) -> float:
    """rho ||W - W'|| - ||grad l(W; z) - grad l(W'; z)||"""
    return c.rho * state.distance(other) - float(np.linalg.norm(state.grad_loss(z) - other.grad_loss(z)))


def self_bounding_margin(c: TheoryConstants, state: ModelState, z: Example) -> float:
    """2 rho l(W; z) - ||grad l(W; z)||^2"""
    g = state.grad_loss(z)
    return 2 * c.rho * state.loss(z) - float(np.vdot(g, g))


def check_smoothness_selfbounding(
        c: TheoryConstants,
        state_pairs: Iterable[tuple[ModelState, ModelState]],
        examples: Iterable[Example],
) -> tuple[LemmaReport, LemmaReport]:
    """zips pairs with examples; the self-bounding inequality is checked at both points"""
    smooth = LemmaReport("smoothness")
    selfb = LemmaReport("self-bounding")
    for (state, other), z in zip(state_pairs, examples):
        smooth.add(smoothness_margin(c, state, other, z))
        selfb.add(self_bounding_margin(c, state, z))
        selfb.add(self_bounding_margin(c, other, z))
    return smooth, selfb


def check_weak_convexity(c: TheoryConstants, state: ModelState, other: ModelState, z: Example) -> float:
    """l(W) - l(W') - <W - W', grad l(W')> + (b' R / sqrt(m)) ||W - W'||^2,
    R = max(1, ||W - W_0||, ||W' - W_0||)"""
    diff = state.weights - other.weights
    lhs = state.loss(z) - other.loss(z) - float(np.vdot(diff, other.grad_loss(z)))
    R = max(1.0, state.dist_to_init, other.dist_to_init)
    return lhs + c.b_prime * R / math.sqrt(state.m) * float(np.vdot(diff, diff))


def check_cococoercivity(c: TheoryConstants, eta: float, state: ModelState, state_i: ModelState, z_i: Example) -> float:
    """<dW, dg> - 2 eta (1 - eta rho / 2) ||dg||^2 + eps' ||dW - eta dg||^2

    with dW = W_t - W_t^(i), dg = grad l(W_t; z_i) - grad l(W_t^(i); z_i).
    """
    dW = state.weights - state_i.weights
    dg = state.grad_loss(z_i) - state_i.grad_loss(z_i)
    eps = float(theory.epsilon_prime_sequence(c, eta, max(state.dist_to_init, state_i.dist_to_init)))
    shrink = dW - eta * dg
    return (
            float(np.vdot(dW, dg))
            - 2 * eta * (1 - eta * c.rho / 2) * float(np.vdot(dg, dg))
            + eps * float(np.vdot(shrink, shrink))
    )


# ---- trajectory laws


def descent_margins(scalars: StepScalars, eta: float) -> NDArray[np.float64]:
    """L_S(W_t) - (eta/2) ||grad L_S(W_t)||^2 - L_S(W_{t+1}) for t < T"""
    risk = np.asarray(scalars.empirical_risk)
    grad = np.asarray(scalars.grad_norm)
    return risk[:-1] - 0.5 * eta * grad[:-1] ** 2 - risk[1:]


def running_average_margins(risks) -> NDArray[np.float64]:
    """(1/t) sum_{j<t} L_S(W_j) - L_S(W_t) for 1 <= t <= T"""
    risks = np.asarray(risks, dtype=np.float64)
    if len(risks) < 2:
        return np.empty(0)
    t = np.arange(1, len(risks))
    return np.cumsum(risks)[:-1] / t - risks[1:]


def gd_iterate_margins(scalars: StepScalars, eta: float) -> NDArray[np.float64]:
    """sqrt(2 eta t L_S(W_0)) - ||W_t - W_0||"""
    dist = np.asarray(scalars.dist_to_init)
    t = np.arange(len(dist))
    return np.sqrt(2 * eta * t * scalars.empirical_risk[0]) - dist


def sgd_iterate_margins(c: TheoryConstants, eta: float, T: int, dist_to_init) -> NDArray[np.float64]:
    """2 sqrt(T eta C_0) - ||W_t - W_0||"""
    return 2 * math.sqrt(T * eta * c.c_0) - np.asarray(dist_to_init, dtype=np.float64)


def uniform_stability_margins(c: TheoryConstants, n: int, eta: float, T: int, distances) -> NDArray[np.float64]:
    """uniform GD stability bound minus every measured ||W_t - W_t^(i)||"""
    return theory.gd_stability_bound_uniform(c, n, eta, T) - np.asarray(distances, dtype=np.float64)


def epsilon_margins(c: TheoryConstants, eta: float, distances) -> NDArray[np.float64]:
    """1/(t+1) - 2 eta eps_t for t <= T - 1"""
    distances = np.asarray(distances, dtype=np.float64)[:-1]
    eps = theory.epsilon_sequence(c, eta, distances)
    return 1.0 / (np.arange(len(distances)) + 1) - 2 * eta * eps


def check_one_step_recursion(
        c: TheoryConstants,
        n: int,
        eta: float,
        t: int,
        state: ModelState,
        state_i: ModelState,
        next_state: ModelState,
        next_state_i: ModelState,
        z_i: Example,
        z_prime: Example,
) -> float:
    """one-step GD recursion bound from (W_t, W_t^(i)) minus the measured ||W_{t+1} - W_{t+1}^(i)||^2"""
    d2 = state.distance(state_i) ** 2
    g = state.grad_loss(z_i)
    g_prime = state_i.grad_loss(z_prime)
    eps = float(theory.epsilon_sequence(c, eta, math.sqrt(d2)))
    bound = theory.one_step_recursion_bound(
        n, eta, t, d2, float(np.vdot(g, g)), float(np.vdot(g_prime, g_prime)), eps,
    )
    return bound - next_state.distance(next_state_i) ** 2


class TrajectoryPairChecker(CoupledObserver):
    """Checks along a coupled GD run on S and S^(i) at every step:
    weak convexity and co-coercivity at (W_t, W_t^(i)) on z_i, the one-step
    stability recursion, and curvature at sampled steps."""

    def __init__(
            self,
            c: TheoryConstants,
            eta: float,
            n: int,
            z_i: Example,
            z_prime: Example,
            report: SuiteReport,
            curvature_steps: Iterable[int] = (),
    ):
        self.c = c
        self.eta = eta
        self.n = n
        self.z_i = z_i
        self.z_prime = z_prime
        self.report = report
        self.curvature_steps = set(curvature_steps)
        self._previous: tuple[ModelState, ModelState] | None = None

    def atStep(self, t: int, state: ModelState, state_i: ModelState):
        if self._previous is not None:
            self.report["one-step-recursion"].add(check_one_step_recursion(
                self.c, self.n, self.eta, t - 1, *self._previous, state, state_i, self.z_i, self.z_prime,
            ))
        self._previous = (state, state_i)
        self.report["weak-convexity"].add(check_weak_convexity(self.c, state, state_i, self.z_i))
        self.report["weak-convexity"].add(check_weak_convexity(self.c, state_i, state, self.z_i))
        self.report["co-coercivity"].add(check_cococoercivity(self.c, self.eta, state, state_i, self.z_i))
        if t in self.curvature_steps:
            self.report["curvature-trajectory"].add(check_curvature(state, self.z_i, self.c).margin)


# ---- suite


@dataclass(frozen=True)
class CheckSettings:
    """Sizes of the property suite."""

    instances: int = 200
    """random instances for derivative oracles and dense eigenvalue checks"""
    m_dense: int = 20
    """width of the dense eigenvalue instances"""
    pairs: int = 10_000
    """random pairs for smoothness and self-bounding"""
    ball: float = 2.0
    """random points are drawn in the ball of this radius around W_0"""
    gd_runs: int = 20
    n: int = 32
    horizon: int = 200
    coupled_runs: int = 6
    trajectory_points: int = 50
    sgd_runs: int = 20
    sgd_m: int = 1024
    sgd_eta: float = 0.1
    sgd_horizon: int = 20
    uniform_n: int = 64
    uniform_m: int = 512
    uniform_eta: float = 0.1
    uniform_horizon: int = 20
    uniform_replicates: int = 8
    fd_step: float = 1e-5
    grad_rtol: float = 1e-6
    hvp_rtol: float = 1e-5


def _random_point(rng: np.random.Generator, init: ModelState, ball: float) -> ModelState:
    U = rng.standard_normal(init.init_weights.shape)
    r = ball * rng.random()
    return init.with_weights(init.init_weights + r * U / np.linalg.norm(U))


def run_property_suite(
        dist: TeacherDistribution,
        make_init: Callable[[int], ModelState],
        m: int,
        config: TrainConfig,
        settings: CheckSettings = CheckSettings(),
        master_seed: int = 0,
) -> SuiteReport:
    """Runs every checker.

    :param dist: data law
    :param make_init: W_0 factory for a hidden width
    :param m: width of the random-instance and GD trajectory checks
    :param config: step size and strict mode of the GD trajectory checks
    """
    report = SuiteReport()
    act = make_init(m).activation

    def consts(init: ModelState) -> TheoryConstants:
        return theory.TheoryConstants(act, dist.c_x, dist.c_y, dist.certified_c0(init), init.m)

    # random instances: derivative oracles, dense spectrum
    rng = np.random.default_rng(task_seed(master_seed, Role.CHECK, 0))
    init_dense = make_init(settings.m_dense)
    c_dense = consts(init_dense)
    X, y = dist.draw(rng, settings.instances)
    for k in range(settings.instances):
        z = Example(X[k], y[k])
        state = _random_point(rng, init_dense, settings.ball)
        V = rng.standard_normal(state.weights.shape)
        report["gradient-oracle"].add(settings.grad_rtol - gradient_error(state, z, settings.fd_step))
        report["hvp-oracle"].add(settings.hvp_rtol - hvp_error(state, z, V, settings.fd_step))
        report["hessian-lambda-max"].add(c_dense.rho - lambda_max_dense(state, z))
        report["curvature"].add(check_curvature(state, z, c_dense, "dense").margin)
    logger.info("random instances checked: %d", settings.instances)

    # smoothness and self-bounding on random pairs
    rng = np.random.default_rng(task_seed(master_seed, Role.CHECK, 1))
    init = make_init(m)
    c = consts(init)
    X, y = dist.draw(rng, settings.pairs)
    pairs = ((_random_point(rng, init, settings.ball), _random_point(rng, init, settings.ball)) for _ in range(settings.pairs))
    smooth, selfb = check_smoothness_selfbounding(c, pairs, (Example(X[k], y[k]) for k in range(settings.pairs)))
    report.reports[smooth.name] = smooth
    report.reports[selfb.name] = selfb
    logger.info("random pairs checked: %d", settings.pairs)

    # GD trajectory laws and curvature along GD / SGD trajectories
    stride = max(settings.horizon // max(settings.trajectory_points // 2, 1), 1)
    gd_config = TrainConfig(config.eta, settings.horizon, "gd", checkpoint_stride=stride, strict_mode=config.strict_mode)
    for r in range(settings.gd_runs):
        S = sample_dataset(dist, settings.n, task_seed(master_seed, Role.SAMPLE, 10, r), init)
        traj = gd_run(S, gd_config, init)
        report["descent"].extend(descent_margins(traj.scalars, config.eta))
        report["running-average"].extend(running_average_margins(traj.scalars.empirical_risk))
        report["gd-iterate"].extend(gd_iterate_margins(traj.scalars, config.eta))
        report["self-bounding"].extend(
            self_bounding_margin(c, state, S[t % len(S)]) for t, state in traj.checkpoints.items()
        )
        if r == 0:
            sgd_config = TrainConfig(
                config.eta, settings.horizon, "sgd", seed=task_seed(master_seed, Role.STREAM, 10, r),
                checkpoint_stride=stride, strict_mode=config.strict_mode,
            )
            sgd_traj = sgd_run(S, sgd_config, init)
            points = list(traj.checkpoints.items()) + list(sgd_traj.checkpoints.items())
            for t, state in points[:settings.trajectory_points]:
                report["curvature-trajectory"].add(check_curvature(state, S[t % len(S)], c).margin)
    logger.info("GD trajectories checked: %d", settings.gd_runs)

    # coupled GD runs: weak convexity, co-coercivity, one-step recursion
    coupled_config = TrainConfig(config.eta, settings.horizon, "gd", strict_mode=config.strict_mode)
    S = sample_dataset(dist, settings.n, task_seed(master_seed, Role.SAMPLE, 11), init)
    for r in range(settings.coupled_runs):
        i = r % len(S)
        nb = make_neighbor(S, i, task_seed(master_seed, Role.NEIGHBOR, 11, r), dist)
        checker = TrajectoryPairChecker(
            c, config.eta, len(S), S[i], nb.replacement, report,
            curvature_steps=(1, settings.horizon // 2, settings.horizon),
        )
        coupled_run(S, nb, coupled_config, init, observer=checker)
    logger.info("coupled GD runs checked: %d", settings.coupled_runs)

    # crude SGD iterate bound
    init_sgd = make_init(settings.sgd_m)
    c_sgd = consts(init_sgd)
    required = theory.threshold_sgd_iterate(c_sgd, settings.sgd_eta, settings.sgd_horizon)
    if settings.sgd_eta > c_sgd.max_step() or settings.sgd_m < required:
        report["sgd-iterate"].skipped = f"width {settings.sgd_m} below the required {required:.6g} or step too large"
    else:
        cfg = TrainConfig(settings.sgd_eta, settings.sgd_horizon, "sgd")
        for r in range(settings.sgd_runs):
            S = sample_dataset(dist, settings.n, task_seed(master_seed, Role.SAMPLE, 12, r), init_sgd)
            traj = sgd_run(S, TrainConfig(cfg.eta, cfg.horizon, "sgd", seed=task_seed(master_seed, Role.STREAM, 12, r)), init_sgd)
            report["sgd-iterate"].extend(sgd_iterate_margins(c_sgd, cfg.eta, cfg.horizon, traj.scalars.dist_to_init))

    # uniform GD stability and the eps_t condition
    init_u = make_init(settings.uniform_m)
    c_u = consts(init_u)
    n_u, eta_u, T_u = settings.uniform_n, settings.uniform_eta, settings.uniform_horizon
    required = theory.threshold_m_bound(c_u, n_u, eta_u, T_u)
    if eta_u > c_u.max_step() or settings.uniform_m < required:
        reason = f"width {settings.uniform_m} below the required {required:.6g} or step too large"
        report["uniform-stability"].skipped = reason
        report["epsilon-condition"].skipped = reason
    else:
        cfg = TrainConfig(eta_u, T_u, "gd")
        for r in range(settings.uniform_replicates):
            S = sample_dataset(dist, n_u, task_seed(master_seed, Role.SAMPLE, 13, r), init_u)
            for i in range(n_u):
                nb = make_neighbor(S, i, task_seed(master_seed, Role.NEIGHBOR, 13, r, i), dist)
                trace = coupled_run(S, nb, cfg, init_u)
                report["uniform-stability"].extend(uniform_stability_margins(c_u, n_u, eta_u, T_u, trace.distances))
                report["epsilon-condition"].extend(epsilon_margins(c_u, eta_u, trace.distances))

    logger.info("property suite: %d checks, %d violations", report.checks, report.violations)
    return report
