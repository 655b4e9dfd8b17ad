"""
Constants, overparameterization thresholds and bound formulas for GD/SGD on the shallow network.

Notation (all norms Frobenius):

    rho      = C_x^2 (B_phi'^2 + B_phi'' B_phi + B_phi'' C_y / sqrt(m))
    b_tilde  = C_x^2 B_phi'' (B_phi' C_x + C_0)
    b_prime  = C_x^2 B_phi'' (C_x B_phi' + sqrt(2 C_0))
    R'_T     = max(2 sqrt(T eta C_0), ||W*_lambda - W_0||)

``risks`` arguments are per-step mean empirical risks E[L_S(W_j)], j = 0, 1, ...
(across-seed means); a formula needing sum_{j<t} reads the first t entries.

W*_lambda is a population object; it is replaced by ``RegularizedReference``,
a regularized GD solution on a large held-out sample. Every value derived from it
is surrogate based.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Any, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from xpropcache import PropCache

from ..exceptions import ConfigurationError
from .activation import ActivationSpec
from .data import TeacherDistribution, noise_floor, population_risk_mc, sample_dataset

if TYPE_CHECKING:
    from .data import Dataset
    from .model import ModelState

__all__ = (
    "E",
    "TheoryConstants",
    "Threshold",
    "RegularizedReference",
    "BoundReport",
    "ErrorDecomposition",
    "smoothness_constant",
    "constants",
    "threshold_m_bound",
    "threshold_m_bound_optimization",
    "threshold_m_condition_sum",
    "threshold_m_bound_sgd",
    "threshold_m_bound_sgd_2",
    "threshold_sgd_iterate",
    "overparam_thresholds",
    "self_referential_coefficient",
    "gd_generalization_bound",
    "gd_on_average_stability_bound",
    "gd_stability_bound_uniform",
    "gd_iterate_radius",
    "sgd_stability_bound",
    "sgd_generalization_bound",
    "r_t_prime",
    "gd_iterate_bound_RT",
    "gd_optimization_bound",
    "gd_risk_sum_bound",
    "sgd_iterate_bound_delta",
    "sgd_optimization_bound",
    "sgd_risk_sum_bound",
    "epsilon_sequence",
    "epsilon_prime_sequence",
    "one_step_recursion_bound",
    "gd_excess_risk_rate",
    "sgd_excess_risk_rate",
    "build_regularized_reference",
    "check_ws_lower",
    "error_decomposition",
    "bound_report",
    "SURROGATE_FLOOR",
)

logger = logging.getLogger(__name__)

E: float = math.e

SURROGATE_FLOOR: int = 10_000
"""smallest held-out sample of the regularized reference"""


def smoothness_constant(activation: ActivationSpec, c_x: float, c_y: float, m: int) -> float:
    """rho = C_x^2 (B_phi'^2 + B_phi'' B_phi + B_phi'' C_y / sqrt(m))"""
    return c_x ** 2 * (
            activation.b_phi1 ** 2
            + activation.b_phi2 * activation.b_phi
            + activation.b_phi2 * c_y / math.sqrt(m)
    )


@PropCache
class TheoryConstants:
    """Derived constants of one experiment.

    `n`, `eta` and `horizon` are optional context (used by ``bound_report``).
    """

    activation: ActivationSpec
    c_x: float
    c_y: float
    c_0: float
    """certified bound on l(W_0; z)"""
    m: int
    d: int | None
    n: int | None
    eta: float | None
    horizon: int | None

    def __init__(
            self,
            activation: ActivationSpec,
            c_x: float,
            c_y: float,
            c_0: float,
            m: int,
            d: int | None = None,
            n: int | None = None,
            eta: float | None = None,
            horizon: int | None = None,
    ):
        for name, value in (("c_x", c_x), ("c_y", c_y), ("c_0", c_0), ("m", m)):
            if not (math.isfinite(value) and value > 0):
                raise ConfigurationError(f"theory constant {name} must be finite and > 0, got {value!r}")
        self.activation = activation
        self.c_x = float(c_x)
        self.c_y = float(c_y)
        self.c_0 = float(c_0)
        self.m = int(m)
        self.d = d
        self.n = n
        self.eta = eta
        self.horizon = horizon

    @PropCache.cached_property
    def rho(self) -> float:
        """smoothness constant of l(., z)"""
        return smoothness_constant(self.activation, self.c_x, self.c_y, self.m)

    @PropCache.cached_property
    def rho_limit(self) -> float:
        """rho for m -> inf"""
        a = self.activation
        return self.c_x ** 2 * (a.b_phi1 ** 2 + a.b_phi2 * a.b_phi)

    @PropCache.cached_property
    def b_tilde(self) -> float:
        a = self.activation
        return self.c_x ** 2 * a.b_phi2 * (a.b_phi1 * self.c_x + self.c_0)

    @PropCache.cached_property
    def b_prime(self) -> float:
        a = self.activation
        return self.c_x ** 2 * a.b_phi2 * (self.c_x * a.b_phi1 + math.sqrt(2 * self.c_0))

    @property
    def sqrt_m(self) -> float:
        return math.sqrt(self.m)

    def max_step(self) -> float:
        """1 / (2 rho)"""
        return 1.0 / (2.0 * self.rho)

    def to_dict(self) -> dict[str, Any]:
        return {
            "activation": self.activation.kind,
            "b_phi": self.activation.b_phi,
            "b_phi1": self.activation.b_phi1,
            "b_phi2": self.activation.b_phi2,
            "c_x": self.c_x,
            "c_y": self.c_y,
            "c_0": self.c_0,
            "m": self.m,
            "d": self.d,
            "n": self.n,
            "eta": self.eta,
            "horizon": self.horizon,
            "rho": self.rho,
            "b_tilde": self.b_tilde,
            "b_prime": self.b_prime,
        }


def constants(
        activation: ActivationSpec,
        data_bounds: tuple[float, float, float],
        m: int,
        d: int | None = None,
        n: int | None = None,
        eta: float | None = None,
        horizon: int | None = None,
) -> TheoryConstants:
    """TheoryConstants from the certified activation and data bounds (c_x, c_y, c_0)"""
    c_x, c_y, c_0 = data_bounds
    return TheoryConstants(activation, c_x, c_y, c_0, m, d, n, eta, horizon)


def _risk_sum(risks: ArrayLike, count: int, formula: str) -> float:
    risks = np.asarray(risks, dtype=np.float64)
    if count < 0:
        raise ConfigurationError(f"{formula}: negative step count {count}")
    if len(risks) < count:
        raise ConfigurationError(f"{formula}: needs {count} per-step risks, got {len(risks)}")
    return float(np.sum(risks[:count]))


# ---- thresholds on the hidden width


def threshold_m_bound(c: TheoryConstants, n: int, eta: float, T: int) -> float:
    """width required by the GD generalization bound"""
    a = c.activation
    inner = 2.0 / n * math.sqrt(c.rho * (c.rho * eta * T + 2)) * a.b_phi1 * c.c_x * (1 + eta * c.rho) * eta * E * T + 1
    return 32 * c.c_0 * eta ** 2 * T ** 2 * c.c_x ** 4 * a.b_phi2 ** 2 * inner ** 2


def threshold_m_bound_optimization(c: TheoryConstants, eta: float, T: int, dist: float) -> float:
    """width required by the GD iterate bound R_T"""
    return 4 * c.b_tilde ** 2 * (eta * T) ** 2 * (math.sqrt(2 * eta * T * c.c_0) + dist) ** 2


def _rt_coefficient(c: TheoryConstants, n: int, eta: float, T: int) -> float:
    return 8 * E ** 2 * c.rho ** 2 * eta ** 3 * T ** 2 / n ** 2 + 8 * E * eta ** 2 * T * c.rho / n


def threshold_m_condition_sum(c: TheoryConstants, n: int, eta: float, T: int, dist: float) -> float:
    """width required by the GD excess risk bound"""
    return 4 * _rt_coefficient(c, n, eta, T) ** 2 * (c.b_tilde * T * (dist + math.sqrt(2 * eta * T * c.c_0))) ** 2


def threshold_m_bound_sgd(c: TheoryConstants, eta: float, T: int, r_prime: float) -> float:
    """width required by the SGD stability bound"""
    return 16 * eta ** 2 * T ** 2 * (c.b_prime * r_prime) ** 2 * (1 + 2 * eta * c.rho) ** 2


def threshold_m_bound_sgd_2(c: TheoryConstants, n: int, eta: float, T: int, r_prime: float) -> float:
    """width required by the SGD excess risk bound"""
    growth = (
            1
            + 4 * E ** 2 * eta * c.rho * T * (1 + T / n) / n
            + 4 * E * math.sqrt(T) * math.sqrt(1 + T / n) / math.sqrt(n)
    )
    return max(
        threshold_m_bound_sgd(c, eta, T, r_prime),
        4 * (8 * c.b_prime * T * c.rho * eta ** 2 * r_prime) ** 2 * growth ** 2,
    )


def threshold_sgd_iterate(c: TheoryConstants, eta: float, T: int) -> float:
    """width required by the crude SGD iterate bound ||W_t - W_0|| <= 2 sqrt(T eta C_0)"""
    return 64 * c.c_0 * c.b_prime ** 2 * (T * eta) ** 3


@dataclass(frozen=True)
class Threshold:
    name: str
    required_m: float
    configured_m: int

    @property
    def satisfied(self) -> bool:
        return self.configured_m >= self.required_m

    def row(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "required_m": self.required_m,
            "configured_m": self.configured_m,
            "satisfied": str(self.satisfied).lower(),
        }


def overparam_thresholds(
        c: TheoryConstants,
        n: int,
        eta: float,
        T: int,
        ref: RegularizedReference | None,
) -> dict[str, Threshold]:
    """All width thresholds against the configured m.

    :raises ConfigurationError: `ref` missing (its distance to W_0 enters three thresholds)
    """
    if ref is None:
        raise ConfigurationError("overparameterization thresholds need a regularized reference")
    dist = ref.dist_to_init
    rp = r_t_prime(c, eta, T, ref)
    values = {
        "m-bound": threshold_m_bound(c, n, eta, T),
        "m-bound-optimization": threshold_m_bound_optimization(c, eta, T, dist),
        "m-condition-sum": threshold_m_condition_sum(c, n, eta, T, dist),
        "m-bound-sgd": threshold_m_bound_sgd(c, eta, T, rp),
        "m-bound-sgd-2": threshold_m_bound_sgd_2(c, n, eta, T, rp),
        "sgd-iterate": threshold_sgd_iterate(c, eta, T),
    }
    return {name: Threshold(name, value, c.m) for name, value in values.items()}


def self_referential_coefficient(c: TheoryConstants, n: int, eta: float, T: int, dist: float) -> float:
    """Coefficient of the risk sum on the right of the GD risk-sum recursion;
    at most 1/2 whenever m satisfies ``threshold_m_condition_sum``."""
    return _rt_coefficient(c, n, eta, T) * c.b_tilde * T * (dist + math.sqrt(2 * eta * T * c.c_0)) / c.sqrt_m


# ---- GD


def gd_generalization_bound(c: TheoryConstants, n: int, eta: float, t: int, risks: ArrayLike) -> float:
    """(4 e^2 eta^2 rho^2 t / n^2 + 4 e eta rho / n) sum_{j<t} E[L_S(W_j)]"""
    s = _risk_sum(risks, t, "gd_generalization_bound")
    return (4 * E ** 2 * eta ** 2 * c.rho ** 2 * t / n ** 2 + 4 * E * eta * c.rho / n) * s


def gd_on_average_stability_bound(c: TheoryConstants, n: int, eta: float, t: int, risks: ArrayLike) -> float:
    """Bound on E ||W_{t+1} - W_{t+1}^(i)||^2 averaged over i:

        8 e^2 eta^2 rho (1 + t) / n^2 * sum_{j<=t} E[L_S(W_j)]
    """
    s = _risk_sum(risks, t + 1, "gd_on_average_stability_bound")
    return 8 * E ** 2 * eta ** 2 * c.rho * (1 + t) / n ** 2 * s


def gd_stability_bound_uniform(c: TheoryConstants, n: int, eta: float, T: int) -> float:
    """per-realization bound on max_{t<=T} ||W_t - W_t^(i)||: 2 eta e T sqrt(2 C_0 rho (rho eta T + 2)) / n"""
    return 2 * eta * E * T * math.sqrt(2 * c.c_0 * c.rho * (c.rho * eta * T + 2)) / n


def gd_iterate_radius(c: TheoryConstants, eta: float, t: int) -> float:
    """a-priori GD iterate radius sqrt(2 eta t C_0) >= ||W_t - W_0||"""
    return math.sqrt(2 * eta * t * c.c_0)


def r_t_prime(c: TheoryConstants, eta: float, T: int, ref: RegularizedReference) -> float:
    return max(2 * math.sqrt(T * eta * c.c_0), ref.dist_to_init)


def _require_ref(ref: RegularizedReference | None, formula: str) -> RegularizedReference:
    if ref is None:
        raise ConfigurationError(f"{formula} needs a regularized reference")
    return ref


def gd_iterate_bound_RT(
        c: TheoryConstants,
        n: int,
        eta: float,
        T: int,
        risks: ArrayLike,
        ref: RegularizedReference | None,
) -> float:
    """R_T >= E ||W_t - W*_lambda||^2 for t <= T"""
    ref = _require_ref(ref, "gd_iterate_bound_RT")
    return _rt_coefficient(c, n, eta, T) * _risk_sum(risks, T, "gd_iterate_bound_RT") + 2 * ref.dist_to_init ** 2


def gd_optimization_bound(
        c: TheoryConstants,
        n: int,
        eta: float,
        T: int,
        risks: ArrayLike,
        ref: RegularizedReference | None,
) -> float:
    """Bound on E[L_S(W_T)]:

        L(W*_lambda) + lambda ||W*_lambda - W_0||^2 + b_tilde R_T (||W*_lambda - W_0|| + sqrt(2 eta T C_0)) / sqrt(m)
    """
    ref = _require_ref(ref, "gd_optimization_bound")
    rt = gd_iterate_bound_RT(c, n, eta, T, risks, ref)
    dist = ref.dist_to_init
    return (
            ref.surrogate_risk
            + ref.lam * dist ** 2
            + c.b_tilde * rt * (dist + math.sqrt(2 * eta * T * c.c_0)) / c.sqrt_m
    )


def gd_risk_sum_bound(c: TheoryConstants, eta: float, T: int, ref: RegularizedReference | None) -> float:
    """Bound on sum_{s<T} E[L_S(W_s)] for GD"""
    ref = _require_ref(ref, "gd_risk_sum_bound")
    dist = ref.dist_to_init
    return (
            2 * T * ref.surrogate_risk
            + 2 * dist ** 2 / eta
            + 4 * c.b_tilde * T * (dist + math.sqrt(2 * eta * T * c.c_0)) * dist ** 2 / c.sqrt_m
    )


# ---- SGD


def sgd_stability_bound(c: TheoryConstants, n: int, eta: float, t: int, risks: ArrayLike) -> float:
    """Bound on (1/n) sum_i E ||W_{t+1} - W_{t+1}^(i)||^2:

        8 e^2 rho (1 + t/n) eta^2 / n * sum_{j<=t} E[L_S(W_j)]
    """
    s = _risk_sum(risks, t + 1, "sgd_stability_bound")
    return 8 * E ** 2 * c.rho * (1 + t / n) * eta ** 2 / n * s


def sgd_generalization_bound(
        c: TheoryConstants,
        n: int,
        eta: float,
        t: int,
        risks: ArrayLike,
        last_risk: float | None = None,
) -> float:
    """Bound on E[L(W_t) - L_S(W_t)]:

        4 e^2 rho^2 (1 + t/n) eta^2 / n * S + 4 e rho eta sqrt((1 + t/n) E[L_S(W_t)] S / n),
        S = sum_{j<=t} E[L_S(W_j)]

    `last_risk` defaults to ``risks[t]``.
    """
    s = _risk_sum(risks, t + 1, "sgd_generalization_bound")
    if last_risk is None:
        last_risk = float(np.asarray(risks, dtype=np.float64)[t])
    growth = 1 + t / n
    return (
            4 * E ** 2 * c.rho ** 2 * growth * eta ** 2 / n * s
            + 4 * E * c.rho * eta * math.sqrt(max(growth * last_risk * s / n, 0.0))
    )


def sgd_iterate_bound_delta(
        c: TheoryConstants,
        n: int,
        eta: float,
        t: int,
        risks: ArrayLike,
        ref: RegularizedReference | None,
) -> float:
    """Bound on Delta_{t+1} = max_{j<=t+1} E ||W_j - W*_lambda||^2 for SGD"""
    ref = _require_ref(ref, "sgd_iterate_bound_delta")
    s = _risk_sum(risks, t + 1, "sgd_iterate_bound_delta")
    growth_sum = (t + 1) + t * (t + 1) / (2 * n)
    factor = (
            1
            + 4 * E ** 2 * eta * c.rho * growth_sum / n
            + 4 * E * math.sqrt(t + 1) * math.sqrt(1 + t / n) / math.sqrt(n)
    )
    return 2 * ref.dist_to_init ** 2 + 4 * c.rho * eta ** 2 * factor * s


def sgd_optimization_bound(
        c: TheoryConstants,
        eta: float,
        T: int,
        delta_T: float,
        risks: ArrayLike,
        ref: RegularizedReference | None,
) -> float:
    """Bound on 2 eta sum_{t<T} E[L_S(W_t) - L_S(W*_lambda)]:

        ||W_0 - W*_lambda||^2 + 2 rho eta^2 sum_{t<T} E[L_S(W_t)] + 2 T eta b' R'_T Delta_T / sqrt(m)
    """
    ref = _require_ref(ref, "sgd_optimization_bound")
    s = _risk_sum(risks, T, "sgd_optimization_bound")
    return (
            ref.dist_to_init ** 2
            + 2 * c.rho * eta ** 2 * s
            + 2 * T * eta * c.b_prime * r_t_prime(c, eta, T, ref) * delta_T / c.sqrt_m
    )


def sgd_risk_sum_bound(c: TheoryConstants, eta: float, T: int, ref: RegularizedReference | None) -> float:
    """Bound on sum_{t<T} E[L_S(W_t)] for SGD: 4 T L(W*) + 2 (1/eta + 4 b' T R'_T / sqrt(m)) ||W_0 - W*||^2"""
    ref = _require_ref(ref, "sgd_risk_sum_bound")
    rp = r_t_prime(c, eta, T, ref)
    return 4 * T * ref.surrogate_risk + 2 * (1 / eta + 4 * c.b_prime * T * rp / c.sqrt_m) * ref.dist_to_init ** 2


# ---- stability diagnostics


def epsilon_sequence(c: TheoryConstants, eta: float, distances: ArrayLike) -> NDArray[np.float64]:
    """eps_t = C_x^2 B_phi'' / sqrt(m) (B_phi' C_x (1 + eta rho) ||W_t - W_t^(i)|| + 2 sqrt(2 C_0))"""
    a = c.activation
    distances = np.asarray(distances, dtype=np.float64)
    return c.c_x ** 2 * a.b_phi2 / c.sqrt_m * (
            a.b_phi1 * c.c_x * (1 + eta * c.rho) * distances + 2 * math.sqrt(2 * c.c_0)
    )


def epsilon_prime_sequence(c: TheoryConstants, eta: float, radii: ArrayLike) -> NDArray[np.float64]:
    """eps'_t = C_x^2 B_phi'' / sqrt(m) (B_phi' C_x (1 + 2 eta rho) max(||W_t - W_0||, ||W_t^(i) - W_0||) + sqrt(2 C_0))"""
    a = c.activation
    radii = np.asarray(radii, dtype=np.float64)
    return c.c_x ** 2 * a.b_phi2 / c.sqrt_m * (
            a.b_phi1 * c.c_x * (1 + 2 * eta * c.rho) * radii + math.sqrt(2 * c.c_0)
    )


def one_step_recursion_bound(
        n: int,
        eta: float,
        t: int,
        distance_sq: float,
        grad_sq: float,
        grad_sq_prime: float,
        epsilon_t: float,
        p: float | None = None,
) -> float:
    """Bound on ||W_{t+1} - W_{t+1}^(i)||^2 for GD from step t:

        (1 + p) / (1 - 2 eta eps_t) ||W_t - W_t^(i)||^2 + 2 (1 + 1/p) eta^2 / n^2 (g_i + g'_i)

    with g_i = ||grad l(W_t; z_i)||^2, g'_i = ||grad l(W_t^(i); z'_i)||^2 and p = 1/t (1 at t = 0).
    Returns inf when 2 eta eps_t >= 1.
    """
    if p is None:
        p = 1.0 / t if t else 1.0
    denominator = 1 - 2 * eta * epsilon_t
    if denominator <= 0:
        return math.inf
    return (1 + p) / denominator * distance_sq + 2 * (1 + 1 / p) * eta ** 2 / n ** 2 * (grad_sq + grad_sq_prime)


def gd_excess_risk_rate(eta: float, T: int, n: int, best_risk: float, regularity: float) -> float:
    """eta T L(W*) / n + Lambda (implied constants set to one)"""
    return eta * T * best_risk / n + regularity


def sgd_excess_risk_rate(eta: float, best_risk: float, regularity: float) -> float:
    """Lambda + eta L(W*) (implied constants set to one)"""
    return regularity + eta * best_risk


# ---- regularized reference


@dataclass(frozen=True, eq=False)
class RegularizedReference:
    """Numerical surrogate of W*_lambda = argmin L(W) + lambda ||W - W_0||^2.

    :ivar lam: regularization level (canonically 1/(eta T))
    :ivar weights: surrogate minimizer
    :ivar surrogate_risk: Monte-Carlo L(W*_lambda)
    :ivar surrogate_risk_se: its standard error
    :ivar dist_to_init: ||W*_lambda - W_0||
    :ivar best_risk: surrogate of L(W*) (noise floor of the teacher)
    :ivar regularity_value: L(W*_lambda) - L(W*) + lambda ||W*_lambda - W_0||^2
    :ivar converged: gradient tolerance reached within the step budget
    """

    lam: float
    weights: ModelState
    surrogate_risk: float
    surrogate_risk_se: float
    dist_to_init: float
    best_risk: float
    regularity_value: float
    converged: bool
    steps: int
    grad_norm: float
    objective: float

    @classmethod
    def at_distance(cls, lam: float, weights: ModelState, surrogate_risk: float = 0.0) -> RegularizedReference:
        """reference fixed by hand (e.g. a planted teacher in realizable runs)"""
        dist = weights.dist_to_init
        return cls(
            lam, weights, surrogate_risk, 0.0, dist, 0.0,
            surrogate_risk + lam * dist ** 2, True, 0, 0.0, surrogate_risk + lam * dist ** 2,
        )

    def summary(self) -> dict[str, Any]:
        return {
            "lambda": self.lam,
            "surrogate_risk": self.surrogate_risk,
            "surrogate_risk_se": self.surrogate_risk_se,
            "dist_to_init": self.dist_to_init,
            "best_risk": self.best_risk,
            "regularity_value": self.regularity_value,
            "converged": self.converged,
            "steps": self.steps,
            "grad_norm": self.grad_norm,
            "objective": self.objective,
        }


def build_regularized_reference(
        dist: TeacherDistribution,
        lam: float,
        init: ModelState,
        surrogate_n: int = 20_000,
        steps: int = 5_000,
        seed: int | None = None,
        n_mc: int = 100_000,
        tol: float = 1e-6,
) -> RegularizedReference:
    """GD with step 1/(rho + 2 lambda) on L_hat(W) + lambda ||W - W_0||^2 over a fresh sample of
    `surrogate_n` examples, started at W_0, until the gradient norm is <= `tol` or `steps` are spent.

    L(W*) is replaced by the noise floor of `dist` (zero in the realizable case).

    :raises ConfigurationError: lambda <= 0, surrogate_n < ``SURROGATE_FLOOR``
    """
    if not lam > 0:
        raise ConfigurationError(f"regularization level must be > 0, got {lam!r}")
    if surrogate_n < SURROGATE_FLOOR:
        raise ConfigurationError(f"surrogate_n must be >= {SURROGATE_FLOOR}, got {surrogate_n}")
    ss = np.random.SeedSequence(seed)
    sample_seed, mc_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    sample = sample_dataset(dist, surrogate_n, sample_seed)

    rho = smoothness_constant(init.activation, dist.c_x, dist.c_y, init.m)
    step = 1.0 / (rho + 2 * lam)
    w0 = init.init_weights
    state = init.with_weights(w0)
    converged = False
    grad_norm = math.inf
    k = 0
    for k in range(steps + 1):
        grad = state.grad_empirical_risk(sample) + 2 * lam * (state.weights - w0)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm <= tol:
            converged = True
            break
        if k == steps:
            break
        state = state.with_weights(state.weights - step * grad)

    objective = state.empirical_risk(sample) + lam * state.dist_to_init ** 2
    if converged:
        logger.info("regularized reference (lambda=%g) converged after %d steps, objective %.6g", lam, k, objective)
    else:
        logger.warning(
            "regularized reference (lambda=%g) not converged after %d steps (gradient norm %.3g); "
            "dependent bounds are approximate", lam, steps, grad_norm,
        )
    risk, se = population_risk_mc(state, dist, n_mc, mc_seed)
    best = noise_floor(dist)
    dist_to_init = state.dist_to_init
    return RegularizedReference(
        lam=lam,
        weights=state,
        surrogate_risk=risk,
        surrogate_risk_se=se,
        dist_to_init=dist_to_init,
        best_risk=best,
        regularity_value=risk - best + lam * dist_to_init ** 2,
        converged=converged,
        steps=k,
        grad_norm=grad_norm,
        objective=objective,
    )


def check_ws_lower(
        population_risks: ArrayLike,
        ref: RegularizedReference,
        std_errors: ArrayLike | None = None,
) -> bool:
    """E[L(W_s)] >= L(W*_lambda) for every s < T, tested with 2 standard errors of slack on both sides"""
    risks = np.asarray(population_risks, dtype=np.float64)
    se = np.zeros_like(risks) if std_errors is None else np.asarray(std_errors, dtype=np.float64)
    holds = bool(np.all(risks + 2 * se >= ref.surrogate_risk - 2 * ref.surrogate_risk_se))
    if not holds:
        logger.warning("population risk of an iterate falls below L(W*_lambda); optimization bounds are conditional")
    return holds


@dataclass(frozen=True)
class ErrorDecomposition:
    """excess risk = generalization gap + optimization error + regularity value"""

    generalization_gap: float
    generalization_gap_se: float
    optimization_error: float
    regularity_value: float

    @property
    def excess_risk(self) -> float:
        return self.generalization_gap + self.optimization_error + self.regularity_value


def error_decomposition(
        state: ModelState,
        S: Dataset,
        dist: TeacherDistribution,
        ref: RegularizedReference,
        n_mc: int = 100_000,
        seed: int | None = None,
) -> ErrorDecomposition:
    """The three terms of the excess risk of a trained model, with L_S(W*_lambda) measured on `S`."""
    risk, se = population_risk_mc(state, dist, n_mc, seed)
    train = state.empirical_risk(S)
    ref_train = ref.weights.empirical_risk(S)
    return ErrorDecomposition(
        generalization_gap=risk - train,
        generalization_gap_se=se,
        optimization_error=train - ref_train - ref.lam * ref.dist_to_init ** 2,
        regularity_value=ref.regularity_value,
    )


# ---- report


@dataclass
class BoundReport:
    """All thresholds and bound values of one configuration (surrogate based)."""

    constants: dict[str, Any]
    thresholds: dict[str, Threshold]
    gen_bound_gd: float
    gen_bound_gd_on_avg: float
    stab_bound_gd_uniform: float
    stab_bound_sgd: float
    gen_bound_sgd: float
    R_T: float
    R_T_prime: float
    opt_bound_gd: float
    opt_bound_sgd: float
    risk_sum_bound_gd: float
    risk_sum_bound_sgd: float
    delta_bound_sgd: float
    epsilon_t: list[float]
    epsilon_t_prime: list[float]
    self_referential_coefficient: float
    reference: dict[str, Any]
    risks_measured: bool
    assumptions_violated: bool = False
    conditional: bool = False
    approximate: bool = False
    surrogate_based: bool = True
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["thresholds"] = {name: th.row() | {"satisfied": th.satisfied} for name, th in self.thresholds.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True)

    def threshold_rows(self) -> list[dict[str, Any]]:
        return [th.row() for th in self.thresholds.values()]


def bound_report(
        c: TheoryConstants,
        n: int,
        eta: float,
        T: int,
        ref: RegularizedReference,
        risks: Sequence[float] | None = None,
        distances: Sequence[float] | None = None,
        radii: Sequence[float] | None = None,
        delta_T: float | None = None,
        assumptions_violated: bool = False,
        ws_lower: bool = True,
) -> BoundReport:
    """Evaluates every formula for one configuration.

    Without measured `risks` the a-priori value C_0 >= L_S(W_0) >= L_S(W_j) (GD descent) is used for every step.
    Without measured coupled `distances` the uniform GD stability bound at step t is used for eps_t,
    without `radii` the GD iterate radius sqrt(2 eta t C_0) for eps'_t.
    Without `delta_T` the SGD iterate bound at T - 1 is used.
    """
    notes: list[str] = []
    measured = risks is not None
    if risks is None:
        risks = [c.c_0] * (T + 1)
        notes.append("risks: a-priori value C_0 per step")
    risks = np.asarray(risks, dtype=np.float64)
    if len(risks) < T + 1:
        raise ConfigurationError(f"bound report needs {T + 1} per-step risks (steps 0..T), got {len(risks)}")
    steps = np.arange(T + 1)
    if distances is None:
        distances = [gd_stability_bound_uniform(c, n, eta, int(t)) for t in steps]
        notes.append("eps_t: uniform GD stability bound as distance")
    if radii is None:
        radii = [gd_iterate_radius(c, eta, int(t)) for t in steps]
        notes.append("eps'_t: GD iterate radius")
    if delta_T is None:
        delta_T = sgd_iterate_bound_delta(c, n, eta, max(T - 1, 0), risks, ref)
        notes.append("Delta_T: SGD iterate bound")
    t_last = max(T - 1, 0)
    return BoundReport(
        constants=c.to_dict(),
        thresholds=overparam_thresholds(c, n, eta, T, ref),
        gen_bound_gd=gd_generalization_bound(c, n, eta, T, risks),
        gen_bound_gd_on_avg=gd_on_average_stability_bound(c, n, eta, t_last, risks) if T else 0.0,
        stab_bound_gd_uniform=gd_stability_bound_uniform(c, n, eta, T),
        stab_bound_sgd=sgd_stability_bound(c, n, eta, t_last, risks) if T else 0.0,
        gen_bound_sgd=sgd_generalization_bound(c, n, eta, T, risks),
        R_T=gd_iterate_bound_RT(c, n, eta, T, risks, ref),
        R_T_prime=r_t_prime(c, eta, T, ref),
        opt_bound_gd=gd_optimization_bound(c, n, eta, T, risks, ref),
        opt_bound_sgd=sgd_optimization_bound(c, eta, T, delta_T, risks, ref),
        risk_sum_bound_gd=gd_risk_sum_bound(c, eta, T, ref),
        risk_sum_bound_sgd=sgd_risk_sum_bound(c, eta, T, ref),
        delta_bound_sgd=float(delta_T),
        epsilon_t=[float(v) for v in epsilon_sequence(c, eta, distances)],
        epsilon_t_prime=[float(v) for v in epsilon_prime_sequence(c, eta, radii)],
        self_referential_coefficient=self_referential_coefficient(c, n, eta, T, ref.dist_to_init),
        reference=ref.summary(),
        risks_measured=measured,
        assumptions_violated=assumptions_violated or eta > c.max_step(),
        conditional=not ws_lower,
        approximate=not ref.converged,
        notes=notes,
    )
