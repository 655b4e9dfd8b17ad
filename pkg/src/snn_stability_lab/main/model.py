"""
The shallow network

    f_W(x) = sum_k mu_k phi(<w_k, x>),     mu_k in {+1/sqrt(m), -1/sqrt(m)}

with the squared loss l(W; z) = (f_W(x) - y)^2 / 2 and its first and second derivatives.

Weight matrices are d x m (column k is w_k), norms are Frobenius norms and the
vectorization of the weight space is row-major (entry W[i, k] -> i * m + k).
Only W is trained; the output signs mu are fixed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING, Literal, Protocol, get_args

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ..exceptions import CapacityError, ConfigurationError, DomainError, ShapeError
from .activation import ActivationSpec

if TYPE_CHECKING:
    from typing import Self

__all__ = (
    "Example",
    "SupportsSamples",
    "ModelState",
    "SignPattern",
    "InitPolicy",
    "make_signs",
    "initial_weights",
    "DENSE_HESSIAN_LIMIT",
)

logger = logging.getLogger(__name__)

SignPattern = Literal["alternating", "random"]
InitPolicy = Literal["zeros", "gaussian"]

DENSE_HESSIAN_LIMIT: int = 2500
"""maximum d * m for ``ModelState.dense_hessian``"""


def _readonly(a: ArrayLike) -> NDArray[np.float64]:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Example:
    """A single sample z = (x, y)."""

    x: NDArray[np.float64]
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", _readonly(np.ravel(self.x)))
        object.__setattr__(self, "y", float(self.y))


class SupportsSamples(Protocol):
    """anything carrying an n x d input matrix ``X`` and n labels ``y`` (e.g. ``data.Dataset``)"""

    X: NDArray[np.float64]
    y: NDArray[np.float64]


def make_signs(m: int, pattern: SignPattern = "alternating", seed: int | None = None) -> NDArray[np.float64]:
    """Output signs mu_k = +-1/sqrt(m).

    ``alternating``: +, -, +, ... (balanced for even m).
    ``random``: iid fair signs drawn from `seed`.
    """
    if m < 1:
        raise ConfigurationError(f"hidden width must be >= 1, got {m}")
    if pattern not in get_args(SignPattern):
        raise ConfigurationError(f"unknown sign pattern: {pattern!r}")
    magnitude = 1.0 / math.sqrt(m)
    if pattern == "alternating":
        plus = np.arange(m) % 2 == 0
    else:
        plus = np.random.default_rng(seed).random(m) < 0.5
    return _readonly(np.where(plus, magnitude, -magnitude))


def initial_weights(
        d: int,
        m: int,
        policy: InitPolicy = "zeros",
        scale: float = 1.0,
        seed: int | None = None,
) -> NDArray[np.float64]:
    """W_0 as d x m matrix.

    ``zeros``: all zero.
    ``gaussian``: iid N(0, scale^2 / d) entries drawn from `seed`.
    """
    if d < 1 or m < 1:
        raise ConfigurationError(f"dimensions must be >= 1, got d={d}, m={m}")
    if policy == "zeros":
        return _readonly(np.zeros((d, m)))
    if policy == "gaussian":
        if not scale >= 0:
            raise ConfigurationError(f"init scale must be >= 0, got {scale!r}")
        return _readonly(np.random.default_rng(seed).normal(0.0, scale / math.sqrt(d), size=(d, m)))
    raise ConfigurationError(f"unknown init policy: {policy!r}")


@dataclass(frozen=True, eq=False)
class ModelState:
    """Immutable network state.

    :ivar weights: W, d x m
    :ivar init_weights: frozen W_0, d x m
    :ivar signs: mu, length m, entries +-1/sqrt(m)
    :ivar activation: certified activation
    """

    weights: NDArray[np.float64]
    init_weights: NDArray[np.float64]
    signs: NDArray[np.float64]
    activation: ActivationSpec

    def __post_init__(self):
        weights = _readonly(self.weights)
        init_weights = _readonly(self.init_weights)
        signs = _readonly(self.signs)
        if weights.ndim != 2:
            raise ShapeError(f"weights must be a d x m matrix, got shape {weights.shape}")
        if weights.shape != init_weights.shape:
            raise ShapeError(f"weights {weights.shape} and init_weights {init_weights.shape} differ in shape")
        m = weights.shape[1]
        if signs.shape != (m,):
            raise ShapeError(f"signs must have length m={m}, got shape {signs.shape}")
        if not np.all(np.abs(signs) == 1.0 / math.sqrt(m)):
            raise ConfigurationError(f"every output sign must have magnitude exactly 1/sqrt(m) (m={m})")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "init_weights", init_weights)
        object.__setattr__(self, "signs", signs)

    @classmethod
    def initialize(
            cls,
            d: int,
            m: int,
            activation: ActivationSpec,
            signs: SignPattern = "alternating",
            init: InitPolicy = "zeros",
            init_scale: float = 1.0,
            seed: int | None = None,
    ) -> Self:
        """fresh state with W = W_0"""
        ss = np.random.SeedSequence(seed)
        sign_seed, init_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
        w0 = initial_weights(d, m, init, init_scale, init_seed)
        return cls(w0, w0, make_signs(m, signs, sign_seed), activation)

    def with_weights(self, weights: ArrayLike) -> Self:
        """same W_0, signs and activation with new W"""
        return self.__class__(weights, self.init_weights, self.signs, self.activation)

    @property
    def d(self) -> int:
        return self.weights.shape[0]

    @property
    def m(self) -> int:
        return self.weights.shape[1]

    @cached_property
    def dist_to_init(self) -> float:
        """||W - W_0||_2"""
        return float(np.linalg.norm(self.weights - self.init_weights))

    # -- checks

    def _as_vector(self, x: ArrayLike) -> NDArray[np.float64]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.d,):
            raise ShapeError(f"input must have length d={self.d}, got shape {x.shape}")
        return x

    def _as_matrix(self, X: ArrayLike) -> NDArray[np.float64]:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ShapeError(f"inputs must be an n x {self.d} matrix, got shape {X.shape}")
        return X

    def _as_direction(self, V: ArrayLike) -> NDArray[np.float64]:
        V = np.asarray(V, dtype=np.float64)
        if V.shape != self.weights.shape:
            raise ShapeError(f"direction must have the weight shape {self.weights.shape}, got {V.shape}")
        return V

    @staticmethod
    def _unpack(z: Example | tuple) -> tuple[ArrayLike, float]:
        if isinstance(z, Example):
            return z.x, z.y
        x, y = z
        return x, float(y)

    # -- values

    def forward(self, x: ArrayLike) -> float:
        """f_W(x)"""
        x = self._as_vector(x)
        return float(self.signs @ self.activation.phi(x @ self.weights))

    def forward_batch(self, X: ArrayLike) -> NDArray[np.float64]:
        """f_W(x_i) for the rows of `X`"""
        X = self._as_matrix(X)
        return self.activation.phi(X @ self.weights) @ self.signs

    def loss(self, z: Example | tuple) -> float:
        """l(W; z) = (f_W(x) - y)^2 / 2"""
        x, y = self._unpack(z)
        r = self.forward(x) - y
        return 0.5 * r * r

    def losses(self, X: ArrayLike, y: ArrayLike) -> NDArray[np.float64]:
        r = self.forward_batch(X) - np.asarray(y, dtype=np.float64)
        return 0.5 * r * r

    def empirical_risk(self, S: SupportsSamples) -> float:
        """L_S(W) = (1/(2n)) sum_i (f_W(x_i) - y_i)^2"""
        if len(S.y) == 0:
            raise DomainError("empirical risk of an empty dataset")
        return float(np.mean(self.losses(S.X, S.y)))

    # -- first order

    def _batch_gradient(self, X: NDArray[np.float64], y: NDArray[np.float64]) -> NDArray[np.float64]:
        # shared kernel of every gradient: single examples enter as a batch of one
        pre = X @ self.weights
        r = self.activation.phi(pre) @ self.signs - y
        coeff = r[:, None] * self.signs * self.activation.phi1(pre)
        return X.T @ coeff / X.shape[0]

    def grad_loss(self, z: Example | tuple) -> NDArray[np.float64]:
        """gradient of l(W; z); column k is (f_W(x) - y) mu_k phi'(<w_k, x>) x"""
        x, y = self._unpack(z)
        x = self._as_vector(x)
        return self._batch_gradient(x[None, :], np.array([y]))

    def grad_empirical_risk(self, S: SupportsSamples) -> NDArray[np.float64]:
        """gradient of L_S(W)"""
        if len(S.y) == 0:
            raise DomainError("gradient of the empirical risk of an empty dataset")
        return self._batch_gradient(self._as_matrix(S.X), np.asarray(S.y, dtype=np.float64))

    def grad_output(self, x: ArrayLike) -> NDArray[np.float64]:
        """gradient of f_W(x); column k is mu_k phi'(<w_k, x>) x"""
        x = self._as_vector(x)
        return np.outer(x, self.signs * self.activation.phi1(x @ self.weights))

    # -- second order

    def hvp(self, z: Example | tuple, V: ArrayLike) -> NDArray[np.float64]:
        """Hessian of l(W; z) applied to the direction `V`:

            <G, V> G + (f_W(x) - y) D(V)

        with G the gradient of f_W(x) and column k of D(V) equal to
        mu_k phi''(<w_k, x>) <x, v_k> x.
        """
        x, y = self._unpack(z)
        x = self._as_vector(x)
        V = self._as_direction(V)
        pre = x @ self.weights
        G = np.outer(x, self.signs * self.activation.phi1(pre))
        r = float(self.signs @ self.activation.phi(pre)) - y
        D = np.outer(x, self.signs * self.activation.phi2(pre) * (x @ V))
        return float(np.vdot(G, V)) * G + r * D

    def dense_hessian(self, z: Example | tuple) -> NDArray[np.float64]:
        """(dm) x (dm) Hessian of l(W; z) in the row-major vectorization.

        :raises CapacityError: d * m > ``DENSE_HESSIAN_LIMIT``
        """
        if self.d * self.m > DENSE_HESSIAN_LIMIT:
            raise CapacityError(
                f"dense Hessian of size d*m={self.d * self.m} exceeds the limit of {DENSE_HESSIAN_LIMIT}"
            )
        x, y = self._unpack(z)
        x = self._as_vector(x)
        pre = x @ self.weights
        g = np.outer(x, self.signs * self.activation.phi1(pre)).ravel()
        r = float(self.signs @ self.activation.phi(pre)) - y
        H = np.outer(g, g) + np.kron(np.outer(x, x), np.diag(r * self.signs * self.activation.phi2(pre)))
        return 0.5 * (H + H.T)

    def distance(self, other: ModelState | ArrayLike) -> float:
        """||W - W'||_2"""
        w = other.weights if isinstance(other, ModelState) else np.asarray(other, dtype=np.float64)
        return float(np.linalg.norm(self.weights - w))
