"""
Synthetic teacher-network regression data.

Inputs are drawn from a law supported in the ball ||x||_2 <= C_x, labels are the
teacher output plus Gaussian noise, clipped to [-C_y, C_y]. Every dataset is a
pure function of (distribution, n, seed). Example indices are 0-based.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING, Literal, get_args

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ..exceptions import ConfigurationError, DataBoundError, DomainError, ShapeError
from .activation import ActivationSpec
from .model import Example, ModelState, SignPattern

if TYPE_CHECKING:
    from typing import Self

__all__ = (
    "InputLaw",
    "TeacherDistribution",
    "Dataset",
    "NeighborSet",
    "make_teacher",
    "planted_teacher",
    "sample_dataset",
    "make_neighbor",
    "population_risk_mc",
    "noise_floor",
    "MC_FLOOR",
    "MC_DEFAULT",
    "BOUND_RTOL",
)

logger = logging.getLogger(__name__)

InputLaw = Literal["sphere", "gaussian"]

MC_FLOOR: int = 1000
"""smallest admissible Monte-Carlo sample"""
MC_DEFAULT: int = 100_000
"""default Monte-Carlo sample"""
BOUND_RTOL: float = 1e-12
"""relative slack of the data-bound validation (rounding of the sphere projection)"""

_MC_CHUNK = 8192


@dataclass(frozen=True, eq=False)
class TeacherDistribution:
    """Data law P: x from `input_law`, y = f_teacher(x) + noise_std * xi, xi ~ N(0, 1).

    ``sphere``
        uniform on the sphere of radius `radius` (default C_x).
    ``gaussian``
        N(0, radius^2 / d * I), rows outside the ball of radius `radius` are projected onto it.

    With `clip_labels` the labels are clipped to [-c_y, c_y] after the noise is added.
    """

    teacher: ModelState
    """ground-truth network"""
    input_law: InputLaw = "sphere"
    noise_std: float = 0.0
    c_x: float = 1.0
    """certified input bound"""
    c_y: float = 1.0
    """certified label bound"""
    radius: float | None = None
    """input radius, at most c_x (default c_x)"""
    clip_labels: bool = True

    def __post_init__(self):
        if self.input_law not in get_args(InputLaw):
            raise ConfigurationError(f"unknown input law: {self.input_law!r} (supported: {', '.join(get_args(InputLaw))})")
        if not (self.c_x > 0 and self.c_y > 0):
            raise ConfigurationError(f"data bounds must be > 0, got c_x={self.c_x!r}, c_y={self.c_y!r}")
        if not self.noise_std >= 0:
            raise ConfigurationError(f"noise_std must be >= 0, got {self.noise_std!r}")
        if self.radius is None:
            object.__setattr__(self, "radius", float(self.c_x))
        elif not 0 < self.radius <= self.c_x:
            raise ConfigurationError(f"input radius must lie in (0, c_x={self.c_x!r}], got {self.radius!r}")

    @property
    def d(self) -> int:
        return self.teacher.d

    @property
    def realizable(self) -> bool:
        """noise-free labels (L(W*) = 0 with W* = teacher)"""
        return self.noise_std == 0

    def draw_inputs(self, rng: np.random.Generator, n: int) -> NDArray[np.float64]:
        d = self.d
        if self.input_law == "sphere":
            g = rng.standard_normal((n, d))
            norms = np.linalg.norm(g, axis=1, keepdims=True)
            return self.radius * g / norms
        X = rng.normal(0.0, self.radius / math.sqrt(d), size=(n, d))
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        return np.where(norms > self.radius, X * (self.radius / norms), X)

    def label(self, rng: np.random.Generator, X: NDArray[np.float64]) -> NDArray[np.float64]:
        y = self.teacher.forward_batch(X)
        if self.noise_std:
            y = y + self.noise_std * rng.standard_normal(len(y))
        if self.clip_labels:
            clipped = np.clip(y, -self.c_y, self.c_y)
            if self.realizable and np.any(clipped != y):
                logger.warning(
                    "teacher output exceeds c_y=%g on %d inputs; clipped labels break realizability",
                    self.c_y, int(np.count_nonzero(clipped != y)),
                )
            y = clipped
        return y

    def draw(self, rng: np.random.Generator, n: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """n fresh samples (X, y)"""
        X = self.draw_inputs(rng, n)
        return X, self.label(rng, X)

    def certified_c0(self, init: ModelState) -> float:
        """Upper bound on l(W_0; z) over every admissible z:

            (|sum_k mu_k phi(0)| + C_x B_phi' sum_k |mu_k| ||w_0,k||_2 + C_y)^2 / 2
        """
        act = init.activation
        offset = abs(float(init.signs @ act.phi(np.zeros(init.m))))
        spread = self.c_x * act.b_phi1 * float(np.abs(init.signs) @ np.linalg.norm(init.init_weights, axis=0))
        return 0.5 * (offset + spread + self.c_y) ** 2


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered sample S = {z_0, ..., z_{n-1}} with validated bounds.

    `c_0` is max_i l(W_0; z_i) for the W_0 given at construction (None without one).
    """

    X: NDArray[np.float64]
    y: NDArray[np.float64]
    c_x: float
    c_y: float
    c_0: float | None = None
    seed: int | None = None

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        y = np.array(self.y, dtype=np.float64).ravel()
        if X.ndim != 2:
            raise ShapeError(f"inputs must be an n x d matrix, got shape {X.shape}")
        if len(X) != len(y):
            raise ShapeError(f"{len(X)} inputs but {len(y)} labels")
        if len(y) == 0:
            raise DomainError("a dataset needs at least one example")
        norms = np.linalg.norm(X, axis=1)
        bad = np.flatnonzero(
            (norms > self.c_x * (1 + BOUND_RTOL)) | (np.abs(y) > self.c_y) | ~np.isfinite(norms) | ~np.isfinite(y)
        )
        if len(bad):
            i = int(bad[0])
            raise DataBoundError(i, float(norms[i]), float(y[i]), self.c_x, self.c_y)
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def build(
            cls,
            X: ArrayLike,
            y: ArrayLike,
            c_x: float,
            c_y: float,
            init: ModelState | None = None,
            seed: int | None = None,
    ) -> Self:
        """validates the bounds and computes c_0 from `init`"""
        c_0 = None
        if init is not None:
            c_0 = float(np.max(init.with_weights(init.init_weights).losses(X, y)))
        return cls(X, y, c_x, c_y, c_0, seed)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def bounds(self) -> tuple[float, float, float | None]:
        """(c_x, c_y, c_0)"""
        return self.c_x, self.c_y, self.c_0

    def __getitem__(self, i: int) -> Example:
        return Example(self.X[i], self.y[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def _index(self, i: int) -> int:
        if not 0 <= i < len(self):
            raise DomainError(f"example index {i} out of range [0, {len(self)})")
        return int(i)

    def replace(self, i: int, z: Example) -> Self:
        """copy with example i replaced by `z` (c_0 is dropped)"""
        i = self._index(i)
        X = self.X.copy()
        y = self.y.copy()
        X[i] = z.x
        y[i] = z.y
        return self.__class__(X, y, self.c_x, self.c_y, None, self.seed)

    def subset(self, indices: ArrayLike) -> Self:
        indices = np.asarray(indices, dtype=np.intp)
        return self.__class__(self.X[indices], self.y[indices], self.c_x, self.c_y, None, self.seed)

    def identical_to(self, other: Dataset) -> bool:
        """bitwise equality of inputs and labels"""
        return (
            self.X.shape == other.X.shape
            and self.X.tobytes() == other.X.tobytes()
            and self.y.tobytes() == other.y.tobytes()
        )


@dataclass(frozen=True, eq=False)
class NeighborSet:
    """S^(i): `base` with the example at `replacement_index` (0-based) replaced by `replacement`."""

    base: Dataset
    replacement_index: int
    replacement: Example

    def __post_init__(self):
        i = self.base._index(self.replacement_index)
        object.__setattr__(self, "replacement_index", i)
        norm = float(np.linalg.norm(self.replacement.x))
        if self.replacement.x.shape != (self.base.d,):
            raise ShapeError(f"replacement has shape {self.replacement.x.shape}, dataset has d={self.base.d}")
        if norm > self.base.c_x * (1 + BOUND_RTOL) or abs(self.replacement.y) > self.base.c_y:
            raise DataBoundError(i, norm, self.replacement.y, self.base.c_x, self.base.c_y)

    @classmethod
    def from_ghost(cls, S: Dataset, S_prime: Dataset, i: int) -> Self:
        """replacement z'_i taken from an independent ghost sample S'"""
        return cls(S, i, S_prime[S_prime._index(i)])

    @cached_property
    def dataset(self) -> Dataset:
        """materialized S^(i)"""
        return self.base.replace(self.replacement_index, self.replacement)


def make_teacher(
        d: int,
        m_teacher: int,
        activation: ActivationSpec,
        scale: float = 1.0,
        seed: int | None = None,
        signs: SignPattern = "alternating",
) -> ModelState:
    """random teacher network with iid N(0, scale^2 / d) weights"""
    return ModelState.initialize(d, m_teacher, activation, signs=signs, init="gaussian", init_scale=scale, seed=seed)


def planted_teacher(init: ModelState, distance: float, seed: int | None = None) -> ModelState:
    """Teacher with the architecture of `init` at Frobenius distance `distance` from W_0.

    The returned state keeps W_0 as its init weights, so ``dist_to_init`` equals `distance`.
    """
    if not distance >= 0:
        raise ConfigurationError(f"planted distance must be >= 0, got {distance!r}")
    U = np.random.default_rng(seed).standard_normal(init.init_weights.shape)
    return init.with_weights(init.init_weights + distance * U / np.linalg.norm(U))


def sample_dataset(
        dist: TeacherDistribution,
        n: int,
        seed: int,
        init: ModelState | None = None,
) -> Dataset:
    """n samples from `dist`; deterministic given `seed`.

    :raises DomainError: n < 1
    :raises DataBoundError: an example violates the data bounds (only possible with unclipped labels)
    """
    if n < 1:
        raise DomainError(f"dataset size must be >= 1, got {n}")
    X, y = dist.draw(np.random.default_rng(seed), n)
    return Dataset.build(X, y, dist.c_x, dist.c_y, init, seed)


def make_neighbor(
        S: Dataset,
        i: int,
        seed: int | None = None,
        dist: TeacherDistribution | None = None,
        replacement: Example | None = None,
) -> NeighborSet:
    """S^(i) with z'_i drawn from `dist` using `seed`, or the given `replacement`.

    :raises DomainError: index out of range
    """
    S._index(i)
    if replacement is None:
        if dist is None:
            raise ConfigurationError("make_neighbor needs a distribution or an explicit replacement")
        X, y = dist.draw(np.random.default_rng(seed), 1)
        replacement = Example(X[0], y[0])
    return NeighborSet(S, i, replacement)


def population_risk_mc(
        state: ModelState,
        dist: TeacherDistribution,
        n_mc: int = MC_DEFAULT,
        seed: int | None = None,
) -> tuple[float, float]:
    """Monte-Carlo estimate of L(W) over `n_mc` fresh draws, with its standard error.

    :raises ConfigurationError: n_mc < ``MC_FLOOR``
    """
    if n_mc < MC_FLOOR:
        raise ConfigurationError(f"n_mc must be >= {MC_FLOOR}, got {n_mc}")
    rng = np.random.default_rng(seed)
    losses = np.empty(n_mc)
    for start in range(0, n_mc, _MC_CHUNK):
        stop = min(start + _MC_CHUNK, n_mc)
        X, y = dist.draw(rng, stop - start)
        losses[start:stop] = state.losses(X, y)
    return float(np.mean(losses)), float(np.std(losses, ddof=1) / math.sqrt(n_mc))


def noise_floor(dist: TeacherDistribution) -> float:
    """L(teacher) = noise_std^2 / 2 for unclipped labels"""
    return 0.5 * dist.noise_std ** 2
