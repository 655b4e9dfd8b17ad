"""
Smooth activations with certified global bounds on value, first and second derivative.

Only activations with bounded, continuous second derivative are supported
(the weak-convexity and smoothness estimates of the theory module need all
three bounds). The analytic bounds are cross-checked by a dense grid
maximization in ``certify_bounds`` before they are handed out.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, get_args

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit

from ..exceptions import BoundCertificationError, ConfigurationError, DomainError

__all__ = (
    "ActivationKind",
    "ActivationSpec",
    "certify_bounds",
    "phi",
    "phi1",
    "phi2",
    "GRID_RANGE",
    "GRID_POINTS",
)

logger = logging.getLogger(__name__)

ActivationKind = Literal["sigmoid", "tanh"]

GRID_RANGE: float = 50.0
"""half width of the certification grid"""
GRID_POINTS: int = 10 ** 6 + 1
"""number of certification grid points (odd: the origin is on the grid)"""

_SQRT3 = math.sqrt(3.0)

_ANALYTIC_BOUNDS: dict[str, tuple[float, float, float]] = {
    # B_phi, B_phi', B_phi''
    "sigmoid": (1.0, 0.25, 1.0 / (6.0 * _SQRT3)),
    "tanh": (1.0, 1.0, 4.0 / (3.0 * _SQRT3)),
}


def phi(kind: ActivationKind, u: ArrayLike) -> NDArray[np.float64]:
    """vectorized activation value"""
    u = np.asarray(u, dtype=np.float64)
    if kind == "tanh":
        return np.tanh(u)
    return expit(u)


def phi1(kind: ActivationKind, u: ArrayLike) -> NDArray[np.float64]:
    """vectorized first derivative"""
    s = phi(kind, u)
    if kind == "tanh":
        return 1.0 - s * s
    return s * (1.0 - s)


def phi2(kind: ActivationKind, u: ArrayLike) -> NDArray[np.float64]:
    """vectorized second derivative"""
    s = phi(kind, u)
    if kind == "tanh":
        return -2.0 * s * (1.0 - s * s)
    return s * (1.0 - s) * (1.0 - 2.0 * s)


@dataclass(frozen=True)
class ActivationSpec:
    """A twice differentiable scalar activation together with the global bounds

        |phi(u)| <= b_phi,   |phi'(u)| <= b_phi1,   |phi''(u)| <= b_phi2

    Instances are obtained from ``certify_bounds``; the bounds are then verified.
    Direct construction is allowed (e.g. to study deliberately loose bounds),
    but must keep all three bounds finite and strictly positive.
    """

    kind: ActivationKind
    """activation identity"""
    b_phi: float
    """bound on |phi|"""
    b_phi1: float
    """bound on |phi'|"""
    b_phi2: float
    """bound on |phi''|"""

    def __post_init__(self):
        if self.kind not in get_args(ActivationKind):
            raise ConfigurationError(f"unsupported activation: {self.kind!r} (supported: {', '.join(get_args(ActivationKind))})")
        for name in ("b_phi", "b_phi1", "b_phi2"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigurationError(f"activation bound {name} must be finite and > 0, got {value!r}")

    @staticmethod
    def _check(u: float) -> float:
        u = float(u)
        if not math.isfinite(u):
            raise DomainError(f"activation input must be finite, got {u!r}")
        return u

    def eval(self, u: float) -> float:
        """phi(u) for a finite scalar"""
        return float(phi(self.kind, self._check(u)))

    def deriv(self, u: float) -> float:
        """phi'(u) for a finite scalar"""
        return float(phi1(self.kind, self._check(u)))

    def deriv2(self, u: float) -> float:
        """phi''(u) for a finite scalar"""
        return float(phi2(self.kind, self._check(u)))

    def phi(self, u: ArrayLike) -> NDArray[np.float64]:
        return phi(self.kind, u)

    def phi1(self, u: ArrayLike) -> NDArray[np.float64]:
        return phi1(self.kind, u)

    def phi2(self, u: ArrayLike) -> NDArray[np.float64]:
        return phi2(self.kind, u)


@lru_cache
def certify_bounds(kind: str) -> ActivationSpec:
    """Returns the spec of `kind` with its tightest analytic bounds.

    Each bound is validated against the maximum over a grid of ``GRID_POINTS`` points
    on [-GRID_RANGE, GRID_RANGE] and the limits at +-inf.

    :raises ConfigurationError: unsupported kind
    :raises BoundCertificationError: a sampled maximum exceeds its analytic bound
    """
    try:
        analytic = _ANALYTIC_BOUNDS[kind]
    except (KeyError, TypeError):
        raise ConfigurationError(
            f"unsupported activation: {kind!r} (supported: {', '.join(_ANALYTIC_BOUNDS)})"
        ) from None

    grid = np.concatenate((
        np.linspace(-GRID_RANGE, GRID_RANGE, GRID_POINTS),
        (-np.inf, np.inf),
    ))
    with np.errstate(invalid="ignore"):
        sampled = tuple(
            float(np.nanmax(np.abs(f(kind, grid))))
            for f in (phi, phi1, phi2)
        )

    for quantity, s, a in zip(("|phi|", "|phi'|", "|phi''|"), sampled, analytic):
        # relative slack for the rounding of the closed forms
        if s > a * (1 + 1e-12):
            raise BoundCertificationError(kind, quantity, s, a)
        logger.debug("certified %s %s <= %.12g (grid max %.12g)", kind, quantity, a, s)

    return ActivationSpec(kind, *analytic)  # type: ignore[arg-type]
