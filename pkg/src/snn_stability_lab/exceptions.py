from __future__ import annotations

from typing import Any

__all__ = (
    "ConfigurationError",
    "AssumptionViolationError",
    "BudgetExceededError",
    "DomainError",
    "DataBoundError",
    "ShapeError",
    "CapacityError",
    "NumericError",
    "DivergenceError",
    "EigenSolverError",
    "BoundCertificationError",
)


class _Rebuildable:
    # errors raised inside pool workers are pickled back to the parent;
    # constructor arguments, not the message, are what __reduce__ replays
    __init_args__: tuple

    def __reduce__(self):
        return self.__class__, self.__init_args__


class ConfigurationError(ValueError):
    """raised for invalid, unknown or missing configuration values"""


class AssumptionViolationError(_Rebuildable, ConfigurationError):
    """raised when the step size violates eta <= 1/(2 rho) while strict mode is on"""

    def __init__(self, eta: float, rho: float):
        self.__init_args__ = (eta, rho)
        self.eta = eta
        self.rho = rho
        ConfigurationError.__init__(
            self,
            f"step size violates the smoothness condition\n"
            f"eta          : {eta!r}\n"
            f"1/(2 rho)    : {1 / (2 * rho)!r}\n"
            f"rho          : {rho!r}\n"
            f"(disable strict_mode to run anyway; reports are then flagged)"
        )


class BudgetExceededError(_Rebuildable, ConfigurationError):
    """raised when a run or sweep would execute more optimizer steps than allowed"""

    def __init__(self, required: int, budget: int, point: Any = None):
        self.__init_args__ = (required, budget, point)
        self.required = required
        self.budget = budget
        self.point = point
        ConfigurationError.__init__(
            self,
            f"step budget exceeded\n"
            f"required steps: {required}\n"
            f"budget        : {budget}"
            + (f"\ngrid point    : {point!r}" if point is not None else "")
        )


class DomainError(ValueError):
    """raised for arguments outside the mathematical domain of an operation"""


class DataBoundError(_Rebuildable, DomainError):
    """raised when an example violates the data bounds C_x / C_y"""

    def __init__(self, index: int, x_norm: float, y: float, c_x: float, c_y: float):
        self.__init_args__ = (index, x_norm, y, c_x, c_y)
        self.index = index
        DomainError.__init__(
            self,
            f"example violates the data bounds\n"
            f"index         : {index}\n"
            f"||x||_2 / C_x : {x_norm!r} / {c_x!r}\n"
            f"|y|     / C_y : {abs(y)!r} / {c_y!r}"
        )


class ShapeError(ValueError):
    """raised for dimension mismatches"""


class CapacityError(RuntimeError):
    """raised when a dense computation exceeds its size guard"""


class NumericError(ArithmeticError):
    """base class of numeric failures"""


class DivergenceError(_Rebuildable, NumericError):
    """raised when an optimizer produces non-finite weights"""

    def __init__(self, step: int, algorithm: str, context: dict[str, Any] | None = None):
        self.__init_args__ = (step, algorithm, context)
        self.step = step
        self.algorithm = algorithm
        self.context = dict(context or {})
        NumericError.__init__(
            self,
            f"{algorithm} diverged (non-finite weights)\n"
            f"step          : {step}"
            + str().join(f"\n{key:<14}: {value!r}" for key, value in self.context.items())
        )

    def with_context(self, **context: Any) -> DivergenceError:
        """returns a copy extended by additional run coordinates"""
        return DivergenceError(self.step, self.algorithm, self.context | context)


class EigenSolverError(_Rebuildable, NumericError):
    """raised when the iterative eigensolver does not converge"""

    def __init__(self, msg: str, residual: float):
        self.__init_args__ = (msg, residual)
        self.residual = residual
        NumericError.__init__(
            self,
            f"{msg}\n"
            f"residual      : {residual!r}"
        )


class BoundCertificationError(_Rebuildable, NumericError):
    """raised when a sampled maximum exceeds an analytic activation bound"""

    def __init__(self, kind: str, quantity: str, sampled: float, analytic: float):
        self.__init_args__ = (kind, quantity, sampled, analytic)
        self.kind = kind
        self.quantity = quantity
        NumericError.__init__(
            self,
            f"certified bound does not hold for {kind}\n"
            f"quantity      : {quantity}\n"
            f"sampled max   : {sampled!r}\n"
            f"analytic bound: {analytic!r}"
        )
