"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """An operation was asked to act on an empty or invalid domain."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class InvariantViolation(RuntimeError):
    """A structural guarantee that should hold by construction did not."""


class NumericalFailure(ArithmeticError):
    """A NaN or infinity appeared where finite values are required."""


class UsageError(ValueError):
    """Bad configuration key, value or command-line usage."""
