"""Exception classes shared across the package."""


class ContractError(ValueError):
    """Input violates a documented precondition (shape, range, count)."""


class NumericalError(RuntimeError):
    """A numerical routine failed (non-finite state, eigensolver, rank)."""


class DegeneracyError(RuntimeError):
    """The data or the run degenerated so the method cannot proceed."""
