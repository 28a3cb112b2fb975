"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed or inconsistent user input (specs, scenarios, models, plans)."""

    def __init__(self, message, *, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class DivergenceError(RuntimeError):
    """A simulation exceeded its event budget (usually an unbounded call cycle)."""


class ReplayError(RuntimeError):
    """A recorded round could not be reproduced."""
