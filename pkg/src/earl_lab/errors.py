"""Exception types shared across the lab."""


class EarlError(Exception):
    """Base class for every error raised by earl_lab."""


# timeline
class KeyNotInContext(EarlError):
    pass


class ContextTooSmall(EarlError):
    pass


class EmptySelection(EarlError):
    pass


class SelectionOutsideContext(EarlError):
    pass


# env
class SelectionBudgetExhausted(EarlError):
    pass


class StepOnTerminalState(EarlError):
    pass


class InvalidAction(EarlError):
    pass


# reward
class NonTerminalTrajectory(EarlError):
    pass


# synth / file formats
class InfeasiblePlacement(EarlError):
    def __init__(self, message, seed=None):
        super().__init__(message if seed is None else f"{message} (seed={seed})")
        self.seed = seed


class MalformedRecord(EarlError):
    """A line-delimited file could not be parsed; carries the 1-based line number."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


class MalformedAnnotation(MalformedRecord):
    pass


# policy / trainer
class EmptyObservation(EarlError):
    pass


class EmptyDataset(EarlError):
    pass


class DegenerateBatch(UserWarning):
    """Every advantage in the batch is zero; the update is skipped."""
