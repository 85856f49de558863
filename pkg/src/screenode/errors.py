"""Exception types shared across the package."""


class ScreenError(Exception):
    """Base class for all package errors."""


class ConflictingPerturbation(ScreenError, ValueError):
    pass


class NotPerturbable(ScreenError, ValueError):
    pass


class DuplicateCondition(ScreenError, ValueError):
    pass


class NonFiniteState(ScreenError, FloatingPointError):
    pass


class NotDifferentiating(ScreenError, ValueError):
    pass


class BatchOutOfRange(ScreenError, IndexError):
    pass


class InfeasiblePlan(ScreenError, ValueError):
    pass


class EmptyGroup(ScreenError, ValueError):
    pass


class ShapeMismatch(ScreenError, ValueError):
    pass


class MissingSteadyTarget(ScreenError, KeyError):
    pass


class MissingRow(ScreenError, KeyError):
    pass


class EmptySet(ScreenError, ValueError):
    pass


class NonFiniteOutput(ScreenError, FloatingPointError):
    pass


class Diverged(ScreenError, FloatingPointError):
    pass


class NoControlBatch(ScreenError, ValueError):
    pass


class MissingDay(ScreenError, KeyError):
    pass


class TooFewCells(ScreenError, ValueError):
    pass


class DegenerateCloud(ScreenError, ValueError):
    pass


class EmptyPairing(ScreenError, ValueError):
    pass


class ConfigError(ScreenError, ValueError):
    """Invalid run configuration (CLI exit code 2)."""
