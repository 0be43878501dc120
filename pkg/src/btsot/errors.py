"""Exception hierarchy shared by the engine, solver and simulator."""


class BtSotError(Exception):
    """Base class for all package errors."""


class ConfigurationError(BtSotError):
    """Unknown ids, inconsistent catalogs, bad schedules or parameters."""


class EvaluationError(BtSotError):
    """Non-finite values produced while evaluating a task or command."""


class InvariantViolation(BtSotError):
    """An internal consistency rule was broken (e.g. duplicate task owner)."""
