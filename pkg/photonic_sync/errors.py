"""Exception hierarchy shared by every module.

Each class carries the process exit code the command line maps it to.
"""


class PhotonicSyncError(Exception):
    exit_code = 1


class ScenarioParseError(PhotonicSyncError):
    """Scenario text is not well-formed JSON or a quantity cannot be read."""
    exit_code = 2


class GrammarError(PhotonicSyncError):
    exit_code = 2

    def __init__(self, text, position, expected=None):
        self.text = text
        self.position = position
        self.expected = expected
        msg = 'invalid notation %r at position %d' % (text, position)
        if expected:
            msg += ' (expected %s)' % expected
        super().__init__(msg)


class ScenarioError(PhotonicSyncError):
    """Semantic violations found while validating a scenario."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__('; '.join(str(v) for v in self.violations) or 'invalid scenario')


class ConfigError(PhotonicSyncError):
    pass


class CapabilityMismatch(PhotonicSyncError):
    pass


class UnknownVariable(PhotonicSyncError):
    pass


class BoundsViolation(PhotonicSyncError):
    pass


class NotACycle(PhotonicSyncError):
    pass


class InsufficientHeralds(PhotonicSyncError):
    pass


class BufferOccupied(PhotonicSyncError):
    pass


class BufferEmpty(PhotonicSyncError):
    pass


class BaselineInfeasible(PhotonicSyncError):
    exit_code = 3
