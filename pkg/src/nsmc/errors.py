"""Exception and warning types shared across the engine."""


class NsmcError(Exception):
    """Base class for all engine errors."""


class ContractViolationError(NsmcError):
    """An argument violated a documented precondition."""


class DegenerateCloudError(NsmcError):
    """Every particle carries zero weight; nothing can be normalised."""


class CapabilityError(NsmcError):
    """A kernel or sampler needs model features that are not available."""


class ZeroSurvivorsError(NsmcError):
    """No particle satisfies the first threshold; the run cannot start."""


class NonProgressError(NsmcError):
    """Adaptive thresholds stopped increasing."""


class StuckRunError(NsmcError):
    """The mutation kernel failed to escape the current level for too long."""


class ConfigError(NsmcError):
    """Experiment configuration is malformed."""


class DegenerateCloudWarning(UserWarning):
    """A reduction was asked of a cloud with no dispersion."""


class StuckSliceWarning(UserWarning):
    """A slice interval collapsed; the particle was left in place."""
