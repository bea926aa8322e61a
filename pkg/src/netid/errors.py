"""Exception types shared across the package."""


class NetidError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(NetidError):
    """Signal or matrix dimensions are inconsistent with the declared sizes."""


class NotASelection(NetidError):
    """Measurement matrix is not a row selection of the identity."""


class BadM(NetidError):
    """Chain length M outside the supported range (odd, >= 5)."""


class ZeroDegree(NetidError):
    """A global parameter component is tied to no node parameter."""


class SingularSchur(NetidError):
    """The reduced hidden-output system is rank deficient; the hidden
    signals are not uniquely determined by the optimization problem."""


class SingularLoop(NetidError):
    """The closed-loop operator of the simulator is singular."""


class MissingContribution(NetidError):
    """A worker failed to deliver its message before the phase barrier."""


class ConfigError(NetidError):
    """Invalid or inconsistent configuration document."""
