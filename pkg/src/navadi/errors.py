"""Exception and warning types shared across the package."""


class NavAdiError(Exception):
    """Base class for all package-specific errors."""


# --- navigation math ---------------------------------------------------------

class LatitudeNearPole(NavAdiError):
    """Latitude too close to a pole for tan-latitude terms."""


class GimbalLock(NavAdiError):
    """Pitch too close to +/-90 deg for a unique Euler decomposition."""


class StepTooLarge(NavAdiError):
    """Per-step rotation exceeds the first-order validity bound."""


class NonMonotonicTime(NavAdiError):
    """Sample timestamps are not strictly increasing."""


class EmptyStream(NavAdiError):
    """An input sample stream is empty."""


# --- Kalman filtering --------------------------------------------------------

class CovarianceNotPSD(NavAdiError):
    """Covariance lost positive semi-definiteness beyond repair."""


class InnovationGateExceeded(NavAdiError):
    """Measurement rejected by the chi-square innovation gate."""


# --- geometry / imaging ------------------------------------------------------

class FrameMismatch(NavAdiError):
    """Point cloud frame tag incompatible with the requested transform."""


class PoseGap(NavAdiError):
    """Requested timestamp cannot be interpolated from the pose trajectory."""


class NoValidPixels(NavAdiError):
    """Operation requires at least one valid pixel."""


class ShapeMismatch(NavAdiError):
    """Array operands have incompatible shapes."""


class EmptyTaskSet(NavAdiError):
    """Loss combination requires at least one task."""


class NonPositiveDepth(NavAdiError):
    """Depth metric inputs must be strictly positive."""


class InfeasibleTrajectory(NavAdiError):
    """Scenario kinematics exceed the configured sanity bounds."""


# --- I/O ----------------------------------------------------------------------

class IoError(NavAdiError):
    """Underlying file operation failed."""


class MalformedFile(NavAdiError):
    """File contents do not match the expected binary/text layout."""


class MalformedNumber(MalformedFile):
    """A numeric field failed to parse."""


class MissingField(MalformedFile):
    """A required field is absent from a record."""


class MissingFile(NavAdiError):
    """A required input file is absent."""


# --- warnings -----------------------------------------------------------------

class EmptyOutputWarning(UserWarning):
    """Rasterization filled less than 1% of pixels (calibration mismatch?)."""


class SingleClassWarning(UserWarning):
    """Ground truth contains a single class; sweep metrics are degenerate."""
