###############################################################################
# Shared logger and exception hierarchy
#
# Every module logs through LOGGER and raises one of the classes below so
# callers can catch MvgeomError without swallowing unrelated failures.
#

import logging


# Logger for internal use by the mvgeom package.
LOGGER = logging.getLogger("mvgeom")
LOGGER.addHandler(logging.NullHandler())


class MvgeomError(Exception):
    """Base class for all errors raised by mvgeom."""


class DomainError(MvgeomError, ValueError):
    """Raised when an operation is called outside of its mathematical domain.
    """


class BehindCameraError(DomainError):
    """Raised when a point projects from behind the camera (z <= 0)."""


class FormatError(MvgeomError, ValueError):
    """Raised when a FGRID or trajectory file cannot be parsed."""


class ConfigError(MvgeomError, ValueError):
    """Raised for invalid configuration values or unknown configuration keys.
    """


class DepthProviderError(MvgeomError, RuntimeError):
    """
    Raised when the depth provider fails or returns an unusable depth map
    during inference. The original exception, if any, is chained as the cause.
    """
