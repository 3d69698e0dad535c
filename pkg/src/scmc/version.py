"""Version information for scmc."""

__version__ = "0.3.0"

MAJOR = 0
MINOR = 3
PATCH = 0


def get_version() -> str:
    """Get the current version string."""
    return __version__


def get_banner() -> str:
    """Get version banner with Python and numerical stack information."""
    import platform
    import sys

    import numpy
    import scipy

    return (
        f"scmc/{__version__} on Python {sys.version.split()[0]} "
        f"({platform.python_implementation()}) "
        f"numpy/{numpy.__version__} scipy/{scipy.__version__}"
    )
