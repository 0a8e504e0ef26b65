"""Python bindings for the nirev C++ library."""

from ._nirev import *  # noqa: F401,F403
from ._nirev import __doc__  # noqa: F401

__version__ = "0.1.0"
