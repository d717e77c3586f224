"""Spatial ensemble fusion of two gridded PM2.5 proxies."""

from ._pmfuse import *  # noqa: F401,F403
from ._pmfuse import __doc__  # noqa: F401

__version__ = "0.1.0"
