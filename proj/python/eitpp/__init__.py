"""Probe-based electrical impedance tomography."""

from ._eitpp import *  # noqa: F401,F403
from ._eitpp import __doc__  # noqa: F401
