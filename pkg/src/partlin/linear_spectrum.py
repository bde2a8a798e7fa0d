"""Transition matrices, Bohl intervals, ED tests and spectra (alias of :mod:`partlin.spectrum`)."""

from .spectrum import *  # noqa: F401,F403
