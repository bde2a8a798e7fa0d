"""Spectral gap conditions and scalar envelopes (alias of :mod:`partlin.gaps`)."""

from .gaps import *  # noqa: F401,F403
