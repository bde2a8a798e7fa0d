"""Residuals, round trips and the example driver (alias of :mod:`partlin.verify`)."""

from .verify import *  # noqa: F401,F403
