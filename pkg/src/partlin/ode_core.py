"""Adaptive integration, variational solutions and quadrature (alias of :mod:`partlin.ode`)."""

from .ode import *  # noqa: F401,F403
