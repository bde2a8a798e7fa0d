"""Stage construction and the decoupling chain (alias of :mod:`partlin.conjugacy`)."""

from .conjugacy import *  # noqa: F401,F403
