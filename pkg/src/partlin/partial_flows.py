"""Partially linear systems, their flows and the stage transforms (from :mod:`partlin.systems` and :mod:`partlin.stages`)."""

from .stages import *  # noqa: F401,F403
from .systems import *  # noqa: F401,F403
