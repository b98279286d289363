"""Replay-attack countermeasure toolkit: features, models, training and EER."""

from ._antispoof import *  # noqa: F401,F403
from ._antispoof import __doc__  # noqa: F401
