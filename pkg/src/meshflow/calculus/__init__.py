"""Dataflow graphs as functions, boards as functionals."""

from .functionals import *  # noqa: F401,F403
from .functionals import __all__ as _functionals_all
from .graph import *  # noqa: F401,F403
from .graph import __all__ as _graph_all

__all__ = _graph_all + _functionals_all
