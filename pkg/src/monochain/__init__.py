"""Chain recurrence, Morse graphs and order structure of strongly monotone systems."""
from __future__ import annotations

__version__ = "0.1.0"

from .errors import (DegenerateArc, EscapeError, InconclusiveError, MonochainError, NotFound, NumericalError,
                     StructureViolation, UsageError)
from .order import *  # noqa: F401,F403
from .systems import *  # noqa: F401,F403
from .enclosure import *  # noqa: F401,F403
from .conley import *  # noqa: F401,F403
from .structure import *  # noqa: F401,F403
from .measure import *  # noqa: F401,F403
from . import order, systems, enclosure, conley, structure, measure, reports  # noqa: F401

__all__ = (["__version__", "MonochainError", "UsageError", "NotFound", "EscapeError", "NumericalError",
            "InconclusiveError", "StructureViolation", "DegenerateArc"]
           + order.__all__ + systems.__all__ + enclosure.__all__ + conley.__all__
           + structure.__all__ + measure.__all__)
