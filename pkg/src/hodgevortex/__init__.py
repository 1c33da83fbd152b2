"""Point vortices on conformally flat tori and planar domains."""

from __future__ import annotations

__version__ = "0.1.0"
