"""Coupled Brownian webs, the erosion flow and its N-point motion."""
from __future__ import annotations

__version__ = "0.1.0"
