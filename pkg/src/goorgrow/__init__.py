"""Travelling fronts of a go-or-grow cell population steered by a nutrient threshold."""
from __future__ import annotations

__version__ = "0.1.0"
