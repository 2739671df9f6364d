"""Fictitious-domain / distributed Lagrange multiplier solver for 2D
fluid-structure interaction on a fixed fluid grid with an immersed,
independently meshed elastic solid."""

__version__ = "0.1.0"
