"""Perspective-aware anchor optimization toolkit for 2D object detection."""

__version__ = "0.1.0"
