"""Differentiable monocular view synthesis with hierarchical pose refinement."""

__version__ = "0.1.0"
