"""Soft silhouette scoring and deep clustering (DCSS) in numpy."""

__version__ = "0.1.0"
