"""Dual-headed (triplet + prior) metric-learning classifier for hierarchical slice data."""
from .kernels import BACKEND

__version__ = "0.1.0"
