"""Facial gesture segmentation, clustering and stimulus-response ranking
from AU intensity traces."""

__version__ = "0.1.0"
