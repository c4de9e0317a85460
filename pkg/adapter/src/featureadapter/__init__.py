"""Offline image-to-feature extraction for the urbanfuse classifier."""

from .extract import BACKBONES, AdapterConfig, AdapterError, extract

__version__ = "0.1.0"
