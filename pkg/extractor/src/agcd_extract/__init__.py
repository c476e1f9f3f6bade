"""Embedding export pipeline producing AGCD feature directories from image folders."""

from .backbones import BackboneError, available_backbones, get_backbone
from .extract import ExtractJob, ExtractResult, discover_images, extract

__version__ = "0.1.0"
