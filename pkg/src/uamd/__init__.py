"""Multimodal stereo + LiDAR depth completion with modal-dropout training."""

__version__ = "0.1.0"
