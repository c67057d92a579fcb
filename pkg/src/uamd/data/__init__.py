"""Stereo/LiDAR samples, KITTI-style depth I/O and synthetic scenes."""

from .dataset import load_dataset, load_noise_labels, load_sample, save_sample
from .depth_io import decode_depth_png, encode_depth_png, read_depth, read_image, write_depth, write_image
from .sample import MAX_DEPTH_M, Calibration, StereoSample, valid_count
from .synth import SYNTH_CALIBRATION, SynthTruth, sparsify, synth_dataset, synth_scene

__all__ = [
    "Calibration", "MAX_DEPTH_M", "SYNTH_CALIBRATION", "StereoSample", "SynthTruth",
    "decode_depth_png", "encode_depth_png", "load_dataset", "load_noise_labels", "load_sample",
    "read_depth", "read_image", "save_sample", "sparsify", "synth_dataset", "synth_scene",
    "valid_count", "write_depth", "write_image",
]
