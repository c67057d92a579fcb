"""Multimodal depth network parameterized by the active modal combo."""

from .config import ModalCombo, NetworkConfig
from .model import (
    BranchOutputs,
    Prediction,
    StereoFeatures,
    cfal_aggregate,
    cffl_fuse,
    drl,
    forward,
    mfa,
    mfe_depth_branch,
    mfe_image_branch,
    mfe_stereo_branch,
    run_branches,
    soft_argmax,
)
from .params import (
    CheckpointError,
    ModelParams,
    init_params,
    load_checkpoint,
    save_checkpoint,
)

__all__ = [
    "BranchOutputs", "CheckpointError", "ModalCombo", "ModelParams", "NetworkConfig",
    "Prediction", "StereoFeatures", "cfal_aggregate", "cffl_fuse", "drl", "forward",
    "init_params", "load_checkpoint", "mfa", "mfe_depth_branch", "mfe_image_branch",
    "mfe_stereo_branch", "run_branches", "save_checkpoint", "soft_argmax",
]
