"""Kinematic motion prior and four-branch logit fusion for video object segmentation."""

from .fusion import BranchParams, FusionParams, fuse, train_fusion
from .geometry import FrameSize, centroid, extent, mask_area
from .metrics import MetricReport, boundary_f, evaluate_sequence, jaccard
from .mpm import KinematicState, MotionPredictor, MpmConfig, blend_logits, gaussian_prior, init_state, observe

__version__ = "0.1.0"
