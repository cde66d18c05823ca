"""Multi-view angle features for skeleton action recognition.

Learned anchor pairs turn a pose sequence into per-view angle tensors that
are fused and classified next to the usual joint and bone streams. All
gradients are hand-written and finite-difference verified.
"""

import os as _os

# The tensors here are tiny; BLAS thread sync costs more than it saves and
# single-threaded kernels keep reductions bit-reproducible. Applied only if
# numpy is not configured yet.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")

from .angles import AnchorPair, AngleTensor, angle_of, rigid_transform, view_translate
from .anchors import AnchorProposalParams, ViewSet, propose_views
from .data import (CorruptionSpec, SkeletonSequence, SyntheticDatasetSpec,
                   corrupt, generate_synthetic, parse_ntu_skeleton)
from .fusion import FusionParams, fuse
from .model import ActionModel, build_model
from .train import OptimizerConfig, train, verify_gradients

__all__ = [
    "AnchorPair", "AngleTensor", "angle_of", "rigid_transform",
    "view_translate", "AnchorProposalParams", "ViewSet", "propose_views",
    "CorruptionSpec", "SkeletonSequence", "SyntheticDatasetSpec", "corrupt",
    "generate_synthetic", "parse_ntu_skeleton", "FusionParams", "fuse",
    "ActionModel", "build_model", "OptimizerConfig", "train",
    "verify_gradients",
]

__version__ = "0.1.0"
