"""3D-mask presentation-attack detection from a handful of video frames.

The detector estimates optical flow between selected face frames, scores each
frame from its flow (flow attention), fuses per-frame spatial features under
those weights, and classifies the concatenation of deep spatial and temporal
features.  A synthetic face-motion generator with analytic ground-truth flow
drives training and the evaluation suite at desk scale.
"""

from .attention import FlowAttention, fuse, uniform_weights
from .backbone import Backbone, TemporalAdapter, make_divisible
from .flownet import FaceFlowNet, FlowField, aepe, pool_flow, predict_flow
from .head import ClassifierHead, weighted_bce
from .metrics import auc, bpcer_at_apcer, eer, evaluate_scores, threshold_metrics
from .model import MaskDetector
from .splits import make_splits
from .synth import (
    Clip,
    FrameSubset,
    SynthSpec,
    align_face,
    estimate_similarity,
    generate_clip,
    select_frames,
)
from .training import TrainConfig, augment_clip, finetune_stage, lr_schedule, train_flow_stage

__version__ = "0.1.0"
