"""End-to-end detector: flow estimation, flow attention, two-branch features.

Forward pass over a clip of lam aligned frames:

1. estimate stride-4 flow between each adjacent selected pair (lam-1 fields);
2. score each frame from its flow (zero field for the first frame) and
   softmax into fusion weights;
3. extract shared low-level features per frame (blocks 1-2), fuse them by
   weighted sum, and run blocks 3-4 for the deep spatial feature;
4. stack the lam-1 flows channel-wise and run the adapter plus blocks 2-4
   for the temporal feature;
5. concatenate, pool, classify; p is the probability of "real".

Ablation modes alter the graph: ``spatial_only`` drops everything
flow-related and fuses frames uniformly, ``temporal_only`` drops the spatial
branch and attention, ``equal_weights`` fixes the weights at 1/lam, and
``frozen_flow`` is the full graph with the flow net excluded from training.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .attention import FlowAttention, fuse, uniform_weights
from .backbone import Backbone, TemporalAdapter, INPUT_HEIGHT, INPUT_WIDTH
from .flownet import FaceFlowNet
from .head import ClassifierHead

MODES = ("full", "spatial_only", "temporal_only", "equal_weights", "frozen_flow")


class ModelError(ValueError):
    pass


class MaskDetector(nn.Module):
    def __init__(
        self,
        lam: int = 5,
        mode: str = "full",
        width: float = 0.75,
        attention_mode: str = "shared",
        flow_widths: tuple[int, int] = (32, 64),
    ):
        super().__init__()
        if mode not in MODES:
            raise ModelError(f"unknown mode {mode!r}, expected one of {MODES}")
        min_lam = 1 if mode == "spatial_only" else 2
        if lam < min_lam:
            raise ModelError(f"mode {mode} needs lam >= {min_lam}, got {lam}")
        self.lam = lam
        self.mode = mode
        self.uses_flow = mode != "spatial_only"
        self.uses_spatial = mode != "temporal_only"
        self.uses_attention = mode in ("full", "frozen_flow")

        self.backbone = Backbone(width)
        if self.uses_flow:
            self.flownet = FaceFlowNet(*flow_widths)
            self.temporal = TemporalAdapter(lam, self.backbone.block2_in)
        if self.uses_attention:
            self.attention = FlowAttention(mode=attention_mode, lam=lam)
        branches = int(self.uses_spatial) + int(self.uses_flow)
        self.head = ClassifierHead(self.backbone.high_channels * branches)

    def forward(self, clips: torch.Tensor) -> dict[str, torch.Tensor]:
        """clips: (N, lam, 3, 112, 96) -> dict with p, logits, weights, flows."""
        if clips.dim() != 5 or clips.shape[1] != self.lam:
            raise ModelError(
                f"expected (N, {self.lam}, 3, {INPUT_HEIGHT}, {INPUT_WIDTH}), got {tuple(clips.shape)}"
            )
        n, lam = clips.shape[:2]
        frames = clips.reshape(n * lam, *clips.shape[2:])

        flows = None
        weights = None
        f_spa = None
        f_temp = None

        if self.uses_flow:
            a = clips[:, :-1].reshape(n * (lam - 1), *clips.shape[2:])
            b = clips[:, 1:].reshape(n * (lam - 1), *clips.shape[2:])
            raw = self.flownet(a, b)
            flows = raw.reshape(n, lam - 1, *raw.shape[1:])
            stack = flows.reshape(n, (lam - 1) * 2, *flows.shape[3:])
            f_temp = self.backbone.forward_temporal(self.temporal(stack))

        if self.uses_attention:
            zero = torch.zeros_like(flows[:, :1])
            weights = self.attention(torch.cat([zero, flows], dim=1))
        elif self.uses_spatial:
            weights = uniform_weights(n, lam, dtype=clips.dtype, device=clips.device)

        if self.uses_spatial:
            low = self.backbone.extract_low(frames)
            low = low.reshape(n, lam, *low.shape[1:])
            f_spa = self.backbone.extract_high(fuse(weights, low))

        feats = [f for f in (f_spa, f_temp) if f is not None]
        if len(feats) == 2 and feats[0].shape[2:] != feats[1].shape[2:]:
            raise ModelError(
                f"branch spatial dims diverged: {tuple(feats[0].shape)} vs {tuple(feats[1].shape)}"
            )
        logits, p = self.head(*feats)
        return {"p": p, "logits": logits, "weights": weights, "flows": flows}

    def flow_parameters(self):
        return list(self.flownet.parameters()) if self.uses_flow else []

    def non_flow_parameters(self):
        flow_ids = {id(p) for p in self.flow_parameters()}
        return [p for p in self.parameters() if id(p) not in flow_ids]


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
