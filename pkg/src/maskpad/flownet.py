"""Facial optical flow: a 2-level encoder/decoder and the endpoint-error loss.

The network maps an aligned frame pair (two 3x112x96 images, channel-stacked)
to a quarter-resolution flow field (2 x 28 x 24, stride 4).  The encoder is a
stride-1 stem followed by two stride-2 convolutions; the decoder refines at
stride 4 with skip connections from both encoder stages (the shallower one
average-pooled onto the stride-4 grid) and never returns to full resolution.
Stride 4 is forced by the backbone: flow resolution must be 8x that of the
deep spatial features, which sit at stride 32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

FLOW_STRIDE = 4
AEPE_EPS = 1e-8  # inside the sqrt; keeps the gradient finite at exact zeros


class FlowError(ValueError):
    pass


@dataclass
class FlowField:
    """Per-pixel (u, v) displacement in input pixels, on a strided grid."""

    data: np.ndarray  # (2, H_f, W_f) float32
    stride: int = 1

    def validate(self) -> None:
        if self.data.ndim != 3 or self.data.shape[0] != 2:
            raise FlowError(f"flow data must be (2, H, W), got {self.data.shape}")
        if self.stride < 1:
            raise FlowError(f"stride must be >= 1, got {self.stride}")
        if not np.isfinite(self.data).all():
            raise FlowError("flow contains non-finite values")


class FaceFlowNet(nn.Module):
    """Two-level flow estimator for 96x112 face crops."""

    stride = FLOW_STRIDE

    def __init__(self, c1: int = 32, c2: int = 64, stem: int = 16):
        super().__init__()
        act = lambda: nn.LeakyReLU(0.1, inplace=True)
        self.stem = nn.Sequential(nn.Conv2d(6, stem, 3, 1, 1), act())
        self.enc1 = nn.Sequential(nn.Conv2d(stem, c1, 3, 2, 1), act())
        self.enc2 = nn.Sequential(nn.Conv2d(c1, c2, 3, 2, 1), act())
        self.dec1 = nn.Sequential(nn.Conv2d(c2 + c1, c2, 3, 1, 1), act())
        self.dec2 = nn.Sequential(nn.Conv2d(c2 + stem, c1, 3, 1, 1), act())
        self.head = nn.Conv2d(c1, 2, 3, 1, 1)

    def forward(self, frame_a: torch.Tensor, frame_b: torch.Tensor) -> torch.Tensor:
        """(N, 3, 112, 96) x 2 -> (N, 2, 28, 24) flow from a to b."""
        if frame_a.shape != frame_b.shape:
            raise FlowError(f"frame shapes differ: {tuple(frame_a.shape)} vs {tuple(frame_b.shape)}")
        if frame_a.dim() != 4 or frame_a.shape[1] != 3:
            raise FlowError(f"expected (N, 3, H, W) frames, got {tuple(frame_a.shape)}")
        x = torch.cat([frame_a, frame_b], dim=1) - 0.5  # center [0,1] inputs
        s = self.stem(x)
        e1 = self.enc1(s)
        e2 = self.enc2(e1)
        d1 = self.dec1(torch.cat([e2, F.avg_pool2d(e1, 2)], dim=1))
        d2 = self.dec2(torch.cat([d1, F.avg_pool2d(s, 4)], dim=1))
        return self.head(d2)


def predict_flow(net: FaceFlowNet, frame_a: np.ndarray, frame_b: np.ndarray) -> FlowField:
    """Estimate flow between two (H, W, 3) frames in [0, 1]."""
    if frame_a.shape != frame_b.shape or frame_a.ndim != 3:
        raise FlowError("frames must share an (H, W, 3) shape")
    with torch.no_grad():
        a = torch.from_numpy(np.ascontiguousarray(frame_a.transpose(2, 0, 1)))[None].float()
        b = torch.from_numpy(np.ascontiguousarray(frame_b.transpose(2, 0, 1)))[None].float()
        out = net(a, b)[0].numpy()
    field = FlowField(data=out, stride=FLOW_STRIDE)
    field.validate()
    return field


def pool_flow(flow: np.ndarray | torch.Tensor, factor: int = FLOW_STRIDE) -> torch.Tensor:
    """Average-pool a full-resolution (.., 2, H, W) flow down by ``factor``."""
    t = torch.as_tensor(np.asarray(flow)) if not isinstance(flow, torch.Tensor) else flow
    squeeze = t.dim() == 3
    if squeeze:
        t = t[None]
    pooled = F.avg_pool2d(t.float(), factor, factor, ceil_mode=True)
    return pooled[0] if squeeze else pooled


def aepe(pred: torch.Tensor | FlowField, gt: torch.Tensor | FlowField) -> torch.Tensor:
    """Average endpoint error: mean Euclidean distance of the flow vectors.

    Accepts (2, H, W) or (N, 2, H, W) tensors; FlowField inputs must agree in
    stride.  Differentiable; exact zeros floor at sqrt(AEPE_EPS) = 1e-4.
    """
    if isinstance(pred, FlowField) or isinstance(gt, FlowField):
        if not (isinstance(pred, FlowField) and isinstance(gt, FlowField)):
            raise FlowError("compare FlowField with FlowField")
        if pred.stride != gt.stride:
            raise FlowError(f"stride mismatch: {pred.stride} vs {gt.stride}")
        pred, gt = torch.as_tensor(pred.data), torch.as_tensor(gt.data)
    if pred.shape != gt.shape:
        raise FlowError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    if pred.dim() not in (3, 4) or pred.shape[-3] != 2:
        raise FlowError(f"expected (..., 2, H, W), got {tuple(pred.shape)}")
    diff = pred - gt
    dist = torch.sqrt(diff[..., 0, :, :] ** 2 + diff[..., 1, :, :] ** 2 + AEPE_EPS)
    return dist.mean()
