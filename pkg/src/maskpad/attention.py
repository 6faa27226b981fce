"""Flow attention: score each frame from its optical flow, fuse features.

Each selected frame owns one stride-4 flow field (the flow from its
predecessor; the first frame gets the zero field so frames and weights stay
one-to-one).  A weight head shared across frames maps each flow to a scalar
logit; a softmax over the lam frames yields non-negative weights summing
to 1, and the fused feature is the weighted sum of the per-frame features.

``mode="stacked"`` keeps the alternative reading -- one 3x3 convolution over
the channel-stacked lam-1 flows emitting lam logits -- behind a flag; the
shared per-frame head is the default and the only mode with asserted
symmetry properties.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class AttentionError(ValueError):
    pass


class FlowAttention(nn.Module):
    def __init__(self, hidden: int = 8, mode: str = "shared", lam: int | None = None):
        super().__init__()
        if mode not in ("shared", "stacked"):
            raise AttentionError(f"unknown attention mode {mode!r}")
        self.mode = mode
        if mode == "shared":
            self.conv = nn.Conv2d(2, hidden, 3, 1, 1)
            self.fc = nn.Linear(hidden, 1)
        else:
            if lam is None or lam < 2:
                raise AttentionError("stacked mode needs lam >= 2 at construction")
            self.conv = nn.Conv2d(2 * (lam - 1), lam, 3, 1, 1)

    def forward(self, flows: torch.Tensor) -> torch.Tensor:
        """(N, lam, 2, h, w) per-frame flows -> (N, lam) weights, rows sum to 1."""
        if flows.dim() != 5 or flows.shape[2] != 2:
            raise AttentionError(f"expected (N, lam, 2, h, w) flows, got {tuple(flows.shape)}")
        n, lam = flows.shape[:2]
        if lam < 2:
            raise AttentionError("need at least 2 frames to weight")
        if not torch.isfinite(flows).all():
            raise AttentionError("non-finite flow input")
        if self.mode == "shared":
            x = flows.reshape(n * lam, *flows.shape[2:])
            z = F.relu(self.conv(x)).mean(dim=(2, 3))
            logits = self.fc(z).reshape(n, lam)
        else:
            stack = flows[:, 1:].reshape(n, (lam - 1) * 2, *flows.shape[3:])
            logits = self.conv(stack).mean(dim=(2, 3))
        return torch.softmax(logits, dim=1)


def fuse(weights: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
    """Convex combination of per-frame features.

    weights: (N, lam) non-negative, rows summing to 1.
    features: (N, lam, C, H, W) -> (N, C, H, W).
    """
    if features.dim() != 5:
        raise AttentionError(f"expected (N, lam, C, H, W) features, got {tuple(features.shape)}")
    if weights.shape != features.shape[:2]:
        raise AttentionError(
            f"weights {tuple(weights.shape)} do not match {features.shape[1]} frames"
        )
    return (weights[:, :, None, None, None] * features).sum(dim=1)


def uniform_weights(n: int, lam: int, **kw) -> torch.Tensor:
    return torch.full((n, lam), 1.0 / lam, **kw)
