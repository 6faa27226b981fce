"""Classifier head and the class-weighted binary cross-entropy.

The deep spatial and temporal features are concatenated along channels,
globally average-pooled, and mapped by one fully connected layer to two
logits; p is the softmax probability of the "real" class (index 1, matching
the label convention 1 = real face, 0 = mask).

The loss multiplies only the positive (real-face) term by mu:
    L = mean_i [ -mu * y_i * log p_i - (1 - y_i) * log(1 - p_i) ]
so mu < 1 down-weights an over-represented real class and mu > 1 up-weights
an under-represented one.
"""

from __future__ import annotations

import torch
import torch.nn as nn

P_CLAMP = 1e-7  # probabilities are clamped to [P_CLAMP, 1 - P_CLAMP]


class HeadError(ValueError):
    pass


class ClassifierHead(nn.Module):
    def __init__(self, in_channels: int):
        super().__init__()
        self.fc = nn.Linear(in_channels, 2)

    def forward(self, *features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Feature maps (N, C_i, H, W) with equal spatial dims -> (logits, p)."""
        base = features[0]
        for f in features[1:]:
            if f.shape[0] != base.shape[0] or f.shape[2:] != base.shape[2:]:
                raise HeadError(
                    f"spatial dims differ: {tuple(f.shape)} vs {tuple(base.shape)}"
                )
        x = torch.cat(features, dim=1) if len(features) > 1 else base
        if x.shape[1] != self.fc.in_features:
            raise HeadError(f"expected {self.fc.in_features} channels, got {x.shape[1]}")
        logits = self.fc(x.mean(dim=(2, 3)))
        p = torch.softmax(logits, dim=1)[:, 1]
        return logits, p


def weighted_bce(p: torch.Tensor, y: torch.Tensor, mu: float) -> torch.Tensor:
    """Batch-mean weighted BCE on real-face probabilities."""
    if mu <= 0:
        raise HeadError(f"mu must be positive, got {mu}")
    if p.shape != y.shape:
        raise HeadError(f"batch size mismatch: {tuple(p.shape)} vs {tuple(y.shape)}")
    p = torch.clamp(p, P_CLAMP, 1.0 - P_CLAMP)
    y = y.to(p.dtype)
    return (-mu * y * torch.log(p) - (1.0 - y) * torch.log(1.0 - p)).mean()
