"""Partitioned mobile backbone for 96x112 face crops.

A MobileNetV3-Small-style stack at 0.75 width, cut into four blocks at the
stride transitions (4 / 8 / 16 / 32):

* block1: stem conv (stride 2, h-swish) + first inverted-residual stage
* block2: stages to stride 8 -- block1+block2 produce the shared low-level
  per-frame features
* block3: stages to stride 16
* block4: stages to stride 32 plus the final 1x1 expansion conv

Channel widths are 0.75 x the base recipe, rounded to a multiple of 8 with
the usual divisibility rule (minimum 8).  The temporal path reuses blocks
2-4 on stride-4 flow stacks, entering through a 1x1 adapter that maps the
2*(lam-1) flow channels onto block2's input width.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .flownet import FLOW_STRIDE

INPUT_HEIGHT = 112
INPUT_WIDTH = 96


class BackboneError(ValueError):
    pass


def make_divisible(v: float, divisor: int = 8) -> int:
    new_v = max(divisor, int(v + divisor / 2) // divisor * divisor)
    if new_v < 0.9 * v:
        new_v += divisor
    return new_v


class SqueezeExcite(nn.Module):
    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        mid = make_divisible(channels / reduction)
        self.fc1 = nn.Conv2d(channels, mid, 1)
        self.fc2 = nn.Conv2d(mid, channels, 1)
        self.act = nn.ReLU(inplace=True)
        self.gate = nn.Hardsigmoid()

    def forward(self, x):
        s = x.mean((2, 3), keepdim=True)
        s = self.gate(self.fc2(self.act(self.fc1(s))))
        return x * s


def conv_bn(cin: int, cout: int, kernel: int, stride: int, act: type[nn.Module]) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel, stride, kernel // 2, bias=False),
        nn.BatchNorm2d(cout),
        act(),
    )


class InvertedResidual(nn.Module):
    def __init__(self, cin, cexp, cout, kernel, stride, use_se, act):
        super().__init__()
        layers: list[nn.Module] = []
        if cexp != cin:
            layers += [nn.Conv2d(cin, cexp, 1, bias=False), nn.BatchNorm2d(cexp), act()]
        layers += [
            nn.Conv2d(cexp, cexp, kernel, stride, kernel // 2, groups=cexp, bias=False),
            nn.BatchNorm2d(cexp),
            act(),
        ]
        if use_se:
            layers.append(SqueezeExcite(cexp))
        layers += [nn.Conv2d(cexp, cout, 1, bias=False), nn.BatchNorm2d(cout)]
        self.block = nn.Sequential(*layers)
        self.use_res = stride == 1 and cin == cout

    def forward(self, x):
        out = self.block(x)
        return x + out if self.use_res else out


# (kernel, base expansion, base out, SE, activation, stride)
_RECIPE = [
    (3, 16, 16, True, nn.ReLU, 2),
    (3, 72, 24, False, nn.ReLU, 2),
    (3, 88, 24, False, nn.ReLU, 1),
    (5, 96, 40, True, nn.Hardswish, 2),
    (5, 240, 40, True, nn.Hardswish, 1),
    (5, 240, 40, True, nn.Hardswish, 1),
    (5, 120, 48, True, nn.Hardswish, 1),
    (5, 144, 48, True, nn.Hardswish, 1),
    (5, 288, 96, True, nn.Hardswish, 2),
    (5, 576, 96, True, nn.Hardswish, 1),
    (5, 576, 96, True, nn.Hardswish, 1),
]
_LAST_CONV_BASE = 576
_BLOCK_ROWS = {1: (0, 1), 2: (1, 3), 3: (3, 8), 4: (8, 11)}


class Backbone(nn.Module):
    """Four-block feature extractor; strides 4 / 8 / 16 / 32 per block."""

    low_stride = 8
    high_stride = 32

    def __init__(self, width: float = 0.75):
        super().__init__()
        c = lambda base: make_divisible(base * width)
        self.width = width
        stem_out = c(16)

        def rows(block: int, cin: int) -> tuple[nn.Sequential, int]:
            lo, hi = _BLOCK_ROWS[block]
            mods = []
            for kernel, exp, out, se, act, stride in _RECIPE[lo:hi]:
                mods.append(InvertedResidual(cin, c(exp), c(out), kernel, stride, se, act))
                cin = c(out)
            return nn.Sequential(*mods), cin

        b1, cout = rows(1, stem_out)
        self.block1 = nn.Sequential(conv_bn(3, stem_out, 3, 2, nn.Hardswish), *b1)
        self.block2, cout2 = rows(2, cout)
        self.block3, cout3 = rows(3, cout2)
        b4, cout4 = rows(4, cout3)
        self.block4 = nn.Sequential(*b4, conv_bn(cout4, c(_LAST_CONV_BASE), 1, 1, nn.Hardswish))

        self.block2_in = cout  # width the temporal adapter must map onto
        self.low_channels = cout2
        self.high_channels = c(_LAST_CONV_BASE)
        # the published resolution contract: flow sits at 8x the deep stride
        assert FLOW_STRIDE * 8 == self.high_stride

    def extract_low(self, frames: torch.Tensor) -> torch.Tensor:
        """(N, 3, 112, 96) -> (N, C, 14, 12); weights shared across frames."""
        if frames.dim() != 4 or frames.shape[1:] != (3, INPUT_HEIGHT, INPUT_WIDTH):
            raise BackboneError(
                f"expected (N, 3, {INPUT_HEIGHT}, {INPUT_WIDTH}) frames, got {tuple(frames.shape)}"
            )
        return self.block2(self.block1(frames))

    def extract_high(self, fused: torch.Tensor) -> torch.Tensor:
        """(N, C, 14, 12) stride-8 features -> (N, C', 4, 3) at stride 32."""
        if fused.dim() != 4 or fused.shape[1] != self.low_channels:
            raise BackboneError(
                f"expected {self.low_channels} channels at stride 8, got {tuple(fused.shape)}"
            )
        return self.block4(self.block3(fused))

    def forward_temporal(self, adapted: torch.Tensor) -> torch.Tensor:
        """Stride-4 adapter output through blocks 2-4 -> stride 32."""
        if adapted.shape[1] != self.block2_in:
            raise BackboneError(
                f"temporal input must have {self.block2_in} channels, got {adapted.shape[1]}"
            )
        return self.block4(self.block3(self.block2(adapted)))


class TemporalAdapter(nn.Module):
    """1x1 conv mapping a 2*(lam-1)-channel flow stack onto block2's width."""

    def __init__(self, lam: int, block2_in: int):
        super().__init__()
        if lam < 2:
            raise BackboneError("temporal branch needs lam >= 2 (no flow pairs otherwise)")
        self.lam = lam
        self.adapter = nn.Conv2d(2 * (lam - 1), block2_in, 1)

    def forward(self, flow_stack: torch.Tensor) -> torch.Tensor:
        if flow_stack.shape[1] != 2 * (self.lam - 1):
            raise BackboneError(
                f"expected {2 * (self.lam - 1)} flow channels, got {flow_stack.shape[1]}"
            )
        return self.adapter(flow_stack)
