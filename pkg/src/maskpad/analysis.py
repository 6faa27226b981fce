"""Frame-weight vs facial-action analysis.

Raw eye/mouth state scores are height-over-width aperture ratios, one per
frame.  They are made comparable across videos by a per-video softmax over the
selected frames, then a truncation-normalization over the pooled values: clip
to the empirical 5th-95th percentile and min-max rescale to [0, 1].  Eye and
mouth pools are normalized separately.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class AnalysisError(ValueError):
    pass


@dataclass
class StateScores:
    raw: np.ndarray  # (n, lam) positive ratios
    relative: np.ndarray  # (n, lam) after softmax + truncation-normalization
    softmax: np.ndarray  # (n, lam) per-video softmax, rows sum to 1


def relative_state_scores(raw: np.ndarray) -> StateScores:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[1] < 2:
        raise AnalysisError("need an (n, lam >= 2) score matrix")
    if not np.isfinite(raw).all() or (raw <= 0).any():
        raise AnalysisError("raw state scores must be positive and finite")
    shifted = raw - raw.max(axis=1, keepdims=True)  # softmax, overflow-safe
    e = np.exp(shifted)
    soft = e / e.sum(axis=1, keepdims=True)
    lo, hi = np.percentile(soft, [5.0, 95.0])
    if hi - lo < 1e-12:
        rel = np.full_like(soft, 0.5)
    else:
        rel = (np.clip(soft, lo, hi) - lo) / (hi - lo)
    return StateScores(raw=raw, relative=rel, softmax=soft)


def attention_heatmap(
    eye_rel: np.ndarray,
    mouth_rel: np.ndarray,
    weights: np.ndarray,
    bins: int = 10,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean frame weight over a bins x bins grid of (eye, mouth) scores.

    Returns (mean_grid, count_grid); cells with count 0 hold NaN.
    """
    eye_rel = np.asarray(eye_rel, dtype=np.float64).ravel()
    mouth_rel = np.asarray(mouth_rel, dtype=np.float64).ravel()
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if not (len(eye_rel) == len(mouth_rel) == len(weights)) or len(weights) == 0:
        raise AnalysisError("need equal-length non-empty score/weight arrays")
    ei = np.minimum((np.clip(eye_rel, 0, 1) * bins).astype(int), bins - 1)
    mi = np.minimum((np.clip(mouth_rel, 0, 1) * bins).astype(int), bins - 1)
    total = np.zeros((bins, bins))
    count = np.zeros((bins, bins))
    np.add.at(total, (ei, mi), weights)
    np.add.at(count, (ei, mi), 1.0)
    with np.errstate(invalid="ignore"):
        mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return mean, count


def write_heatmap_csv(path: Path, mean: np.ndarray, count: np.ndarray) -> None:
    """One row per occupied cell: eye_bin, mouth_bin, mean_weight, count."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["eye_bin", "mouth_bin", "mean_weight", "count"])
        for i in range(mean.shape[0]):
            for j in range(mean.shape[1]):
                if count[i, j] > 0:
                    writer.writerow([i, j, f"{mean[i, j]:.8f}", int(count[i, j])])


def write_frame_csv(
    path: Path,
    clip_ids: list[str],
    frame_indices: np.ndarray,
    eye_rel: np.ndarray,
    mouth_rel: np.ndarray,
    weights: np.ndarray,
) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clip_id", "frame", "eye_rel", "mouth_rel", "weight"])
        for cid, fi, er, mr, w in zip(clip_ids, frame_indices, eye_rel, mouth_rel, weights):
            writer.writerow([cid, int(fi), f"{er:.8f}", f"{mr:.8f}", f"{w:.8f}"])
