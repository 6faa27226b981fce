"""Biometric error metrics for presentation-attack detection.

Conventions, fixed so every value is bit-reproducible:

* scores are p = probability of "real"; labels are 1 = bona fide, 0 = attack;
* the decision rule is "accept as real iff p >= tau";
* APCER(tau) = fraction of attacks accepted, BPCER(tau) = fraction of bona
  fide rejected, HTER = (APCER + BPCER) / 2;
* threshold sweeps evaluate the midpoints of adjacent distinct scores plus
  sentinels below the minimum and above the maximum score;
* EER picks the sweep threshold minimizing |APCER - BPCER|, ties going to the
  smaller threshold, and reports (APCER + BPCER) / 2 there;
* BPCER@APCER uses the smallest sweep threshold whose APCER does not exceed
  the target, which is the operating point with the lowest BPCER;
* AUC is the Mann-Whitney statistic (ties count 1/2).

AUC is reported in [0, 1]; multiply by 100 to compare against tables quoted
on a percentage scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MetricError(ValueError):
    pass


def _check_scores(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError("scores and labels must be equal-length 1-D arrays")
    if not np.isfinite(scores).all():
        raise MetricError("scores must be finite")
    if not np.isin(labels, (0, 1)).all():
        raise MetricError("labels must be 0 (attack) or 1 (bona fide)")
    if labels.min() == labels.max():
        raise MetricError("need both classes present")
    return scores, labels.astype(np.int64)


def threshold_metrics(scores, labels, tau: float) -> dict[str, float]:
    """APCER/BPCER/HTER at a fixed threshold."""
    scores, labels = _check_scores(scores, labels)
    attacks = scores[labels == 0]
    bona = scores[labels == 1]
    apcer = float(np.mean(attacks >= tau))
    bpcer = float(np.mean(bona < tau))
    return {"apcer": apcer, "bpcer": bpcer, "hter": (apcer + bpcer) / 2.0}


def sweep_thresholds(scores: np.ndarray) -> np.ndarray:
    """Midpoints of adjacent distinct scores plus +-inf-like sentinels."""
    distinct = np.unique(np.asarray(scores, dtype=np.float64))
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    return np.concatenate([[distinct[0] - 1.0], mids, [distinct[-1] + 1.0]])


def eer(scores, labels) -> tuple[float, float]:
    """Equal error rate and the threshold realizing it."""
    scores, labels = _check_scores(scores, labels)
    attacks = scores[labels == 0]
    bona = scores[labels == 1]
    best = None
    for tau in sweep_thresholds(scores):
        apcer = float(np.mean(attacks >= tau))
        bpcer = float(np.mean(bona < tau))
        gap = abs(apcer - bpcer)
        if best is None or gap < best[0] - 1e-15:
            best = (gap, (apcer + bpcer) / 2.0, float(tau))
    return best[1], best[2]


def auc(scores, labels) -> float:
    """P(random bona fide outranks random attack), ties counted 1/2."""
    scores, labels = _check_scores(scores, labels)
    bona = np.sort(scores[labels == 1])
    attacks = np.sort(scores[labels == 0])
    # rank-based count: for each bona fide score, attacks strictly below + half ties
    lo = np.searchsorted(attacks, bona, side="left")
    hi = np.searchsorted(attacks, bona, side="right")
    wins = lo.sum() + 0.5 * (hi - lo).sum()
    return float(wins / (len(bona) * len(attacks)))


def bpcer_at_apcer(scores, labels, target: float) -> tuple[float, bool]:
    """BPCER at the lowest-BPCER threshold with APCER <= target.

    Returns (value, reliable); reliable is False when there are fewer than
    1/target attack samples, in which case the quantile is poorly resolved.
    """
    if not 0 < target < 1:
        raise MetricError(f"target must be in (0, 1), got {target}")
    scores, labels = _check_scores(scores, labels)
    attacks = scores[labels == 0]
    bona = scores[labels == 1]
    for tau in sweep_thresholds(scores):  # ascending; BPCER is non-decreasing
        if np.mean(attacks >= tau) <= target:
            return float(np.mean(bona < tau)), len(attacks) * target >= 1.0
    raise AssertionError("sweep always contains a threshold with APCER == 0")


@dataclass
class EvalReport:
    """All metrics of one protocol run, JSON-serializable via __dict__."""

    protocol: str
    n_bona: int
    n_attack: int
    eer: float
    eer_threshold: float
    auc: float
    tau: float  # decision threshold (from a validation set when available)
    apcer: float
    bpcer: float
    hter: float
    bpcer_at_apcer01: float
    bpcer_at_apcer01_reliable: bool
    bpcer_at_apcer001: float
    bpcer_at_apcer001_reliable: bool
    clip_ids: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    labels: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def evaluate_scores(
    scores,
    labels,
    clip_ids: list[str] | None = None,
    val_scores=None,
    val_labels=None,
    protocol: str = "holdout",
) -> EvalReport:
    """Full report; HTER threshold comes from the validation EER point.

    Without a validation set the threshold falls back to the test-set EER
    point, in which case HTER == EER by construction.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if val_scores is not None:
        _, tau = eer(val_scores, val_labels)
    else:
        _, tau = eer(scores, labels)
    e, et = eer(scores, labels)
    at = threshold_metrics(scores, labels, tau)
    b01, r01 = bpcer_at_apcer(scores, labels, 0.1)
    b001, r001 = bpcer_at_apcer(scores, labels, 0.01)
    return EvalReport(
        protocol=protocol,
        n_bona=int((labels == 1).sum()),
        n_attack=int((labels == 0).sum()),
        eer=e,
        eer_threshold=et,
        auc=auc(scores, labels),
        tau=float(tau),
        apcer=at["apcer"],
        bpcer=at["bpcer"],
        hter=at["hter"],
        bpcer_at_apcer01=b01,
        bpcer_at_apcer01_reliable=bool(r01),
        bpcer_at_apcer001=b001,
        bpcer_at_apcer001_reliable=bool(r001),
        clip_ids=list(clip_ids) if clip_ids is not None else [],
        scores=[float(s) for s in scores],
        labels=[int(l) for l in labels],
    )
