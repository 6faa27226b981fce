"""Two-stage training: flow pretraining, then end-to-end finetuning.

Stage 1 trains the flow estimator alone against the analytic ground-truth
flow (pooled to stride 4) under the endpoint-error loss.  Stage 2 finetunes
the whole detector under the weighted BCE with two optimizer parameter
groups: the flow net at a 10x smaller learning rate than everything else,
both driven by the same warm-up + cosine-warm-restart schedule so the ratio
holds at every step.

Runs are deterministic given the config seed with in-process data loading
(no worker processes exist to introduce nondeterminism).
"""

from __future__ import annotations

import copy
import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .archive import export_model
from .dataset import ClipRecord
from .flownet import FaceFlowNet, aepe, pool_flow
from .head import weighted_bce
from .metrics import auc as auc_metric
from .metrics import eer as eer_metric
from .model import MODES, MaskDetector
from .synth import select_frames, Clip


class TrainError(ValueError):
    pass


@dataclass
class TrainConfig:
    # stage 1 (flow pretraining)
    flow_lr: float = 1e-4
    flow_weight_decay: float = 4e-4
    flow_epochs: int = 20
    flow_batch_size: int = 16
    # stage 2 (end-to-end finetuning)
    lr: float = 2e-4
    finetune_flow_lr: float = 2e-5
    weight_decay: float = 1e-3
    warmup_epochs: float = 2.0
    epochs: int = 30
    restart_period: float = 10.0
    restart_mult: float = 2.0
    lr_min_ratio: float = 0.01
    batch_size: int = 16
    mu: float = 1.0
    lam: int = 5
    mode: str = "full"
    attention_mode: str = "shared"
    width: float = 0.75
    seed: int = 0
    patience: int = 10
    val_fraction: float = 0.2
    # augmentation
    augment_prob: float = 0.5
    noise_sigma: tuple[float, float] = (0.01, 0.05)
    brightness: float = 0.2
    contrast: float = 0.2
    cutout_max_area: float = 0.2
    log_weights: bool = False

    def validate(self) -> None:
        for name in ("flow_lr", "lr", "finetune_flow_lr"):
            if getattr(self, name) <= 0:
                raise TrainError(f"{name} must be positive")
        if self.warmup_epochs >= self.epochs:
            raise TrainError("warm-up must be shorter than the run")
        if self.mode not in MODES:
            raise TrainError(f"unknown ablation mode {self.mode!r}")
        min_lam = 1 if self.mode == "spatial_only" else 2
        if self.lam < min_lam:
            raise TrainError(f"mode {self.mode} needs lam >= {min_lam}")
        if not 0 < self.restart_mult:
            raise TrainError("restart_mult must be positive")

    @classmethod
    def paper_profile(cls, dataset: str = "small") -> "TrainConfig":
        """Published settings: batch 120, 150 epochs; mu and weight decay by
        dataset family ("small" = the two small mask sets, "large" = the big
        one).  Not the desk-scale acceptance path."""
        mu = 0.5 if dataset == "small" else 3.0
        wd = 1e-2 if dataset == "small" else 1e-3
        return cls(batch_size=120, epochs=150, mu=mu, weight_decay=wd)


def lr_schedule(step: float, cfg: TrainConfig, lr_max: float | None = None) -> float:
    """Learning rate at fractional epoch ``step``.

    Linear warm-up to lr_max over ``warmup_epochs``, then cosine cycles
    lr_min + (lr_max - lr_min)(1 + cos(pi u / T)) / 2 with the period doubling
    at each restart; lr_min = lr_max * lr_min_ratio.  Proportional in lr_max,
    so per-group rates keep their exact ratio through the whole run.
    """
    if lr_max is None:
        lr_max = cfg.lr
    step = max(0.0, float(step))
    if cfg.warmup_epochs > 0 and step < cfg.warmup_epochs:
        return lr_max * step / cfg.warmup_epochs
    lr_min = lr_max * cfg.lr_min_ratio
    u = step - cfg.warmup_epochs
    period = cfg.restart_period
    while u >= period:
        u -= period
        period *= cfg.restart_mult
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * u / period))


def augment_clip(frames: np.ndarray, cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    """Augment all frames of one clip with a single parameter draw.

    Each transform fires with probability ``augment_prob``: additive Gaussian
    noise, brightness/contrast jitter about the clip mean, and one mean-filled
    cut-out rectangle shared by all frames.  Output clamped to [0, 1].
    """
    do_noise = rng.random() < cfg.augment_prob
    do_bc = rng.random() < cfg.augment_prob
    do_cut = rng.random() < cfg.augment_prob
    if not (do_noise or do_bc or do_cut):
        return frames
    out = frames.astype(np.float32).copy()
    if do_noise:
        sigma = rng.uniform(*cfg.noise_sigma)
        out += rng.normal(0.0, sigma, size=out.shape).astype(np.float32)
    if do_bc:
        c = rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast)
        b = rng.uniform(-cfg.brightness, cfg.brightness)
        m = out.mean()
        out = (out - m) * c + m + b
    if do_cut:
        h, w = out.shape[1:3]
        wf = rng.uniform(0.1, 0.44)
        hf = rng.uniform(0.1, min(0.44, cfg.cutout_max_area / wf))
        cw, ch = max(1, int(wf * w)), max(1, int(hf * h))
        x0 = rng.integers(0, w - cw + 1)
        y0 = rng.integers(0, h - ch + 1)
        out[:, y0 : y0 + ch, x0 : x0 + cw, :] = out.mean()
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _to_clip_tensor(frames: np.ndarray) -> torch.Tensor:
    """(lam, H, W, 3) float32 -> (lam, 3, H, W) tensor."""
    return torch.from_numpy(np.ascontiguousarray(frames.transpose(0, 3, 1, 2)))


def split_records_by_subject(
    records: list[ClipRecord], val_fraction: float, seed: int
) -> tuple[list[ClipRecord], list[ClipRecord]]:
    subjects = sorted({r.subject for r in records})
    if len(subjects) < 2:
        raise TrainError("need at least 2 subjects to carve out a validation split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(subjects))
    n_val = max(1, int(round(val_fraction * len(subjects))))
    if n_val >= len(subjects):
        n_val = len(subjects) - 1
    val_subjects = {subjects[i] for i in order[:n_val]}
    train = [r for r in records if r.subject not in val_subjects]
    val = [r for r in records if r.subject in val_subjects]
    return train, val


# ---------------------------------------------------------------------------
# stage 1
# ---------------------------------------------------------------------------


@dataclass
class FlowTrainResult:
    state_dict: dict
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_aepe: float = float("inf")


def build_flow_pairs(records: list[ClipRecord]) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """All adjacent frame pairs with stride-4 ground truth flow."""
    pairs = []
    for rec in records:
        frames = rec.frames_f32()
        flows = rec.flows()
        for t in range(len(flows)):
            gt4 = pool_flow(flows[t]).numpy()
            pairs.append((frames[t], frames[t + 1], gt4))
    return pairs


def zero_flow_baseline(pairs) -> float:
    """AEPE of the constant-zero predictor; the stage-1 sanity oracle."""
    total = 0.0
    for _, _, gt in pairs:
        g = torch.from_numpy(gt)
        total += float(aepe(torch.zeros_like(g), g))
    return total / len(pairs)


def train_flow_stage(
    records: list[ClipRecord],
    cfg: TrainConfig,
    run_dir: Path | None = None,
    val_records: list[ClipRecord] | None = None,
    quiet: bool = True,
) -> FlowTrainResult:
    cfg.validate()
    if not records:
        raise TrainError("empty dataset")
    if val_records is None:
        records, val_records = split_records_by_subject(records, cfg.val_fraction, cfg.seed)
    if not val_records:
        raise TrainError("no validation split")

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    net = FaceFlowNet()
    opt = torch.optim.AdamW(net.parameters(), lr=cfg.flow_lr, weight_decay=cfg.flow_weight_decay)

    train_pairs = build_flow_pairs(records)
    val_pairs = build_flow_pairs(val_records)

    def batches(pairs, shuffle):
        idx = rng.permutation(len(pairs)) if shuffle else np.arange(len(pairs))
        for lo in range(0, len(idx), cfg.flow_batch_size):
            chunk = [pairs[i] for i in idx[lo : lo + cfg.flow_batch_size]]
            a = torch.stack([_to_clip_tensor(p[0][None])[0] for p in chunk])
            b = torch.stack([_to_clip_tensor(p[1][None])[0] for p in chunk])
            gt = torch.stack([torch.from_numpy(p[2]) for p in chunk])
            yield a, b, gt

    result = FlowTrainResult(state_dict=copy.deepcopy(net.state_dict()))
    for epoch in range(cfg.flow_epochs):
        net.train()
        losses = []
        for a, b, gt in batches(train_pairs, shuffle=True):
            opt.zero_grad()
            loss = aepe(net(a, b), gt)
            loss.backward()
            opt.step()
            losses.append(float(loss))
        net.eval()
        with torch.no_grad():
            val_losses = [float(aepe(net(a, b), gt)) for a, b, gt in batches(val_pairs, False)]
        val_aepe = float(np.mean(val_losses))
        row = {
            "epoch": epoch,
            "train_aepe": float(np.mean(losses)),
            "val_aepe": val_aepe,
            "lr": cfg.flow_lr,
        }
        result.history.append(row)
        if not quiet:
            print(f"[flow] epoch {epoch}: train {row['train_aepe']:.4f} val {val_aepe:.4f}")
        if val_aepe < result.best_val_aepe:
            result.best_val_aepe = val_aepe
            result.best_epoch = epoch
            result.state_dict = copy.deepcopy(net.state_dict())

    if run_dir is not None:
        _write_run_artifacts(run_dir, cfg, result.history, summary={
            "stage": "flow",
            "best_epoch": result.best_epoch,
            "best_val_aepe": result.best_val_aepe,
        })
        net.load_state_dict(result.state_dict)
        export_model(net, Path(run_dir) / "flow_weights.mpw")
    return result


# ---------------------------------------------------------------------------
# stage 2
# ---------------------------------------------------------------------------


@dataclass
class FinetuneResult:
    state_dict: dict
    model: MaskDetector
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_eer: float = float("inf")
    best_val_auc: float = 0.0
    weight_log: list[np.ndarray] = field(default_factory=list)


def predict_scores(model: MaskDetector, records: list[ClipRecord], lam: int) -> np.ndarray:
    """Deterministic per-clip scores: equally spaced frames, no augmentation."""
    model.eval()
    scores = []
    with torch.no_grad():
        for lo in range(0, len(records), 32):
            chunk = records[lo : lo + 32]
            clips = []
            for rec in chunk:
                frames = rec.frames_f32()
                sel = select_frames(_as_clip(rec, frames), lam, "equally_spaced")
                clips.append(_to_clip_tensor(sel.frames))
            out = model(torch.stack(clips))
            scores.extend(float(v) for v in out["p"])
    return np.asarray(scores)


def _as_clip(rec: ClipRecord, frames: np.ndarray) -> Clip:
    # select_frames only touches .frames; landmarks are irrelevant here
    return Clip(clip_id=rec.clip_id, label=rec.label, frames=frames,
                landmarks=np.zeros((len(frames), 5, 2)))


def finetune_stage(
    train_records: list[ClipRecord],
    val_records: list[ClipRecord],
    cfg: TrainConfig,
    flow_state: dict | None = None,
    run_dir: Path | None = None,
    quiet: bool = True,
) -> FinetuneResult:
    cfg.validate()
    if not train_records or not val_records:
        raise TrainError("need non-empty train and validation record lists")

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = MaskDetector(
        lam=cfg.lam, mode=cfg.mode, width=cfg.width, attention_mode=cfg.attention_mode
    )
    if model.uses_flow:
        if flow_state is None:
            raise TrainError(f"mode {cfg.mode} needs pretrained flow weights")
        model.flownet.load_state_dict(flow_state)
        if cfg.mode == "frozen_flow":
            for p in model.flownet.parameters():
                p.requires_grad_(False)

    flow_params = [] if cfg.mode == "frozen_flow" else model.flow_parameters()
    opt = torch.optim.AdamW(
        [
            {"params": flow_params, "lr": cfg.finetune_flow_lr},
            {"params": model.non_flow_parameters(), "lr": cfg.lr},
        ],
        weight_decay=cfg.weight_decay,
    )
    group_max = (cfg.finetune_flow_lr, cfg.lr)

    labels = np.array([r.label for r in train_records])
    n_batches = max(1, math.ceil(len(train_records) / cfg.batch_size))

    result = FinetuneResult(state_dict=copy.deepcopy(model.state_dict()), model=model)
    stale = 0
    for epoch in range(cfg.epochs):
        model.train()
        order = rng.permutation(len(train_records))
        losses = []
        lr_now = cfg.lr
        for bi in range(n_batches):
            take = order[bi * cfg.batch_size : (bi + 1) * cfg.batch_size]
            if len(take) == 0:
                continue
            clips, ys = [], []
            for i in take:
                rec = train_records[i]
                frames = rec.frames_f32()
                sel = select_frames(_as_clip(rec, frames), cfg.lam, "random_sequential", rng)
                clips.append(_to_clip_tensor(augment_clip(sel.frames, cfg, rng)))
                ys.append(rec.label)
            batch = torch.stack(clips)
            y = torch.tensor(ys, dtype=torch.float32)

            t = epoch + bi / n_batches
            lr_now = lr_schedule(t, cfg)
            for group, base in zip(opt.param_groups, group_max):
                group["lr"] = lr_schedule(t, cfg, lr_max=base)

            opt.zero_grad()
            out = model(batch)
            loss = weighted_bce(out["p"], y, cfg.mu)
            loss.backward()
            opt.step()
            losses.append(float(loss))
            if cfg.log_weights and out["weights"] is not None:
                result.weight_log.append(out["weights"].detach().numpy().copy())

        val_scores = predict_scores(model, val_records, cfg.lam)
        val_labels = np.array([r.label for r in val_records])
        val_eer, _ = eer_metric(val_scores, val_labels)
        val_auc = auc_metric(val_scores, val_labels)
        row = {
            "epoch": epoch,
            "loss": float(np.mean(losses)),
            "val_eer": val_eer,
            "val_auc": val_auc,
            "lr": lr_now,
        }
        result.history.append(row)
        if not quiet:
            print(
                f"[finetune/{cfg.mode}] epoch {epoch}: loss {row['loss']:.4f} "
                f"val_eer {val_eer:.4f} val_auc {val_auc:.4f}"
            )
        if val_eer < result.best_val_eer - 1e-12:
            result.best_val_eer = val_eer
            result.best_val_auc = val_auc
            result.best_epoch = epoch
            result.state_dict = copy.deepcopy(model.state_dict())
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    model.load_state_dict(result.state_dict)
    if run_dir is not None:
        _write_run_artifacts(run_dir, cfg, result.history, summary={
            "stage": "finetune",
            "mode": cfg.mode,
            "best_epoch": result.best_epoch,
            "best_val_eer": result.best_val_eer,
            "best_val_auc": result.best_val_auc,
        })
        export_model(model, Path(run_dir) / "weights.mpw")
        if result.weight_log:
            _write_weight_log(Path(run_dir) / "weights_log.csv", result.weight_log)
    return result


def _write_weight_log(path: Path, weight_log: list[np.ndarray]) -> None:
    lam = weight_log[0].shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["batch", "sample"] + [f"w{i}" for i in range(lam)])
        for bi, mat in enumerate(weight_log):
            for si, row in enumerate(mat):
                writer.writerow([bi, si] + [repr(float(v)) for v in row])


def _write_run_artifacts(run_dir: Path, cfg: TrainConfig, history: list[dict], summary: dict) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"{k} = {v}" for k, v in asdict(cfg).items()]
    (run_dir / "config.txt").write_text("\n".join(lines) + "\n")
    if history:
        with open(run_dir / "history.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(history[0].keys()))
            writer.writeheader()
            writer.writerows(history)
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
