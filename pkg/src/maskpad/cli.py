"""Command-line interface.

Subcommands::

    synth              generate a synthetic dataset
    train-flow         stage 1: pretrain the flow estimator
    train              stage 2: finetune the detector (--ablation, --frames)
    eval               score a dataset under a split protocol, write reports
    analyze-attention  frame weights vs eye/mouth state scores, CSV outputs
    export             write a weight archive (optionally from another one)
    import             validate an archive and print its manifest
    report             aggregate fold reports into a mean +- std summary

Exit status: 0 success; 2 usage errors (bad flags); 3 invalid configs or
values; 4 missing files or malformed inputs.  Every subcommand is
deterministic under a fixed --seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import analysis, archive, config, dataset, metrics, splits, training
from .model import MaskDetector, ModelError
from .synth import SynthError, SynthSpec, select_frames
from .training import TrainConfig, TrainError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INVALID = 3
EXIT_MISSING = 4


def _load_cfg(cls, args, flag_names: dict[str, str]):
    """File config (if any) first, then explicit CLI flags on top."""
    instance = cls()
    if getattr(args, "config", None):
        instance = config.apply_overrides(instance, config.read_kv_file(args.config))
    overrides = {}
    for field, attr in flag_names.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[field] = str(value)
    return config.apply_overrides(instance, overrides)


def _build_model(cfg: TrainConfig, weights: Path | None) -> MaskDetector:
    torch.manual_seed(cfg.seed)
    model = MaskDetector(
        lam=cfg.lam, mode=cfg.mode, width=cfg.width, attention_mode=cfg.attention_mode
    )
    if weights is not None:
        archive.import_model(model, weights)
    model.eval()
    return model


def cmd_synth(args) -> int:
    spec = _load_cfg(SynthSpec, args, {"frames": "frames", "seed": "seed"})
    spec.validate()
    records = dataset.build_dataset(
        Path(args.out),
        spec,
        n_subjects=args.subjects,
        clips_per_subject=args.clips_per_subject,
        seed=spec.seed,
        write_flows=not args.no_flows,
    )
    print(f"wrote {len(records)} clips under {args.out}")
    return EXIT_OK


def cmd_train_flow(args) -> int:
    cfg = _load_cfg(
        TrainConfig,
        args,
        {"flow_epochs": "epochs", "flow_lr": "lr", "seed": "seed",
         "flow_batch_size": "batch_size"},
    )
    records = dataset.scan_dataset(Path(args.data))
    result = training.train_flow_stage(records, cfg, run_dir=Path(args.out), quiet=args.quiet)
    print(
        f"stage-1 done: best val AEPE {result.best_val_aepe:.4f} "
        f"(epoch {result.best_epoch}); weights in {args.out}/flow_weights.mpw"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_cfg(
        TrainConfig,
        args,
        {"mode": "ablation", "lam": "frames", "epochs": "epochs", "seed": "seed",
         "batch_size": "batch_size", "mu": "mu", "lr": "lr"},
    )
    cfg.validate()
    if cfg.mode == "equal_weights":
        cfg = dataclasses.replace(cfg, log_weights=True)
    records = dataset.scan_dataset(Path(args.data))
    train_recs, val_recs = training.split_records_by_subject(records, cfg.val_fraction, cfg.seed)

    flow_state = None
    if cfg.mode != "spatial_only":
        if not args.flow_weights:
            raise TrainError(f"--flow-weights is required for mode {cfg.mode}")
        flow_net = training.FaceFlowNet()
        archive.import_model(flow_net, Path(args.flow_weights))
        flow_state = flow_net.state_dict()

    result = training.finetune_stage(
        train_recs, val_recs, cfg, flow_state=flow_state, run_dir=Path(args.out),
        quiet=args.quiet,
    )
    print(
        f"stage-2 done ({cfg.mode}): best val EER {result.best_val_eer:.4f}, "
        f"AUC {result.best_val_auc:.4f}; weights in {args.out}/weights.mpw"
    )
    return EXIT_OK


def _records_for_subjects(records, subjects):
    keep = set(subjects)
    return [r for r in records if r.subject in keep]


def cmd_eval(args) -> int:
    cfg = _load_cfg(TrainConfig, args, {"mode": "ablation", "lam": "frames", "seed": "seed"})
    records = dataset.scan_dataset(Path(args.data))
    model = _build_model(cfg, Path(args.weights))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    subjects = sorted({r.subject for r in records})
    if args.protocol == "holdout":
        folds = [splits.Split(train=[], val=[], test=subjects)]
    elif args.protocol == "loocv":
        folds = splits.make_splits(subjects, "loocv", seed=cfg.seed)
    else:
        folds = splits.make_splits(subjects, "kfold", seed=cfg.seed, k=args.k)

    paths = []
    for i, fold in enumerate(folds):
        test = _records_for_subjects(records, fold.test)
        scores = training.predict_scores(model, test, cfg.lam)
        labels = np.array([r.label for r in test])
        val = _records_for_subjects(records, fold.val)
        val_scores = training.predict_scores(model, val, cfg.lam) if val else None
        val_labels = np.array([r.label for r in val]) if val else None
        report = metrics.evaluate_scores(
            scores, labels, clip_ids=[r.clip_id for r in test],
            val_scores=val_scores, val_labels=val_labels,
            protocol=f"{args.protocol}/fold{i}",
        )
        path = out_dir / f"report_fold{i:03d}.json"
        path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
        paths.append(path)
        print(
            f"fold {i}: EER {report.eer:.4f} AUC {report.auc:.4f} HTER {report.hter:.4f}"
        )
    print(f"wrote {len(paths)} report(s) under {out_dir}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _load_cfg(TrainConfig, args, {"lam": "frames", "seed": "seed"})
    records = dataset.scan_dataset(Path(args.data))
    model = _build_model(dataclasses.replace(cfg, mode="full"), Path(args.weights))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    clip_ids, fidx, eye_raw, mouth_raw, weight_rows = [], [], [], [], []
    with torch.no_grad():
        for rec in records:
            frames = rec.frames_f32()
            sel = select_frames(training._as_clip(rec, frames), cfg.lam, "equally_spaced")
            states = rec.states()
            out = model(training._to_clip_tensor(sel.frames)[None])
            weight_rows.append(out["weights"][0].numpy())
            eye_raw.append([states[i - 1, 0] for i in sel.indices])
            mouth_raw.append([states[i - 1, 1] for i in sel.indices])
            clip_ids.extend([rec.clip_id] * cfg.lam)
            fidx.extend(sel.indices)

    eye = analysis.relative_state_scores(np.asarray(eye_raw))
    mouth = analysis.relative_state_scores(np.asarray(mouth_raw))
    weights = np.asarray(weight_rows)
    mean, count = analysis.attention_heatmap(eye.relative, mouth.relative, weights)
    analysis.write_heatmap_csv(out_dir / "heatmap.csv", mean, count)
    analysis.write_frame_csv(
        out_dir / "frames.csv", clip_ids, np.asarray(fidx),
        eye.relative.ravel(), mouth.relative.ravel(), weights.ravel(),
    )
    print(f"wrote {out_dir / 'heatmap.csv'} and {out_dir / 'frames.csv'}")
    return EXIT_OK


def cmd_export(args) -> int:
    cfg = _load_cfg(TrainConfig, args, {"mode": "ablation", "lam": "frames", "seed": "seed"})
    model = _build_model(cfg, Path(args.source) if args.source else None)
    manifest = archive.export_model(model, Path(args.out))
    size = Path(args.out).stat().st_size
    print(f"exported {len(manifest)} tensors, {size / 1e6:.2f} MB -> {args.out}")
    return EXIT_OK


def cmd_import(args) -> int:
    manifest, payload = archive.read_manifest(Path(args.archive))
    total = sum(int(np.prod(e["shape"])) for e in manifest)
    for entry in manifest:
        print(f"{entry['name']}  {entry['dtype']}  {tuple(entry['shape'])}")
    print(f"{len(manifest)} tensors, {total} values, payload {len(payload)} bytes")
    if args.out:
        tensors = archive.load_archive(Path(args.archive))
        archive.save_archive(Path(args.out), tensors)
        print(f"re-exported to {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    rows = []
    for path in args.reports:
        data = json.loads(Path(path).read_text())
        rows.append(data)
    if not rows:
        raise FileNotFoundError("no reports given")
    keys = ["hter", "eer", "auc", "bpcer_at_apcer01", "bpcer_at_apcer001"]
    summary = {}
    for key in keys:
        vals = np.array([r[key] for r in rows], dtype=np.float64)
        summary[key] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=0))}
    summary["n_folds"] = len(rows)
    print(f"{'metric':<20}{'mean':>10}{'std':>10}")
    for key in keys:
        print(f"{key:<20}{summary[key]['mean']:>10.4f}{summary[key]['std']:>10.4f}")
    if args.out:
        Path(args.out).write_text(json.dumps(summary, indent=2) + "\n")
        print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maskpad", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=20)
    p.add_argument("--clips-per-subject", type=int, default=20)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--no-flows", action="store_true", help="skip flow files")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-flow", help="stage 1: pretrain the flow estimator")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train_flow)

    p = sub.add_parser("train", help="stage 2: finetune the detector")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--flow-weights", default=None)
    p.add_argument("--ablation", default=None,
                   choices=["full", "spatial_only", "temporal_only", "equal_weights", "frozen_flow"])
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model under a protocol")
    p.add_argument("--data", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--protocol", default="holdout", choices=["holdout", "loocv", "kfold"])
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--ablation", default=None)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze-attention", help="frame weights vs facial state scores")
    p.add_argument("--data", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("export", help="write a weight archive")
    p.add_argument("--out", required=True)
    p.add_argument("--source", default=None, help="existing archive to re-export")
    p.add_argument("--ablation", default=None)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("import", help="validate an archive, print its manifest")
    p.add_argument("--archive", required=True)
    p.add_argument("--out", default=None, help="re-export for round-trip checks")
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("report", help="aggregate fold reports")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (FileNotFoundError, dataset.DatasetError, archive.ArchiveError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (SynthError, TrainError, ModelError, config.ConfigError, metrics.MetricError,
            splits.SplitError, analysis.AnalysisError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
