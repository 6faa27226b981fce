"""On-disk clip layout, manifest handling and lazy clip records.

Layout::

    root/
      manifest.tsv                  # clip_id <TAB> label, one clip per line
      clips/<clip_id>/
        frame_000.png ...           # 8-bit RGB frames
        landmarks.txt               # T lines of "x0 y0 ... x4 y4"
        label.txt                   # "1" (real) or "0" (mask)
        states.txt                  # T lines of "eye_score mouth_score"
        flow_000.f32 ...            # T-1 flow fields (synthetic clips only)

Flow files are raw little-endian float32 with a 16-byte header
(magic ``FFLO``, uint32 H, uint32 W, uint32 2) followed by (H, W, 2) data in
row-major order, channels interleaved as (u, v).

Subjects are encoded as the clip_id prefix up to the first underscore
(``s012_real_003`` -> subject ``s012``); anything before the first underscore
counts as the subject id, which is what the split protocols group by.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .synth import Clip

FLOW_MAGIC = b"FFLO"


class DatasetError(ValueError):
    pass


def write_flow(path: Path, flow: np.ndarray) -> None:
    """flow: (2, H, W) float32."""
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise DatasetError(f"flow must be (2, H, W), got {flow.shape}")
    _, H, W = flow.shape
    data = np.ascontiguousarray(flow.transpose(1, 2, 0), dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(FLOW_MAGIC + struct.pack("<III", H, W, 2))
        fh.write(data.tobytes())


def read_flow(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != FLOW_MAGIC:
            raise DatasetError(f"{path}: not a flow file")
        H, W, C = struct.unpack("<III", header[4:])
        if C != 2:
            raise DatasetError(f"{path}: expected 2 channels, got {C}")
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != H * W * 2:
        raise DatasetError(f"{path}: truncated payload")
    return data.reshape(H, W, 2).transpose(2, 0, 1).copy()


def write_clip(clip: Clip, root: Path) -> Path:
    clip_dir = Path(root) / "clips" / clip.clip_id
    clip_dir.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(clip.frames):
        img = Image.fromarray((np.clip(frame, 0, 1) * 255.0).round().astype(np.uint8))
        img.save(clip_dir / f"frame_{t:03d}.png")
    np.savetxt(clip_dir / "landmarks.txt", clip.landmarks.reshape(len(clip.frames), -1), fmt="%.6f")
    (clip_dir / "label.txt").write_text(f"{clip.label}\n")
    if clip.states is not None:
        np.savetxt(clip_dir / "states.txt", clip.states, fmt="%.8f")
    if clip.gt_flows is not None:
        for t, flow in enumerate(clip.gt_flows):
            write_flow(clip_dir / f"flow_{t:03d}.f32", flow)
    return clip_dir


def write_manifest(root: Path, entries: list[tuple[str, int]]) -> None:
    lines = [f"{clip_id}\t{label}" for clip_id, label in entries]
    (Path(root) / "manifest.tsv").write_text("\n".join(lines) + "\n")


def read_manifest(root: Path) -> list[tuple[str, int]]:
    path = Path(root) / "manifest.tsv"
    if not path.exists():
        raise DatasetError(f"no manifest.tsv under {root}")
    entries = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        clip_id, label = line.split("\t")
        entries.append((clip_id, int(label)))
    return entries


@dataclass
class ClipRecord:
    """Lazy handle to one on-disk clip; frames are cached as uint8."""

    clip_id: str
    label: int
    path: Path
    _frames: np.ndarray | None = None

    @property
    def subject(self) -> str:
        return self.clip_id.split("_", 1)[0]

    @property
    def num_frames(self) -> int:
        return len(sorted(self.path.glob("frame_*.png")))

    def frames_u8(self) -> np.ndarray:
        if self._frames is None:
            paths = sorted(self.path.glob("frame_*.png"))
            if not paths:
                raise DatasetError(f"{self.path}: no frames")
            self._frames = np.stack([np.asarray(Image.open(p).convert("RGB")) for p in paths])
        return self._frames

    def frames_f32(self, indices: list[int] | None = None) -> np.ndarray:
        """(k, H, W, 3) float32 in [0, 1]; indices are 1-based when given."""
        frames = self.frames_u8()
        if indices is not None:
            frames = frames[[i - 1 for i in indices]]
        return frames.astype(np.float32) / 255.0

    def landmarks(self) -> np.ndarray:
        lm = np.loadtxt(self.path / "landmarks.txt", dtype=np.float64, ndmin=2)
        return lm.reshape(lm.shape[0], 5, 2)

    def states(self) -> np.ndarray:
        path = self.path / "states.txt"
        if not path.exists():
            raise DatasetError(f"{self.path}: no state scores")
        return np.loadtxt(path, dtype=np.float64, ndmin=2)

    def flows(self) -> np.ndarray:
        paths = sorted(self.path.glob("flow_*.f32"))
        if not paths:
            raise DatasetError(f"{self.path}: no ground-truth flow")
        return np.stack([read_flow(p) for p in paths])

    def has_flows(self) -> bool:
        return any(self.path.glob("flow_*.f32"))


def scan_dataset(root: Path) -> list[ClipRecord]:
    root = Path(root)
    records = []
    for clip_id, label in read_manifest(root):
        clip_dir = root / "clips" / clip_id
        if not clip_dir.is_dir():
            raise DatasetError(f"manifest lists {clip_id} but {clip_dir} is missing")
        records.append(ClipRecord(clip_id=clip_id, label=label, path=clip_dir))
    return records


def group_by_subject(records: list[ClipRecord]) -> dict[str, list[ClipRecord]]:
    groups: dict[str, list[ClipRecord]] = {}
    for rec in records:
        groups.setdefault(rec.subject, []).append(rec)
    return groups


def build_dataset(
    root: Path,
    base_spec,
    n_subjects: int,
    clips_per_subject: int,
    seed: int = 0,
    write_flows: bool = True,
) -> list[ClipRecord]:
    """Generate and persist a full synthetic dataset; deterministic in seed."""
    from .synth import generate_clip, make_profile_specs

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for spec, label, clip_id, subject in make_profile_specs(
        base_spec, n_subjects, clips_per_subject, seed
    ):
        clip = generate_clip(spec, label, clip_id=clip_id, subject=subject)
        if not write_flows:
            clip.gt_flows = None
        write_clip(clip, root)
        entries.append((clip_id, label))
    write_manifest(root, entries)
    return scan_dataset(root)
