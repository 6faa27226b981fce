"""Synthetic face-motion clips with analytic ground-truth optical flow.

A clip is rendered from a parametric 2D face (elliptical head, two eyes with
controllable lid aperture, a mouth with controllable opening) deformed by a
time-varying warp.  Real clips deform non-rigidly (eyelids and mouth oscillate,
skin texture flickers slightly); mask clips move only rigidly and carry a
static texture plus a seam ring near the face boundary.

Because every frame is an evaluation of the same canonical scene under a known
warp, the inter-frame flow and the landmark tracks are available in closed
form: flow_t(p) = warp_{t+1}(warp_t^{-1}(p)) - p.  The rigid part inverts
analytically; the local eye/mouth deformation is a contraction and is inverted
by fixed-point iteration to ~1e-9 px.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

# Canvas is 96 wide x 112 high; coordinates are (x, y) = (column, row).
FRAME_HEIGHT = 112
FRAME_WIDTH = 96

# 5-point alignment template for the 96x112 crop: eye centers at y = 0.35*H,
# mouth corners at y = 0.78*H, nose between.  Fixed here; not taken from any
# external convention.
TEMPLATE_LANDMARKS = np.array(
    [
        [30.0, 39.2],  # left eye center
        [66.0, 39.2],  # right eye center
        [48.0, 63.0],  # nose tip
        [34.0, 87.4],  # left mouth corner
        [62.0, 87.4],  # right mouth corner
    ],
    dtype=np.float64,
)


class SynthError(ValueError):
    """Invalid synthesis spec or degenerate geometry."""


@dataclass
class SynthSpec:
    """Motion/appearance profile for one generated clip.

    Amplitudes are in pixels (translation), radians (rotation) or dimensionless
    aperture fractions (blink/mouth).  ``drift`` translates the face by a fixed
    amount every frame (cumulative); ``sway`` is a bounded oscillation.
    """

    frames: int = 10
    height: int = FRAME_HEIGHT
    width: int = FRAME_WIDTH
    # rigid motion
    drift: tuple[float, float] = (0.0, 0.0)
    sway_amp: tuple[float, float] = (1.2, 0.8)
    sway_period: float = 9.0
    rot_amp: float = 0.02
    rot_period: float = 11.0
    # non-rigid motion (real clips only)
    blink_amp: float = 0.8
    blink_period: float = 7.0
    blink_duty: float = 0.45
    mouth_amp: float = 0.5
    mouth_period: float = 8.0
    # appearance
    texture_noise: float = 0.012
    seam_contrast: float = 0.10
    # identity
    seed: int = 0
    subject_jitter_seed: int | None = None

    def validate(self) -> None:
        if self.frames < 2:
            raise SynthError(f"clip needs at least 2 frames, got {self.frames}")
        if self.height <= 0 or self.width <= 0:
            raise SynthError(f"non-positive frame size {self.height}x{self.width}")
        for name in ("rot_amp", "blink_amp", "mouth_amp", "texture_noise", "seam_contrast"):
            if getattr(self, name) < 0:
                raise SynthError(f"{name} must be non-negative")
        if any(a < 0 for a in self.sway_amp):
            raise SynthError("sway_amp must be non-negative")
        if self.blink_amp > 0.85 or self.mouth_amp > 0.6:
            # keeps the local deformation a contraction, so the warp inverts
            raise SynthError("blink_amp > 0.85 or mouth_amp > 0.6 breaks warp invertibility")


@dataclass
class Clip:
    """An ordered sequence of aligned face frames with ground truth."""

    clip_id: str
    label: int  # 1 = real face, 0 = mask
    frames: np.ndarray  # (T, H, W, 3) float32 in [0, 1]
    landmarks: np.ndarray  # (T, 5, 2) float64, (x, y) pixel coords
    gt_flows: np.ndarray | None = None  # (T-1, 2, H, W) float32, (u, v)
    states: np.ndarray | None = None  # (T, 2) eye/mouth height-over-width
    subject: str = ""

    def validate(self) -> None:
        T, H, W, _ = self.frames.shape
        if self.landmarks.shape != (T, 5, 2):
            raise SynthError("landmark array shape mismatch")
        if self.gt_flows is not None and self.gt_flows.shape[0] != T - 1:
            raise SynthError("need exactly T-1 ground-truth flows")
        x, y = self.landmarks[..., 0], self.landmarks[..., 1]
        if (x < 0).any() or (x > W - 1).any() or (y < 0).any() or (y > H - 1).any():
            raise SynthError("landmarks outside frame bounds")


@dataclass
class FrameSubset:
    """lam frames picked from a clip, indices strictly increasing, 1-based."""

    indices: list[int]
    frames: np.ndarray  # (lam, H, W, 3)


@dataclass
class FaceGeometry:
    center: tuple[float, float] = (48.0, 58.0)
    head_axes: tuple[float, float] = (34.0, 46.0)
    eye_centers: tuple[tuple[float, float], ...] = ((30.0, 39.2), (66.0, 39.2))
    eye_half: tuple[float, float] = (7.0, 4.2)
    iris_radius: float = 2.2
    nose: tuple[float, float] = (48.0, 63.0)
    nose_half: tuple[float, float] = (3.0, 5.0)
    mouth_center: tuple[float, float] = (48.0, 87.4)
    mouth_half: tuple[float, float] = (14.0, 4.0)
    skin: tuple[float, float, float] = (0.76, 0.60, 0.50)
    pattern_freq: tuple[float, float] = (0.55, 0.38)
    pattern_phase: tuple[float, float] = (0.0, 0.0)

    @property
    def landmarks(self) -> np.ndarray:
        le, re = self.eye_centers
        mx, my = self.mouth_center
        mw = self.mouth_half[0]
        return np.array(
            [le, re, self.nose, (mx - mw, my), (mx + mw, my)], dtype=np.float64
        )


def _subject_geometry(jitter_seed: int | None) -> FaceGeometry:
    geo = FaceGeometry()
    if jitter_seed is None:
        return geo
    rng = np.random.default_rng(jitter_seed)
    cx = 48.0 + rng.uniform(-1.5, 1.5)
    cy = 58.0 + rng.uniform(-1.5, 1.5)
    ax = 34.0 + rng.uniform(-2.5, 2.5)
    ay = 46.0 + rng.uniform(-2.5, 2.5)
    spread = 18.0 + rng.uniform(-1.5, 1.5)
    eye_y = 39.2 + rng.uniform(-1.5, 1.5)
    mouth_y = 87.4 + rng.uniform(-1.5, 1.5)
    skin = tuple(np.clip(np.array(geo.skin) + rng.uniform(-0.06, 0.06, 3), 0.3, 0.95))
    return FaceGeometry(
        center=(cx, cy),
        head_axes=(ax, ay),
        eye_centers=((cx - spread, eye_y), (cx + spread, eye_y)),
        eye_half=(7.0 + rng.uniform(-0.8, 0.8), 4.2 + rng.uniform(-0.4, 0.4)),
        iris_radius=2.2 + rng.uniform(-0.3, 0.3),
        nose=(cx, 63.0 + rng.uniform(-1.0, 1.0)),
        mouth_center=(cx, mouth_y),
        mouth_half=(14.0 + rng.uniform(-1.5, 1.5), 4.0 + rng.uniform(-0.4, 0.4)),
        skin=skin,
        pattern_freq=(rng.uniform(0.4, 0.7), rng.uniform(0.3, 0.55)),
        pattern_phase=(rng.uniform(0, 2 * math.pi), rng.uniform(0, 2 * math.pi)),
    )


def _smoothstep(v: np.ndarray, edge: float = 1.0) -> np.ndarray:
    """0 outside (v >= edge), 1 inside (v <= -edge), smooth in between."""
    t = np.clip((edge - v) / (2.0 * edge), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _render_scene(q: np.ndarray, geo: FaceGeometry, seam: float) -> np.ndarray:
    """Color of the canonical scene at continuous points q (..., 2) -> (..., 3).

    Edges are antialiased over ~1 px so sub-pixel motion shows up in pixel
    intensities; flat binary shapes would hide small flow from any estimator.
    """
    x, y = q[..., 0], q[..., 1]
    # textured backdrop: motion evidence exists everywhere on the canvas,
    # not only on the face, so the global warp is recoverable from pixels
    bg = 0.16 + 0.05 * np.sin(0.23 * x + 1.1) * np.sin(0.19 * y + 0.7) + 0.03 * np.sin(
        0.61 * x + 0.31 * y
    )
    out = np.repeat(bg[..., None], 3, axis=-1)

    cx, cy = geo.center
    ax, ay = geo.head_axes
    r_head = np.sqrt(((x - cx) / ax) ** 2 + ((y - cy) / ay) ** 2)
    # signed distance approximation in px: (r-1) * local radius scale
    head_in = _smoothstep((r_head - 1.0) * min(ax, ay), 1.0)

    shade = 1.0 - 0.22 * r_head**2
    pattern = 1.0 + 0.05 * np.sin(geo.pattern_freq[0] * x + geo.pattern_phase[0]) * np.sin(
        geo.pattern_freq[1] * y + geo.pattern_phase[1]
    )
    skin = np.stack([c * shade * pattern for c in geo.skin], axis=-1)
    out = out * (1 - head_in[..., None]) + skin * head_in[..., None]

    if seam > 0:
        band = np.exp(-(((r_head - 0.86) * min(ax, ay) / 1.4) ** 2))
        out *= 1.0 - seam * (band * head_in)[..., None]

    for ex, ey in geo.eye_centers:
        r_eye = np.sqrt(((x - ex) / geo.eye_half[0]) ** 2 + ((y - ey) / geo.eye_half[1]) ** 2)
        eye_in = _smoothstep((r_eye - 1.0) * geo.eye_half[1], 0.8)
        sclera = np.array([0.93, 0.93, 0.92])
        out = out * (1 - eye_in[..., None]) + sclera * eye_in[..., None]
        r_iris = np.sqrt((x - ex) ** 2 + (y - ey) ** 2) / geo.iris_radius
        iris_in = _smoothstep((r_iris - 1.0) * geo.iris_radius, 0.8)
        out = out * (1 - iris_in[..., None]) + np.array([0.18, 0.12, 0.10]) * iris_in[..., None]

    nx, ny = geo.nose
    r_nose = np.sqrt(((x - nx) / geo.nose_half[0]) ** 2 + ((y - ny) / geo.nose_half[1]) ** 2)
    nose_in = _smoothstep((r_nose - 1.0) * geo.nose_half[0], 1.0) * 0.35
    out *= 1.0 - 0.3 * nose_in[..., None]

    mx, my = geo.mouth_center
    r_mouth = np.sqrt(((x - mx) / geo.mouth_half[0]) ** 2 + ((y - my) / geo.mouth_half[1]) ** 2)
    mouth_in = _smoothstep((r_mouth - 1.0) * geo.mouth_half[1], 0.8)
    out = out * (1 - mouth_in[..., None]) + np.array([0.45, 0.16, 0.16]) * mouth_in[..., None]

    return np.clip(out, 0.0, 1.0)


@dataclass
class _Pose:
    """Warp parameters of one frame: canonical -> frame coordinates."""

    shift: np.ndarray  # (2,)
    angle: float
    blink: float  # eyelid squash factor in [0, blink_amp]
    mouth: float  # mouth aperture change in [-mouth_amp, mouth_amp]


class _Warp:
    """Forward warp W(q) = Rigid(q + D(q)) and its numerical inverse."""

    def __init__(self, pose: _Pose, geo: FaceGeometry):
        self.pose = pose
        self.geo = geo
        c, s = math.cos(pose.angle), math.sin(pose.angle)
        self.rot = np.array([[c, -s], [s, c]])
        self.center = np.asarray(geo.center)
        # ~3 px falloff scales: deformation is local to the eyes/mouth
        self.sigma_eye = 6.0
        self.sigma_mouth = 9.0

    def _deform(self, q: np.ndarray) -> np.ndarray:
        d = np.zeros_like(q)
        if self.pose.blink != 0.0:
            for ex, ey in self.geo.eye_centers:
                r2 = (q[..., 0] - ex) ** 2 + (q[..., 1] - ey) ** 2
                g = np.exp(-r2 / (2 * self.sigma_eye**2))
                d[..., 1] -= self.pose.blink * (q[..., 1] - ey) * g
        if self.pose.mouth != 0.0:
            mx, my = self.geo.mouth_center
            r2 = (q[..., 0] - mx) ** 2 + (q[..., 1] - my) ** 2
            g = np.exp(-r2 / (2 * self.sigma_mouth**2))
            d[..., 1] += self.pose.mouth * (q[..., 1] - my) * g
        return d

    def forward(self, q: np.ndarray) -> np.ndarray:
        u = q + self._deform(q)
        return (u - self.center) @ self.rot.T + self.center + self.pose.shift

    def inverse(self, p: np.ndarray, tol: float = 1e-9, max_iter: int = 200) -> np.ndarray:
        u = (p - self.center - self.pose.shift) @ self.rot + self.center
        if self.pose.blink == 0.0 and self.pose.mouth == 0.0:
            return u
        # q = u - D(q): contraction since |grad D| <= blink_amp < 1
        q = u.copy()
        for _ in range(max_iter):
            q_next = u - self._deform(q)
            step = np.abs(q_next - q).max()
            q = q_next
            if step < tol:
                break
        return q


def _motion_profile(spec: SynthSpec, label: int, rng: np.random.Generator) -> list[_Pose]:
    """Per-frame warp parameters. Masks get the rigid part only."""
    T = spec.frames
    ph = rng.uniform(0, 2 * math.pi, size=5)
    blink_start = rng.uniform(0, spec.blink_period)
    poses = []
    for t in range(T):
        dx = spec.drift[0] * t + spec.sway_amp[0] * math.sin(2 * math.pi * t / spec.sway_period + ph[0])
        dy = spec.drift[1] * t + spec.sway_amp[1] * math.sin(2 * math.pi * t / spec.sway_period + ph[1])
        ang = spec.rot_amp * math.sin(2 * math.pi * t / spec.rot_period + ph[2])
        blink = 0.0
        mouth = 0.0
        if label == 1:
            # blink as a brief raised-cosine pulse, not a slow sinusoid
            u = ((t - blink_start) % spec.blink_period) / spec.blink_period
            if u < spec.blink_duty:
                blink = spec.blink_amp * 0.5 * (1 - math.cos(2 * math.pi * u / spec.blink_duty))
            mouth = spec.mouth_amp * math.sin(2 * math.pi * t / spec.mouth_period + ph[3])
        poses.append(_Pose(shift=np.array([dx, dy]), angle=ang, blink=blink, mouth=mouth))
    return poses


def generate_clip(spec: SynthSpec, label: int, clip_id: str = "clip", subject: str = "") -> Clip:
    """Render one labeled clip with exact flow, landmarks and state scores.

    Deterministic given (spec, label): two calls with equal seeds produce
    bitwise-identical arrays.
    """
    spec.validate()
    if label not in (0, 1):
        raise SynthError(f"label must be 0 or 1, got {label}")
    rng = np.random.default_rng(spec.seed)
    geo = _subject_geometry(spec.subject_jitter_seed)
    poses = _motion_profile(spec, label, rng)
    seam = spec.seam_contrast if label == 0 else 0.0

    H, W, T = spec.height, spec.width, spec.frames
    ys, xs = np.mgrid[0:H, 0:W]
    grid = np.stack([xs, ys], axis=-1).astype(np.float64)  # (H, W, 2) as (x, y)

    frames = np.empty((T, H, W, 3), dtype=np.float32)
    landmarks = np.empty((T, 5, 2), dtype=np.float64)
    states = np.empty((T, 2), dtype=np.float64)
    gt_flows = np.empty((T - 1, 2, H, W), dtype=np.float32)
    lm_canon = geo.landmarks

    warps = [_Warp(p, geo) for p in poses]
    inv_prev = None
    for t, warp in enumerate(warps):
        inv = warp.inverse(grid)
        img = _render_scene(inv, geo, seam)
        if label == 1 and spec.texture_noise > 0:
            img = img + rng.normal(0.0, spec.texture_noise, size=img.shape)
        frames[t] = np.clip(img, 0.0, 1.0).astype(np.float32)
        landmarks[t] = warp.forward(lm_canon)
        states[t] = (
            geo.eye_half[1] * (1.0 - poses[t].blink) / geo.eye_half[0],
            geo.mouth_half[1] * (1.0 + poses[t].mouth) / geo.mouth_half[0],
        )
        if t > 0:
            flow = warps[t].forward(inv_prev) - grid  # (H, W, 2)
            gt_flows[t - 1] = flow.transpose(2, 0, 1).astype(np.float32)
        inv_prev = inv

    clip = Clip(
        clip_id=clip_id,
        label=label,
        frames=frames,
        landmarks=landmarks,
        gt_flows=gt_flows,
        states=states,
        subject=subject,
    )
    clip.validate()
    return clip


def select_frames(
    clip: Clip, lam: int, mode: str = "equally_spaced", rng: np.random.Generator | None = None
) -> FrameSubset:
    """Pick lam frames in sequential order; indices are 1-based.

    ``random_sequential`` draws a uniformly random increasing subset (training);
    ``equally_spaced`` is deterministic (evaluation), index_i =
    round_half_down(1 + (i-1)(T-1)/(lam-1)).
    """
    T = clip.frames.shape[0]
    if lam < 1:
        raise SynthError(f"lam must be >= 1, got {lam}")
    if lam > T:
        raise SynthError(f"cannot select {lam} frames from a {T}-frame clip")
    if mode == "random_sequential":
        if rng is None:
            rng = np.random.default_rng()
        idx = np.sort(rng.choice(T, size=lam, replace=False)) + 1
        indices = [int(i) for i in idx]
    elif mode == "equally_spaced":
        if lam == 1:
            indices = [(T + 1) // 2]
        else:
            indices = []
            for i in range(1, lam + 1):
                x = 1 + Fraction((i - 1) * (T - 1), lam - 1)
                indices.append(int(math.ceil(x - Fraction(1, 2))))
    else:
        raise SynthError(f"unknown selection mode {mode!r}")
    return FrameSubset(indices=indices, frames=clip.frames[[i - 1 for i in indices]])


# ---------------------------------------------------------------------------
# face alignment (least-squares similarity onto the 5-point template)
# ---------------------------------------------------------------------------


def estimate_similarity(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Least-squares similarity transform src -> dst.

    Returns (A, scale, angle) where A is the 2x3 matrix so that
    dst ~= A @ [x, y, 1]^T.  Rejects degenerate (coincident or collinear)
    source points, for which the similarity is not unique.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2 or src.shape[0] < 3:
        raise SynthError("need matching (N>=3, 2) landmark arrays")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    cs, cd = src - mu_s, dst - mu_d
    var_s = (cs**2).sum() / src.shape[0]
    cov = cd.T @ cs / src.shape[0]
    U, D, Vt = np.linalg.svd(cov)
    if var_s < 1e-9 or D[1] < 1e-9 * max(D[0], 1.0):
        raise SynthError("degenerate landmarks: coincident or collinear")
    S = np.eye(2)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[1, 1] = -1.0
    R = U @ S @ Vt
    scale = float(np.trace(np.diag(D) @ S) / var_s)
    t = mu_d - scale * R @ mu_s
    A = np.concatenate([scale * R, t[:, None]], axis=1)
    angle = float(math.atan2(R[1, 0], R[0, 0]))
    return A, scale, angle


def bilinear_sample(img: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Sample img (H, W, C) at float coords (..., 2) as (x, y), edge-clamped."""
    H, W = img.shape[:2]
    x = np.clip(coords[..., 0], 0.0, W - 1.0)
    y = np.clip(coords[..., 1], 0.0, H - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def align_face(
    frame: np.ndarray,
    landmarks: np.ndarray,
    template: np.ndarray = TEMPLATE_LANDMARKS,
    out_hw: tuple[int, int] = (FRAME_HEIGHT, FRAME_WIDTH),
) -> np.ndarray:
    """Warp a frame so its landmarks land on the template (96x112 canvas)."""
    A, _, _ = estimate_similarity(landmarks, template)
    return warp_with_transform(frame, A, out_hw)


def warp_with_transform(frame: np.ndarray, A: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Resample frame under the 2x3 similarity A (source -> output coords)."""
    H, W = out_hw
    Ainv = np.linalg.inv(np.vstack([A, [0, 0, 1]]))[:2]
    ys, xs = np.mgrid[0:H, 0:W]
    pts = np.stack([xs, ys, np.ones_like(xs)], axis=-1).astype(np.float64)
    src = pts @ Ainv.T
    return bilinear_sample(frame, src).astype(frame.dtype)


def align_clip_frames(
    frames: np.ndarray,
    first_landmarks: np.ndarray,
    template: np.ndarray = TEMPLATE_LANDMARKS,
) -> np.ndarray:
    """Align all frames of a subset with ONE transform from the first frame.

    Using a single transform keeps inter-frame motion intact; per-frame
    alignment would cancel the very signal the temporal branch consumes.
    """
    A, _, _ = estimate_similarity(first_landmarks, template)
    return np.stack([warp_with_transform(f, A, (FRAME_HEIGHT, FRAME_WIDTH)) for f in frames])


def make_profile_specs(
    base: SynthSpec, n_subjects: int, clips_per_subject: int, seed: int = 0
) -> list[tuple[SynthSpec, int, str, str]]:
    """Expand a base spec into per-clip specs with per-subject geometry.

    Yields (spec, label, clip_id, subject); labels alternate so each subject
    contributes the same number of real and mask clips.
    """
    out = []
    root = np.random.default_rng(seed)
    for s in range(n_subjects):
        subject_seed = int(root.integers(0, 2**31 - 1))
        subject = f"s{s:03d}"
        for k in range(clips_per_subject):
            label = 1 if k % 2 == 0 else 0
            clip_seed = int(root.integers(0, 2**31 - 1))
            spec = replace(base, seed=clip_seed, subject_jitter_seed=subject_seed)
            kind = "real" if label else "mask"
            out.append((spec, label, f"{subject}_{kind}_{k:03d}", subject))
    return out
