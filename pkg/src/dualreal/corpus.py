"""Synthetic identity x motion benchmark generator.

Identities are parametric striped sprites (circle/square/triangle/star) and
motions are parametric trajectories; clips are rasterized deterministically
with 2x supersampled anti-aliasing. Identity training data are static clips
(every frame identical) with one reference image; motion training clips use
a neutral gray sprite so motion adapters cannot absorb any target identity's
appearance.

File formats: videos are "DRV1" (magic, u32 version, u32 F/H/W/C, f64
little-endian row-major frames), reference images are binary PPM (P6,
8-bit), and the corpus manifest is JSON.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

SHAPES = ("circle", "square", "triangle", "star")
MOTION_FAMILIES = ("linear-bounce", "circular-orbit", "zigzag", "scale-pulse")
_SUPERSAMPLE = 2
_STAR_INNER = 0.45
_AREA_BOUNDS = (0.10, 0.40)


@dataclass(frozen=True)
class IdentitySpec:
    name: str
    shape: str
    fill: tuple[float, float, float]
    stripe_period: float = 6.0
    stripe_angle: float = 0.0
    stripe_contrast: float = 0.0
    scale: float = 0.5

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown sprite shape {self.shape!r}")
        if not 0.0 <= self.stripe_contrast < 1.0:
            raise ValueError("stripe contrast must be in [0,1)")


@dataclass(frozen=True)
class MotionSpec:
    name: str
    family: str
    amplitude: float
    period: float
    phase: float = 0.0

    def __post_init__(self):
        if self.family not in MOTION_FAMILIES:
            raise ValueError(f"unknown motion family {self.family!r}")
        if self.period <= 0:
            raise ValueError("period must be positive")


@dataclass
class ClipRecord:
    clip_id: str
    identity_id: str | None
    motion_id: str | None
    prompt_tokens: list[str]
    video_path: str
    reference_path: str | None

    def to_json(self) -> dict:
        return asdict(self)


NEUTRAL_SPRITE = IdentitySpec("neutral", "circle", (0.5, 0.5, 0.5), stripe_contrast=0.0, scale=0.5)

DEFAULT_IDENTITIES = [
    IdentitySpec("crimson-circle", "circle", (0.90, 0.15, 0.20), 6.0, 0.6, 0.5, 0.55),
    IdentitySpec("azure-square", "square", (0.15, 0.35, 0.95), 8.0, 1.2, 0.4, 0.50),
    IdentitySpec("emerald-triangle", "triangle", (0.10, 0.85, 0.30), 5.0, 2.0, 0.6, 0.70),
    IdentitySpec("amber-star", "star", (0.98, 0.75, 0.10), 7.0, 0.0, 0.3, 0.72),
]

DEFAULT_MOTIONS = [
    MotionSpec("bounce", "linear-bounce", amplitude=7.0, period=8.0, phase=0.0),
    MotionSpec("orbit", "circular-orbit", amplitude=6.0, period=8.0, phase=0.0),
    MotionSpec("zigzag", "zigzag", amplitude=6.0, period=8.0, phase=0.25),
    MotionSpec("pulse", "scale-pulse", amplitude=1.2, period=8.0, phase=0.0),
]

GENERIC_IDENTITIES = [
    NEUTRAL_SPRITE,
    IdentitySpec("gen-magenta", "square", (0.85, 0.20, 0.80), 6.0, 0.3, 0.4, 0.55),
    IdentitySpec("gen-cyan", "circle", (0.15, 0.80, 0.85), 7.0, 1.5, 0.5, 0.50),
    IdentitySpec("gen-olive", "triangle", (0.55, 0.60, 0.15), 5.0, 0.9, 0.3, 0.60),
    IdentitySpec("gen-violet", "star", (0.55, 0.25, 0.90), 8.0, 2.2, 0.4, 0.62),
    IdentitySpec("gen-coral", "circle", (0.95, 0.45, 0.35), 6.5, 1.0, 0.6, 0.52),
]

GENERIC_MOTIONS = [
    MotionSpec("gen-slide", "linear-bounce", amplitude=4.5, period=4.0, phase=0.5),
    MotionSpec("gen-loop", "circular-orbit", amplitude=4.5, period=8.0, phase=0.25),
    MotionSpec("gen-weave", "zigzag", amplitude=4.5, period=8.0, phase=0.0),
    MotionSpec("gen-throb", "scale-pulse", amplitude=1.2, period=4.0, phase=0.5),
]


# ---------------------------------------------------------------------------
# rasterizer
# ---------------------------------------------------------------------------

def _shape_mask(shape: str, dx: np.ndarray, dy: np.ndarray, radius: float) -> np.ndarray:
    dx, dy = np.broadcast_arrays(dx, dy)
    if shape == "circle":
        return dx * dx + dy * dy <= radius * radius
    if shape == "square":
        half = radius / np.sqrt(2.0)
        return np.maximum(np.abs(dx), np.abs(dy)) <= half
    if shape == "triangle":
        angles = np.deg2rad([90.0, 210.0, 330.0])
        vx, vy = radius * np.cos(angles), -radius * np.sin(angles)
    else:  # star
        angles = np.deg2rad(90.0 + 36.0 * np.arange(10))
        radii = np.where(np.arange(10) % 2 == 0, radius, radius * _STAR_INNER)
        vx, vy = radii * np.cos(angles), -radii * np.sin(angles)
    inside = np.zeros(dx.shape, dtype=bool)
    # even-odd rule supports the non-convex star as well as the triangle
    for i in range(len(vx)):
        x1, y1 = vx[i], vy[i]
        x2, y2 = vx[(i + 1) % len(vx)], vy[(i + 1) % len(vx)]
        crosses = (y1 > dy) != (y2 > dy)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = (x2 - x1) * (dy - y1) / (y2 - y1) + x1
        inside ^= crosses & (dx < xint)
    return inside


def render_frame(identity: IdentitySpec, cx: float, cy: float, radius: float,
                 height: int, width: int) -> np.ndarray:
    s = _SUPERSAMPLE
    ys = (np.arange(s * height) + 0.5) / s
    xs = (np.arange(s * width) + 0.5) / s
    dy = ys[:, None] - cy
    dx = xs[None, :] - cx
    mask = _shape_mask(identity.shape, dx, dy, radius)
    frame = np.zeros((s * height, s * width, 3))
    if identity.stripe_contrast > 0.0:
        along = dx * np.cos(identity.stripe_angle) + dy * np.sin(identity.stripe_angle)
        wave = np.sin(2.0 * np.pi * along / identity.stripe_period)
        shade = 1.0 - identity.stripe_contrast * (0.5 + 0.5 * wave)
    else:
        shade = np.ones_like(dx + dy)
    for ch, value in enumerate(identity.fill):
        frame[..., ch] = np.where(mask, value * shade, 0.0)
    return frame.reshape(height, s, width, s, 3).mean(axis=(1, 3))


def sprite_radius(identity: IdentitySpec, height: int, width: int) -> float:
    return identity.scale * min(height, width) / 2.0


def _triangle_wave(u: np.ndarray | float) -> np.ndarray | float:
    return 1.0 - 4.0 * np.abs(((np.asarray(u) + 0.25) % 1.0) - 0.5)


def motion_track(motion: MotionSpec | None, frames: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-frame (dx, dy, radius delta in px) relative to the rest pose."""
    t = np.arange(frames, dtype=np.float64)
    zero = np.zeros(frames)
    if motion is None:
        return zero, zero, zero
    u = t / motion.period + motion.phase
    a = motion.amplitude
    if motion.family == "linear-bounce":
        return a * _triangle_wave(u), zero, zero
    if motion.family == "circular-orbit":
        return a * np.cos(2.0 * np.pi * u), a * np.sin(2.0 * np.pi * u), zero
    if motion.family == "zigzag":
        return a * _triangle_wave(u), 0.5 * a * _triangle_wave(2.0 * t / motion.period + motion.phase), zero
    return zero, zero, a * np.sin(2.0 * np.pi * u)


def validate_specs(identity: IdentitySpec, motion: MotionSpec | None,
                   frames: int, height: int, width: int) -> None:
    """Reject sprites outside the 10-40% area band or trajectories leaving the frame."""
    radius = sprite_radius(identity, height, width)
    mask = render_frame(identity, width / 2.0, height / 2.0, radius, height, width).sum(axis=-1) > 0
    area = mask.mean()
    lo, hi = _AREA_BOUNDS
    if not lo <= area <= hi:
        raise ValueError(f"sprite {identity.name!r} covers {area:.3f} of the frame, outside [{lo},{hi}]")
    dx, dy, dr = motion_track(motion, frames)
    reach = np.sqrt(dx * dx + dy * dy) + radius + np.max(dr)
    if np.max(reach) > min(height, width) / 2.0 - 0.5:
        name = motion.name if motion is not None else "static"
        raise ValueError(f"trajectory {name!r} pushes sprite {identity.name!r} outside the frame")


def render_clip(identity: IdentitySpec, motion: MotionSpec | None,
                frames: int, height: int, width: int, seed: int = 0) -> np.ndarray:
    """Deterministic F,H,W,3 clip; `motion=None` renders a static clip."""
    validate_specs(identity, motion, frames, height, width)
    radius = sprite_radius(identity, height, width)
    dx, dy, dr = motion_track(motion, frames)
    if motion is None:
        frame = render_frame(identity, width / 2.0, height / 2.0, radius, height, width)
        return np.repeat(frame[None], frames, axis=0)
    out = np.empty((frames, height, width, 3))
    for f in range(frames):
        out[f] = render_frame(identity, width / 2.0 + dx[f], height / 2.0 + dy[f],
                              radius + dr[f], height, width)
    return out


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def write_video(path: Path, video: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    f, h, w, c = video.shape
    with open(path, "wb") as fh:
        fh.write(b"DRV1")
        fh.write(struct.pack("<5I", 1, f, h, w, c))
        fh.write(np.ascontiguousarray(video, dtype="<f8").tobytes())


def read_video(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != b"DRV1":
            raise ValueError(f"{path}: not a DRV1 video (magic {magic!r})")
        version, f, h, w, c = struct.unpack("<5I", fh.read(20))
        if version != 1:
            raise ValueError(f"{path}: unsupported DRV1 version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(f, h, w, c).astype(np.float64)


def write_ppm(path: Path, image: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h, w, _ = image.shape
    pixels = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(pixels.tobytes())


def read_ppm(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"P6":
            raise ValueError(f"{path}: not a binary PPM")
        dims = fh.readline().split()
        w, h = int(dims[0]), int(dims[1])
        maxval = int(fh.readline())
        data = np.frombuffer(fh.read(h * w * 3), dtype=np.uint8)
    return data.reshape(h, w, 3).astype(np.float64) / maxval


def write_manifest(path: Path, records: list[ClipRecord]) -> None:
    payload = {"version": 1, "clips": [r.to_json() for r in records]}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_manifest(path: Path) -> list[ClipRecord]:
    payload = json.loads(Path(path).read_text())
    return [ClipRecord(**entry) for entry in payload["clips"]]


# ---------------------------------------------------------------------------
# corpus assembly
# ---------------------------------------------------------------------------

def build_corpus(identities: list[IdentitySpec], motions: list[MotionSpec], out_dir: Path,
                 frames: int = 8, height: int = 32, width: int = 32, seed: int = 0) -> list[ClipRecord]:
    """Write static identity clips, neutral-sprite motion clips and the manifest."""
    if not identities or not motions:
        raise ValueError("identity and motion spec lists must be non-empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records: list[ClipRecord] = []
    for ident in identities:
        clip = render_clip(ident, None, frames, height, width, seed)
        video_path = f"identity_{ident.name}.drv1"
        ref_path = f"identity_{ident.name}_ref.ppm"
        write_video(out_dir / video_path, clip)
        write_ppm(out_dir / ref_path, clip[0])
        records.append(ClipRecord(
            clip_id=f"identity-{ident.name}", identity_id=ident.name, motion_id=None,
            prompt_tokens=[f"identity:{ident.name}", "motion:static"],
            video_path=video_path, reference_path=ref_path))
    for motion in motions:
        clip = render_clip(NEUTRAL_SPRITE, motion, frames, height, width, seed)
        video_path = f"motion_{motion.name}.drv1"
        write_video(out_dir / video_path, clip)
        records.append(ClipRecord(
            clip_id=f"motion-{motion.name}", identity_id=None, motion_id=motion.name,
            prompt_tokens=["identity:neutral", f"motion:{motion.name}"],
            video_path=video_path, reference_path=None))
    write_manifest(out_dir / "manifest.json", records)
    return records


def token_slots(identity_names: list[str], motion_names: list[str]) -> tuple[dict[str, int], dict[str, int]]:
    """Stable concept-name -> vocabulary slot maps.

    Slot 0 is reserved for the neutral sprite / static motion seen in
    pretraining; generic pool concepts fill the next slots, and customization
    targets are parked in the upper half of the vocabulary on rows the
    pretrained backbone never trained.
    """
    id_map = {spec.name: i for i, spec in enumerate(GENERIC_IDENTITIES)}
    mo_map = {"static": 0}
    mo_map.update({spec.name: i + 1 for i, spec in enumerate(GENERIC_MOTIONS)})
    for i, name in enumerate(sorted(set(identity_names) - set(id_map))):
        id_map[name] = 8 + i
    for i, name in enumerate(sorted(set(motion_names) - set(mo_map))):
        mo_map[name] = 8 + i
    return id_map, mo_map
