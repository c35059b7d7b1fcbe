"""Desk-scale video metrics.

Identity similarity and temporal consistency use a deterministic hand-built
image encoder (color histograms + moment invariants + pooled luminance,
z-scored with fixed constants) instead of pretrained feature extractors;
dynamic degree uses exhaustive block matching instead of a learned optical
flow. The substitutes keep the metrics' ordinal role: methods are only ever
compared on the same corpus under the same encoder.

Pixel-space metric conventions (pixels in [0,1], higher is better unless
noted): temporal flickering = 1 - mean |adjacent frame difference|; motion
smoothness = 1 - mean |second difference| / 2; dynamic degree = mean matched
block displacement magnitude in px/frame, reported raw.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

EMBED_DIM = 32

_LUMA = np.array([0.299, 0.587, 0.114])

# Fixed z-score constants for the 47 raw features: 24 histogram bins
# (background-heavy first bin), 7 moment invariants, 16 pooled luminances.
_FEAT_MEAN = np.concatenate([
    np.tile([0.70, 0.04, 0.04, 0.04, 0.04, 0.04, 0.05, 0.05], 3),
    np.array([0.16, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
    np.full(16, 0.10),
])
_FEAT_SCALE = np.concatenate([
    np.full(24, 0.08),
    np.array([0.08, 0.02, 0.02, 0.02, 0.004, 0.004, 0.004]),
    np.full(16, 0.30),
])


class MetricError(ValueError):
    pass


def _hu_invariants(lum: np.ndarray) -> np.ndarray:
    """Seven translation/scale-normalized moment invariants of a luminance image."""
    h, w = lum.shape
    total = lum.sum()
    if total <= 0.0:
        return np.zeros(7)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = (lum * ys).sum() / total, (lum * xs).sum() / total
    dy, dx = ys - cy, xs - cx

    def mu(p, q):
        return (lum * dx ** p * dy ** q).sum()

    def eta(p, q):
        return mu(p, q) / total ** (1.0 + (p + q) / 2.0)

    n20, n02, n11 = eta(2, 0), eta(0, 2), eta(1, 1)
    n30, n03, n21, n12 = eta(3, 0), eta(0, 3), eta(2, 1), eta(1, 2)
    return np.array([
        n20 + n02,
        (n20 - n02) ** 2 + 4 * n11 ** 2,
        (n30 - 3 * n12) ** 2 + (3 * n21 - n03) ** 2,
        (n30 + n12) ** 2 + (n21 + n03) ** 2,
        (n30 - 3 * n12) * (n30 + n12) * ((n30 + n12) ** 2 - 3 * (n21 + n03) ** 2)
        + (3 * n21 - n03) * (n21 + n03) * (3 * (n30 + n12) ** 2 - (n21 + n03) ** 2),
        (n20 - n02) * ((n30 + n12) ** 2 - (n21 + n03) ** 2) + 4 * n11 * (n30 + n12) * (n21 + n03),
        (3 * n21 - n03) * (n30 + n12) * ((n30 + n12) ** 2 - 3 * (n21 + n03) ** 2)
        - (n30 - 3 * n12) * (n21 + n03) * (3 * (n30 + n12) ** 2 - (n21 + n03) ** 2),
    ])


def encode_image(image: np.ndarray, embed_dim: int = EMBED_DIM) -> np.ndarray:
    """Deterministic image embedding, padded or truncated to `embed_dim`."""
    if image.ndim != 3 or image.shape[-1] != 3:
        raise MetricError(f"encoder expects H,W,3 image, got {image.shape}")
    hist = [np.histogram(image[..., ch], bins=8, range=(0.0, 1.0))[0] / image[..., ch].size
            for ch in range(3)]
    lum = image @ _LUMA
    h, w = lum.shape
    bh, bw = max(h // 4, 1), max(w // 4, 1)
    pooled = lum[: bh * 4, : bw * 4].reshape(4, bh, 4, bw).mean(axis=(1, 3)).reshape(-1)
    raw = np.concatenate([np.concatenate(hist), _hu_invariants(lum), pooled])
    feats = (raw - _FEAT_MEAN) / _FEAT_SCALE
    if embed_dim <= feats.size:
        return feats[:embed_dim]
    return np.concatenate([feats, np.zeros(embed_dim - feats.size)])


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise MetricError("zero-norm embedding")
    return float(a @ b / (na * nb))


def identity_similarity(video: np.ndarray, reference: np.ndarray, encoder=encode_image) -> float:
    ref = encoder(reference)
    return float(np.mean([_cosine(encoder(frame), ref) for frame in video]))


def temporal_flickering(video: np.ndarray) -> float:
    if video.shape[0] < 2:
        raise MetricError("temporal flickering needs at least 2 frames")
    return 1.0 - float(np.abs(np.diff(video, axis=0)).mean())


def motion_smoothness(video: np.ndarray) -> float:
    if video.shape[0] < 3:
        raise MetricError("motion smoothness needs at least 3 frames")
    second = video[2:] - 2.0 * video[1:-1] + video[:-2]
    return 1.0 - float(np.abs(second).mean()) / 2.0


def temporal_consistency(video: np.ndarray, encoder=encode_image) -> float:
    if video.shape[0] < 2:
        raise MetricError("temporal consistency needs at least 2 frames")
    embs = [encoder(frame) for frame in video]
    return float(np.mean([_cosine(a, b) for a, b in zip(embs[:-1], embs[1:])]))


BLOCK = 8
SEARCH = 4


def _frame_flow(prev: np.ndarray, nxt: np.ndarray) -> np.ndarray:
    """Best (dy,dx) per 8x8 block by sum-of-absolute-differences.

    Candidate windows wrap around the frame edges. Ties prefer the smallest
    displacement magnitude, then lexicographic (dy,dx) order; the scan below
    visits candidates in lexicographic order, so strict improvement keeps
    the first (smallest) of any full tie.
    """
    h, w = prev.shape[:2]
    by, bx = h // BLOCK, w // BLOCK
    pb = prev.reshape(by, BLOCK, bx, BLOCK, -1).transpose(0, 2, 1, 3, 4)
    best_sad = np.full((by, bx), np.inf)
    best_mag = np.full((by, bx), np.inf)
    best = np.zeros((by, bx, 2), dtype=np.int64)
    for dy in range(-SEARCH, SEARCH + 1):
        for dx in range(-SEARCH, SEARCH + 1):
            cand = np.roll(nxt, (-dy, -dx), axis=(0, 1))
            cb = cand.reshape(by, BLOCK, bx, BLOCK, -1).transpose(0, 2, 1, 3, 4)
            sad = np.abs(pb - cb).sum(axis=(2, 3, 4))
            mag = dy * dy + dx * dx
            take = (sad < best_sad) | ((sad == best_sad) & (mag < best_mag))
            best_sad = np.where(take, sad, best_sad)
            best_mag = np.where(take, mag, best_mag)
            best[take] = (dy, dx)
    return best


def dynamic_degree(video: np.ndarray) -> float:
    f, h, w = video.shape[:3]
    if h % BLOCK or w % BLOCK:
        raise MetricError(f"frame dims {h}x{w} must be divisible by {BLOCK}")
    if f < 2:
        raise MetricError("dynamic degree needs at least 2 frames")
    mags = []
    for t in range(f - 1):
        flow = _frame_flow(video[t], video[t + 1])
        mags.append(np.sqrt((flow.astype(np.float64) ** 2).sum(axis=-1)))
    return float(np.mean(mags))


def dd_deviation(video: np.ndarray, reference_clips: list[np.ndarray]) -> float:
    if not reference_clips:
        raise MetricError("reference clip set must be non-empty")
    benchmark = float(np.mean([dynamic_degree(r) for r in reference_clips]))
    return abs(dynamic_degree(video) - benchmark)


def metric_report(video: np.ndarray, reference_image: np.ndarray,
                  reference_clips: list[np.ndarray], encoder=encode_image) -> dict[str, float]:
    return {
        "identity_sim": identity_similarity(video, reference_image, encoder),
        "t_flicker": temporal_flickering(video),
        "motion_smooth": motion_smoothness(video),
        "t_cons": temporal_consistency(video, encoder),
        "dynamic_degree": dynamic_degree(video),
        "dd_deviation": dd_deviation(video, reference_clips),
    }


def per_frame_traces(video: np.ndarray, reference_image: np.ndarray,
                     encoder=encode_image) -> dict[str, np.ndarray]:
    """Frame-resolved traces behind the aggregate metrics.

    identity_sim has one entry per frame; the temporal metrics have one entry
    per adjacent pair (or triple for smoothness, displacement for flow).
    """
    ref = encoder(reference_image)
    embs = [encoder(frame) for frame in video]
    traces = {
        "identity_sim": np.array([_cosine(e, ref) for e in embs]),
        "t_flicker": 1.0 - np.abs(np.diff(video, axis=0)).mean(axis=(1, 2, 3)),
        "t_cons": np.array([_cosine(a, b) for a, b in zip(embs[:-1], embs[1:])]),
    }
    if video.shape[0] >= 3:
        second = video[2:] - 2.0 * video[1:-1] + video[:-2]
        traces["motion_smooth"] = 1.0 - np.abs(second).mean(axis=(1, 2, 3)) / 2.0
    if video.shape[1] % BLOCK == 0 and video.shape[2] % BLOCK == 0:
        traces["dynamic_degree"] = np.array([
            float(np.sqrt((_frame_flow(video[t], video[t + 1]).astype(np.float64) ** 2)
                          .sum(axis=-1)).mean())
            for t in range(video.shape[0] - 1)])
    return traces


REPORT_COLUMNS = ["clip_id", "identity_sim", "t_flicker", "motion_smooth",
                  "t_cons", "dynamic_degree", "dd_deviation"]


def write_report(path: Path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow([row["clip_id"]] + [f"{row[c]:.9g}" for c in REPORT_COLUMNS[1:]])
