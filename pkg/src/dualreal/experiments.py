"""Experiment orchestration: pretraining, customization runs, ablations.

These routines back both the CLI and the acceptance harness. A "test case"
customizes one (identity, motion) pair from a corpus on top of a shared
pretrained backbone; ablation modes change either the architecture
(no-controller, no-groups) or the protocol (no-joint trains the two
dimensions in separate half-budget runs and blends their parameters).
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import metrics
from . import tensor as T
from .config import RunConfig
from .corpus import ClipRecord, read_ppm, read_video, render_clip, token_slots
from .dit import extract_patches
from .model import ModelBundle, build_bundle, sample_video
from .tensor import Tensor
from .trainer import ClipBatch, JointTrainer, MaskedAdamW, write_training_log


# ---------------------------------------------------------------------------
# pretraining on the generic pool
# ---------------------------------------------------------------------------

def generic_pool_clips(cfg: RunConfig) -> list[ClipBatch]:
    """Render the generic sprite pool: every identity static plus moving."""
    id_map, mo_map = token_slots([], [])
    clips: list[ClipBatch] = []
    dummy_ref = np.zeros((1, cfg.cond_dim))
    for ident in corpus_mod.GENERIC_IDENTITIES:
        for motion in [None] + list(corpus_mod.GENERIC_MOTIONS):
            video = render_clip(ident, motion, cfg.frames, cfg.height, cfg.width)
            prompt = (id_map[ident.name], mo_map["static" if motion is None else motion.name])
            clips.append(ClipBatch(video, prompt, dummy_ref))
    return clips


def pretrain_backbone(cfg: RunConfig, log_path: Path | None = None,
                      progress=None) -> ModelBundle:
    """Train a fresh backbone on the generic pool; returns it ready to freeze."""
    bundle = build_bundle(cfg.backbone_config(), cfg.seed)
    bundle.registry.set_trainable({"backbone"})
    clips = generic_pool_clips(cfg)
    rng = np.random.default_rng(cfg.seed)
    optimizer = MaskedAdamW(lr=cfg.lr, weight_decay=cfg.weight_decay)
    mask = {name: tag == "backbone" for name, _, tag in bundle.registry.entries()}
    history = []
    for step_idx in range(cfg.pretrain_steps):
        clip = clips[int(rng.integers(len(clips)))]
        t = int(rng.integers(cfg.timesteps))
        eps = rng.standard_normal(clip.video.shape)
        x_t = bundle.diffusion.add_noise(clip.video, eps, t)
        pred, _ = bundle.predict_eps_tokens(x_t, clip.prompt, t)
        loss = T.mse_loss(pred, Tensor(extract_patches(eps, bundle.cfg)))
        grads = T.backward(loss, bundle.registry,
                           [n for n, active in mask.items() if active])
        optimizer.masked_update(bundle.registry, grads, mask)
        history.append((step_idx, -1, loss.item()))
        if progress is not None and (step_idx + 1) % 200 == 0:
            progress(step_idx + 1, loss.item())
    if log_path is not None:
        write_training_log(log_path, history)
    return bundle


# ---------------------------------------------------------------------------
# corpus plumbing
# ---------------------------------------------------------------------------

@dataclass
class CorpusView:
    """Loaded corpus with prompt slots and reference embeddings resolved."""

    root: Path
    records: list[ClipRecord]
    id_map: dict[str, int]
    mo_map: dict[str, int]
    _dd_benchmark: float | None = None

    @classmethod
    def load(cls, root: Path) -> "CorpusView":
        root = Path(root)
        records = corpus_mod.read_manifest(root / "manifest.json")
        id_names = [r.identity_id for r in records if r.identity_id]
        mo_names = [r.motion_id for r in records if r.motion_id]
        id_map, mo_map = token_slots(id_names, mo_names)
        return cls(root, records, id_map, mo_map)

    def identity_record(self, name: str) -> ClipRecord:
        for r in self.records:
            if r.identity_id == name and r.motion_id is None:
                return r
        raise KeyError(f"identity {name!r} not in corpus")

    def motion_record(self, name: str) -> ClipRecord:
        for r in self.records:
            if r.motion_id == name:
                return r
        raise KeyError(f"motion {name!r} not in corpus")

    def identity_names(self) -> list[str]:
        return [r.identity_id for r in self.records if r.identity_id and r.motion_id is None]

    def motion_names(self) -> list[str]:
        return [r.motion_id for r in self.records if r.motion_id]

    def video(self, record: ClipRecord) -> np.ndarray:
        return read_video(self.root / record.video_path)

    def reference_image(self, identity: str) -> np.ndarray:
        rec = self.identity_record(identity)
        return read_ppm(self.root / rec.reference_path)

    def motion_dd_benchmark(self) -> float:
        """Mean dynamic degree of the corpus motion clips (cached)."""
        if self._dd_benchmark is None:
            self._dd_benchmark = float(np.mean(
                [metrics.dynamic_degree(self.video(self.motion_record(m)))
                 for m in self.motion_names()]))
        return self._dd_benchmark

    def pair_batches(self, identity: str, motion: str, cond_dim: int) -> tuple[ClipBatch, ClipBatch, np.ndarray]:
        """Identity batch, motion batch and the inference reference embedding."""
        ref_image = self.reference_image(identity)
        ref_emb = metrics.encode_image(ref_image, cond_dim)
        id_rec, mo_rec = self.identity_record(identity), self.motion_record(motion)
        id_video, mo_video = self.video(id_rec), self.video(mo_rec)
        inference_prompt = (self.id_map[identity], self.mo_map[motion])
        id_batch = ClipBatch(id_video, (self.id_map[identity], self.mo_map["static"]),
                             ref_emb[None, :])
        frame_embs = np.stack([metrics.encode_image(f, cond_dim) for f in mo_video])
        mo_batch = ClipBatch(mo_video, (self.id_map["neutral"], self.mo_map[motion]), frame_embs)
        return id_batch, mo_batch, ref_emb


# ---------------------------------------------------------------------------
# customization runs
# ---------------------------------------------------------------------------

def _fresh_customized(cfg: RunConfig, backbone_state: dict[str, np.ndarray],
                      seed: int, mode: str) -> ModelBundle:
    bundle = build_bundle(cfg.backbone_config(), seed, cfg.adapter_config(), cfg.groups, mode)
    for name, data in backbone_state.items():
        bundle.registry.replace(name, Tensor(data.copy()))
    return bundle


def customize(cfg: RunConfig, backbone_state: dict[str, np.ndarray], view: CorpusView,
              identity: str, motion: str, mode: str, seed: int, steps: int,
              log_path: Path | None = None) -> ModelBundle:
    """One customization run in the given mode; returns the adapted model."""
    id_batch, mo_batch, _ = view.pair_batches(identity, motion, cfg.cond_dim)
    if mode == "no-joint":
        half = steps // 2
        run_a = _fresh_customized(cfg, backbone_state, seed, "full")
        trainer_a = JointTrainer(run_a, [id_batch], [mo_batch], gamma=0.0, seed=seed,
                                 optimizer=MaskedAdamW(cfg.lr, weight_decay=cfg.weight_decay))
        trainer_a.run(half)
        run_b = _fresh_customized(cfg, backbone_state, seed, "full")
        trainer_b = JointTrainer(run_b, [id_batch], [mo_batch], gamma=1.0, seed=seed + 1,
                                 optimizer=MaskedAdamW(cfg.lr, weight_decay=cfg.weight_decay))
        trainer_b.run(steps - half)
        merged = _fresh_customized(cfg, backbone_state, seed, "full")
        blend_parameters(merged, run_a, run_b)
        if log_path is not None:
            joined = trainer_a.history + [(half + s, z, l) for s, z, l in trainer_b.history]
            write_training_log(log_path, joined)
        return merged
    bundle = _fresh_customized(cfg, backbone_state, seed, mode)
    trainer = JointTrainer(bundle, [id_batch], [mo_batch], gamma=cfg.gamma, seed=seed,
                           optimizer=MaskedAdamW(cfg.lr, weight_decay=cfg.weight_decay),
                           train_controller=mode != "no-controller")
    ckpt_dir = log_path.parent / "checkpoints" if log_path is not None else None
    trainer.run(steps, log_path, checkpoint_every=cfg.checkpoint_every if ckpt_dir else None,
                checkpoint_dir=ckpt_dir)
    return bundle


def blend_parameters(target: ModelBundle, identity_run: ModelBundle, motion_run: ModelBundle) -> None:
    """Direct parameter blending of two isolated runs (the no-joint protocol).

    Identity-tagged weights come from the identity run, motion-tagged from
    the motion run, and the two separately trained controllers are averaged.
    """
    for name, _, tag in target.registry.entries():
        if tag == "identity":
            target.registry.replace(name, Tensor(identity_run.registry.get(name).data.copy()))
        elif tag == "motion":
            target.registry.replace(name, Tensor(motion_run.registry.get(name).data.copy()))
        elif tag == "controller":
            avg = 0.5 * (identity_run.registry.get(name).data + motion_run.registry.get(name).data)
            target.registry.replace(name, Tensor(avg))


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate_pair(bundle: ModelBundle, view: CorpusView, identity: str, motion: str,
                  sample_steps: int, sample_seed: int, samples: int = 1) -> dict[str, float]:
    """Sample the customized combination and score it against the references.

    Per-sample identity scores are noisy at desk scale, so `samples` clips
    (seeds derived from `sample_seed`) are scored and averaged.
    """
    ref_image = view.reference_image(identity)
    cond_dim = bundle.adapters.cfg.cond_dim if bundle.adapters is not None else metrics.EMBED_DIM
    ref_emb = metrics.encode_image(ref_image, cond_dim)
    prompt = (view.id_map[identity], view.mo_map[motion])
    benchmark = view.motion_dd_benchmark()
    reports = []
    for k in range(samples):
        video, _ = sample_video(bundle, prompt, sample_steps, sample_seed + 7919 * k, ref_emb)
        row = {
            "identity_sim": metrics.identity_similarity(video, ref_image),
            "t_flicker": metrics.temporal_flickering(video),
            "motion_smooth": metrics.motion_smoothness(video),
            "t_cons": metrics.temporal_consistency(video),
            "dynamic_degree": metrics.dynamic_degree(video),
        }
        row["dd_deviation"] = abs(row["dynamic_degree"] - benchmark)
        reports.append(row)
    return {k: float(np.mean([r[k] for r in reports])) for k in reports[0]}


def run_mode(cfg: RunConfig, backbone_state: dict[str, np.ndarray], view: CorpusView,
             pairs: list[tuple[str, str]], mode: str, seed: int, steps: int,
             sample_steps: int, samples: int = 4) -> dict[str, float]:
    """Customize and evaluate every pair in a mode; returns mean metrics."""
    per_pair = []
    for idx, (identity, motion) in enumerate(pairs):
        bundle = customize(cfg, backbone_state, view, identity, motion, mode,
                           seed + 1000 * idx, steps)
        per_pair.append(evaluate_pair(bundle, view, identity, motion, sample_steps, seed,
                                      samples=samples))
    return {k: float(np.mean([m[k] for m in per_pair])) for k in per_pair[0]}


def ablation_table(cfg: RunConfig, backbone_state: dict[str, np.ndarray], view: CorpusView,
                   pairs: list[tuple[str, str]], steps: int, out_dir: Path,
                   group_sweep: tuple[int, ...] = (1, 2, 4, 8)) -> dict:
    """All four modes plus the group-count sweep; writes two comparison CSVs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    modes = {}
    for mode in ("full", "no-joint", "no-controller", "no-groups"):
        modes[mode] = run_mode(cfg, backbone_state, view, pairs, mode, cfg.seed, steps,
                               cfg.sample_steps)
    _write_table(out_dir / "ablation_modes.csv", "mode", modes)
    sweep = {}
    for n in group_sweep:
        if n > cfg.depth:
            continue
        if n == cfg.groups:
            sweep[f"n={n}"] = modes["full"]
            continue
        sweep_cfg = dataclasses.replace(cfg, groups=n)
        sweep[f"n={n}"] = run_mode(sweep_cfg, backbone_state, view, pairs, "full",
                                   cfg.seed, steps, cfg.sample_steps)
    _write_table(out_dir / "ablation_groups.csv", "groups", sweep)
    return {"modes": modes, "groups": sweep}


def _write_table(path: Path, key_column: str, rows: dict[str, dict[str, float]]) -> None:
    columns = metrics.REPORT_COLUMNS[1:]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([key_column] + columns)
        for name, row in rows.items():
            writer.writerow([name] + [f"{row[c]:.9g}" for c in columns])


def write_schedule_csv(path: Path, records: list[tuple[int, np.ndarray]]) -> None:
    """Controller weights per denoising step, 9 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    groups = len(records[0][1])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step"] + [f"group_{g}" for g in range(groups)])
        for step, weights in records:
            writer.writerow([step] + [f"{w:.9g}" for w in weights])


def write_schedule_svg(path: Path, records: list[tuple[int, np.ndarray]]) -> None:
    """Dependency-free line chart of blend weights across denoising steps."""
    width, height, pad = 480, 280, 40
    groups = len(records[0][1])
    xs = np.linspace(pad, width - pad, len(records))
    colors = ["#c0392b", "#2980b9", "#27ae60", "#8e44ad", "#d35400", "#16a085", "#7f8c8d", "#2c3e50"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>']
    for g in range(groups):
        pts = []
        for x, (_, weights) in zip(xs, records):
            y = height - pad - weights[g] * (height - 2 * pad)
            pts.append(f"{x:.1f},{y:.1f}")
        color = colors[g % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(pts)}"/>')
        parts.append(f'<text x="{width - pad + 4}" y="{pad + 14 * g + 10}" font-size="10" fill="{color}">g{g}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
