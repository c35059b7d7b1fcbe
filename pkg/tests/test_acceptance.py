"""Acceptance harness: one test per release criterion, at default toy dims.

The expensive fixtures (pretrained backbone, benchmark corpus) are shared
across criteria and cached on disk keyed by a hash of the relevant source
files, so repeated runs skip the pretraining cost unless the model code or
configuration changed.
"""

import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

import dualreal.tensor as T
from dualreal import metrics
from dualreal.adapters import AdapterConfig
from dualreal.config import RunConfig
from dualreal.controller import Controller
from dualreal.corpus import DEFAULT_IDENTITIES, DEFAULT_MOTIONS, build_corpus
from dualreal.dit import BackboneConfig, DiffusionSchedule, embed_timestep, extract_patches
from dualreal.experiments import (CorpusView, customize, evaluate_pair, pretrain_backbone,
                                  write_schedule_csv)
from dualreal.model import build_bundle, sample_video
from dualreal.tensor import ParamRegistry, Tensor
from dualreal.trainer import ClipBatch, JointTrainer, MaskedAdamW

# knobs for the desk-scale experiments (criteria 2, 6, 7, 8). The default
# customization lr (1e-3) is tuned for long budgets; the short trend runs use
# a faster rate so adapters actually converge inside the step budget.
PRETRAIN_STEPS = 4000
TREND_STEPS = 500
TREND_LR = 3e-3
TREND_SEEDS = (1, 2, 3, 4, 5)
TREND_PAIRS_PER_SEED = 2

_REPO = Path(__file__).resolve().parent.parent
_CACHE = _REPO / ".cache"


def _report(num: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"\nACCEPTANCE {num} [{name}]: {status} {detail}".rstrip())
    assert ok, f"criterion {num} ({name}) failed: {detail}"


def _source_fingerprint(cfg: RunConfig) -> str:
    h = hashlib.sha256()
    for mod in ("tensor.py", "dit.py", "model.py", "adapters.py", "controller.py",
                "trainer.py", "experiments.py", "corpus.py", "metrics.py"):
        h.update((_REPO / "src" / "dualreal" / mod).read_bytes())
    h.update(json.dumps(dataclasses.asdict(cfg), sort_keys=True).encode())
    h.update(str(PRETRAIN_STEPS).encode())
    return h.hexdigest()[:16]


@pytest.fixture(scope="session")
def run_config() -> RunConfig:
    cfg = RunConfig(pretrain_steps=PRETRAIN_STEPS, seed=0)
    cfg.validate()
    return cfg


@pytest.fixture(scope="session")
def backbone_state(run_config) -> dict:
    """Pretrained, frozen backbone weights at default toy dims."""
    _CACHE.mkdir(exist_ok=True)
    cache = _CACHE / f"backbone_{_source_fingerprint(run_config)}.npz"
    if cache.exists():
        return dict(np.load(cache))
    bundle = pretrain_backbone(run_config)
    state = bundle.registry.state_arrays()
    np.savez(cache, **state)
    return state


@pytest.fixture(scope="session")
def corpus_view(tmp_path_factory, run_config) -> CorpusView:
    root = tmp_path_factory.mktemp("corpus22")
    build_corpus(DEFAULT_IDENTITIES[:2], DEFAULT_MOTIONS[:2], root,
                 run_config.frames, run_config.height, run_config.width)
    return CorpusView.load(root)


def _customized_from_state(cfg, state, seed, mode="full"):
    bundle = build_bundle(cfg.backbone_config(), seed, cfg.adapter_config(), cfg.groups, mode)
    for name, data in state.items():
        bundle.registry.replace(name, Tensor(data.copy()))
    return bundle


# --------------------------------------------------------------------------
# 1. transparency
# --------------------------------------------------------------------------

def test_criterion_1_transparency(run_config):
    cfg = run_config
    custom = build_bundle(cfg.backbone_config(), seed=0, adapter_cfg=cfg.adapter_config(),
                          groups=cfg.groups)
    bare = build_bundle(cfg.backbone_config(), seed=0)
    rng = np.random.default_rng(42)
    shape = (cfg.frames, cfg.height, cfg.width, cfg.channels)
    for trial in range(10):
        video = rng.standard_normal(shape)
        step = int(rng.integers(cfg.timesteps))
        ref = rng.normal(size=cfg.cond_dim)
        got, _ = custom.predict_eps_tokens(video, (1, 1), step, ref)
        want, _ = bare.predict_eps_tokens(video, (1, 1), step)
        if not np.array_equal(got.data, want.data):
            _report(1, "transparency", False, f"outputs differ at trial {trial}")
    _report(1, "transparency", True, "10/10 random pairs bit-identical")


# --------------------------------------------------------------------------
# 2. leakage freedom
# --------------------------------------------------------------------------

def test_criterion_2_leakage_freedom(run_config, backbone_state, corpus_view):
    cfg = run_config
    bundle = _customized_from_state(cfg, backbone_state, seed=3)
    id_batch, mo_batch, _ = corpus_view.pair_batches(
        corpus_view.identity_names()[0], corpus_view.motion_names()[0], cfg.cond_dim)
    trainer = JointTrainer(bundle, [id_batch], [mo_batch], gamma=0.5, seed=3,
                           optimizer=MaskedAdamW(cfg.lr, weight_decay=cfg.weight_decay))
    reg = bundle.registry

    def snapshot(tag):
        params = reg.state_arrays(tag)
        moments = {n: trainer.optimizer.state.get(n) for n in reg.names(tag)}
        return params, {n: (m[0].copy(), m[1].copy(), m[2]) if m else None
                        for n, m in moments.items()}

    phases = {0: 0, 1: 0}
    for step in range(200):
        id_snap, mo_snap = snapshot("identity"), snapshot("motion")
        z, _ = trainer.train_step()
        phases[z] += 1
        frozen_params, frozen_moms = (id_snap if z == 1 else mo_snap)
        for name, data in frozen_params.items():
            assert np.array_equal(reg.get(name).data, data), (step, name)
        for name, mom in frozen_moms.items():
            now = trainer.optimizer.state.get(name)
            if mom is None:
                assert now is None, (step, name)
            else:
                assert (np.array_equal(mom[0], now[0]) and np.array_equal(mom[1], now[1])
                        and mom[2] == now[2]), (step, name)
    _report(2, "leakage freedom", phases[0] > 0 and phases[1] > 0,
            f"200 steps ({phases[0]} identity / {phases[1]} motion), zero drift")


# --------------------------------------------------------------------------
# 3. gradient correctness
# --------------------------------------------------------------------------

def test_criterion_3_gradient_correctness():
    # Per configuration, the autodiff gradient of the full customized loss is
    # compared against central differences over a random coordinate sample of
    # every parameter; the configuration's relative error is the norm ratio
    # ||autodiff - central|| / ||central||.
    worst = 0.0
    h = 1e-5
    for trial in range(20):
        rng = np.random.default_rng(1000 + trial)
        cfg = BackboneConfig(frames=2, height=8, width=8, channels=3, patch_t=1, patch_s=4,
                             model_dim=8, heads=2, depth=int(rng.integers(2, 4)), mlp_ratio=2,
                             t_dim=8, timesteps=10, identity_vocab=4, motion_vocab=4)
        groups = int(rng.integers(1, cfg.depth + 1))
        bundle = build_bundle(cfg, seed=trial, adapter_cfg=AdapterConfig(3, 4), groups=groups)
        for name in bundle.registry.names():
            if np.all(bundle.registry.get(name).data == 0):
                bundle.registry.replace(name, Tensor(rng.normal(0, 0.3, bundle.registry.get(name).shape)))
        video = rng.standard_normal((2, 8, 8, 3))
        ref = rng.normal(size=4)
        target = Tensor(extract_patches(rng.standard_normal((2, 8, 8, 3)), cfg))
        step = int(rng.integers(cfg.timesteps))

        def loss_fn():
            pred, _ = bundle.predict_eps_tokens(video, (1, 2), step, ref)
            return T.mse_loss(pred, target)

        grads = T.backward(loss_fn(), bundle.registry)
        auto_vals, fd_vals = [], []
        for name in bundle.registry.names():
            p = bundle.registry.get(name)
            flat = p.data.reshape(-1)
            idxs = rng.choice(flat.size, size=min(4, flat.size), replace=False)
            for i in idxs:
                bumped = p.data.copy()
                bumped.reshape(-1)[i] = flat[i] + h
                bundle.registry.replace(name, Tensor(bumped))
                hi = loss_fn().item()
                bumped = p.data.copy()
                bumped.reshape(-1)[i] = flat[i] - h
                bundle.registry.replace(name, Tensor(bumped))
                lo = loss_fn().item()
                bundle.registry.replace(name, p)
                fd_vals.append((hi - lo) / (2 * h))
                auto_vals.append(grads[name].data.reshape(-1)[i])
        auto_vals, fd_vals = np.array(auto_vals), np.array(fd_vals)
        ratio = np.linalg.norm(auto_vals - fd_vals) / (np.linalg.norm(fd_vals) + 1e-12)
        worst = max(worst, ratio)
    _report(3, "gradient correctness", worst <= 1e-4,
            f"max per-config gradient error {worst:.3e} over 20 configs")


# --------------------------------------------------------------------------
# 4. controller contract
# --------------------------------------------------------------------------

def test_criterion_4_controller_contract():
    depth, groups, c, t_dim = 8, 4, 16, 16
    reg = ParamRegistry()
    ctrl = Controller(c, t_dim, depth, groups, reg, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    for name in reg.names():
        reg.replace(name, Tensor(rng.normal(0, 0.6, reg.get(name).shape)))
    for trial in range(100):
        f_in = Tensor(rng.normal(size=(int(rng.integers(4, 20)), c)))
        t_vec = Tensor(embed_timestep(int(rng.integers(100)), t_dim))
        pooled = ctrl.pool_project(f_in)
        scale, shift, gate = ctrl.gate_chunks(t_vec)
        fused = ctrl.gate_fuse(ctrl.adaln_modulate(pooled, scale, shift), pooled, gate)
        logits = np.clip(ctrl._mlp("logits", fused).data.reshape(depth, 2),
                         -Controller.LOGIT_BOUND, Controller.LOGIT_BOUND)
        sched = ctrl.group_weights(fused)
        assert sorted(set(sched.partition)) == list(range(groups))
        assert len(sched.partition) == depth
        start = 0
        for g in range(groups):
            w = sched.values()[g]
            assert 0.0 < w < 1.0, w
            size = sched.partition.count(g)
            pair = logits[start:start + size].mean(axis=0)
            e = np.exp(pair - pair.max())
            both = e / e.sum()
            assert abs(both.sum() - 1.0) <= 1e-9
            assert abs(both[0] - w) <= 1e-12
            start += size
    zero_reg = ParamRegistry()
    zero_ctrl = Controller(c, t_dim, depth, groups, zero_reg, np.random.default_rng(2))
    for trial in range(10):
        sched = zero_ctrl.controller_step(Tensor(rng.normal(size=(9, c))),
                                          Tensor(embed_timestep(int(rng.integers(100)), t_dim)))
        assert np.all(np.abs(sched.values() - 0.5) <= 1e-12)
    _report(4, "controller contract", True, "100 random inputs + zero-init uniformity")


# --------------------------------------------------------------------------
# 5. metric oracles
# --------------------------------------------------------------------------

def test_criterion_5_metric_oracles():
    from tests.test_metrics import dd_oracle, flicker_oracle, smooth_oracle, tcons_oracle
    for seed in range(5):
        clip = np.random.default_rng(500 + seed).random((4, 8, 8, 3))
        assert abs(metrics.temporal_flickering(clip) - flicker_oracle(clip)) <= 1e-12
        assert abs(metrics.motion_smoothness(clip) - smooth_oracle(clip)) <= 1e-12
        assert abs(metrics.temporal_consistency(clip) - tcons_oracle(clip, metrics.encode_image)) <= 1e-12
        assert abs(metrics.dynamic_degree(clip) - dd_oracle(clip)) <= 1e-12
    base = np.random.default_rng(777).random((16, 16, 3))
    for shift in (1, 2, 3, 4):
        clip = np.stack([np.roll(base, shift * t, axis=1) for t in range(4)])
        assert metrics.dynamic_degree(clip) == float(shift)
    _report(5, "metric oracles", True, "4 metrics x 5 clips to 1e-12; shifts 1-4 exact")


# --------------------------------------------------------------------------
# 6. ablation trend at desk scale
# --------------------------------------------------------------------------

def test_criterion_6_ablation_trend(run_config, backbone_state, corpus_view):
    cfg = dataclasses.replace(run_config, lr=TREND_LR)
    identities = corpus_view.identity_names()
    motions = corpus_view.motion_names()
    all_pairs = [(i, m) for i in identities for m in motions]
    full_beats_nojoint = 0
    full_beats_noctrl = 0
    rows = []
    for seed in TREND_SEEDS:
        pairs = [all_pairs[(seed - 1 + k) % len(all_pairs)] for k in range(TREND_PAIRS_PER_SEED)]
        per_mode = {}
        for mode in ("full", "no-joint", "no-controller"):
            reports = []
            for p_idx, (ident, motion) in enumerate(pairs):
                bundle = customize(cfg, backbone_state, corpus_view, ident, motion, mode,
                                   seed=seed + 100 * p_idx, steps=TREND_STEPS)
                reports.append(evaluate_pair(bundle, corpus_view, ident, motion,
                                             cfg.sample_steps, sample_seed=seed))
            per_mode[mode] = {k: float(np.mean([r[k] for r in reports])) for k in reports[0]}
        rows.append((seed, per_mode))
        if (per_mode["full"]["identity_sim"] > per_mode["no-joint"]["identity_sim"]
                and per_mode["full"]["dd_deviation"] <= per_mode["no-joint"]["dd_deviation"]):
            full_beats_nojoint += 1
        if per_mode["full"]["identity_sim"] > per_mode["no-controller"]["identity_sim"]:
            full_beats_noctrl += 1
    detail = "; ".join(
        f"seed {s}: full {m['full']['identity_sim']:.3f}/{m['full']['dd_deviation']:.2f} "
        f"vs nj {m['no-joint']['identity_sim']:.3f}/{m['no-joint']['dd_deviation']:.2f} "
        f"vs nc {m['no-controller']['identity_sim']:.3f}" for s, m in rows)
    ok = full_beats_nojoint >= 4 and full_beats_noctrl >= 3
    _report(6, "ablation trend", ok,
            f"full>no-joint {full_beats_nojoint}/5 (need 4), full>no-controller {full_beats_noctrl}/5 (need 3) | {detail}")


# --------------------------------------------------------------------------
# 7. controller weight trajectories
# --------------------------------------------------------------------------

def test_criterion_7_controller_viz(run_config, backbone_state, corpus_view, tmp_path):
    cfg = dataclasses.replace(run_config, lr=TREND_LR)
    ident, motion = corpus_view.identity_names()[0], corpus_view.motion_names()[0]
    bundle = customize(cfg, backbone_state, corpus_view, ident, motion, "full",
                       seed=11, steps=TREND_STEPS)
    ref = metrics.encode_image(corpus_view.reference_image(ident), cfg.cond_dim)
    prompt = (corpus_view.id_map[ident], corpus_view.mo_map[motion])
    _, records = sample_video(bundle, prompt, 20, seed=11, ref=ref)
    write_schedule_csv(tmp_path / "controller.csv", records)
    lines = (tmp_path / "controller.csv").read_text().strip().splitlines()
    assert lines[0] == "step,group_0,group_1,group_2,group_3"
    assert len(lines) == 21
    table = np.array([[float(v) for v in line.split(",")[1:]] for line in lines[1:]])
    assert table.shape == (20, 4)
    assert np.all(table > 0.0) and np.all(table < 1.0)
    ranges = table.max(axis=0) - table.min(axis=0)
    _report(7, "controller visualization", float(ranges.max()) > 1e-3,
            f"20x4 weights in (0,1); max group range {ranges.max():.4f}")


# --------------------------------------------------------------------------
# 8. diffusion sanity
# --------------------------------------------------------------------------

def test_criterion_8_diffusion_sanity(run_config, backbone_state, corpus_view):
    cfg = run_config
    schedule = DiffusionSchedule(timesteps=cfg.timesteps)
    rng = np.random.default_rng(8)
    x0 = rng.random((cfg.frames, cfg.height, cfg.width, cfg.channels))
    eps = rng.standard_normal(x0.shape)
    worst = 0.0
    for t in range(cfg.timesteps):
        x_t = schedule.add_noise(x0, eps, t)
        worst = max(worst, float(np.abs(schedule.recover_noise(x0, x_t, t) - eps).max()))
    assert worst <= 1e-12, worst

    bundle = _customized_from_state(cfg, backbone_state, seed=21)
    id_batch, mo_batch, _ = corpus_view.pair_batches(
        corpus_view.identity_names()[0], corpus_view.motion_names()[0], cfg.cond_dim)
    trainer = JointTrainer(bundle, [id_batch], [mo_batch], gamma=0.5, seed=21,
                           optimizer=MaskedAdamW(cfg.lr, weight_decay=cfg.weight_decay))
    history = trainer.run(200)
    losses = [l for _, _, l in history]
    first, last = float(np.mean(losses[:20])), float(np.mean(losses[-20:]))
    _report(8, "diffusion sanity", last < first,
            f"noise inversion max err {worst:.2e}; smoke loss {first:.4f} -> {last:.4f}")
