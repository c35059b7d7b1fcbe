"""Command-line entry points.

Subcommands: gen-corpus, pretrain, customize, sample, eval, viz-controller,
ablate. Each command writes into an explicit --out directory along with a
config snapshot, so re-running with identical inputs reproduces artifacts
byte for byte. Exit codes: 0 ok, 2 config error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import experiments, metrics
from .checkpoint import load_into, save_checkpoint
from .config import ABLATION_MODES, ConfigError, RunConfig, load_config
from .corpus import build_corpus, read_video, write_ppm, write_video
from .model import build_bundle, sample_video


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its fields")
    p.add_argument("--out", required=True, help="output directory for this run")
    p.add_argument("--seed", type=int, default=None)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualreal")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="render the identity x motion benchmark corpus")
    _add_common(p)
    p.add_argument("--identities", type=int, default=4, help="number of benchmark identities (<=4)")
    p.add_argument("--motions", type=int, default=4, help="number of benchmark motions (<=4)")

    p = sub.add_parser("pretrain", help="train the generic backbone and freeze it")
    _add_common(p)
    p.add_argument("--steps", type=int, default=None, help="override pretrain_steps")

    p = sub.add_parser("customize", help="adapt a pretrained backbone to one identity+motion pair")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--backbone", required=True, help="pretrained backbone checkpoint (DRCK)")
    p.add_argument("--identity", default=None, help="identity name (default: first in corpus)")
    p.add_argument("--motion", default=None, help="motion name (default: first in corpus)")
    p.add_argument("--mode", choices=ABLATION_MODES, default=None)
    p.add_argument("--steps", type=int, default=None, help="override customize_steps")

    p = sub.add_parser("sample", help="sample a clip from a checkpoint")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--identity", default=None)
    p.add_argument("--motion", default=None)
    p.add_argument("--steps", type=int, default=None, help="override sample_steps")

    p = sub.add_parser("eval", help="score sampled clips against corpus references")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--identity", required=True, help="reference identity for similarity")
    p.add_argument("--videos", nargs="+", required=True, help="DRV1 files to score")

    p = sub.add_parser("viz-controller", help="export per-step controller blend weights")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--identity", default=None)
    p.add_argument("--motion", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--no-svg", action="store_true", help="skip the SVG line chart")

    p = sub.add_parser("ablate", help="run all ablation modes plus the group sweep")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--backbone", required=True)
    p.add_argument("--steps", type=int, default=None, help="per-run customization budget")
    p.add_argument("--pairs", type=int, default=None, help="limit number of (identity,motion) pairs")
    return parser


def _prepare(args, extra_overrides: dict | None = None) -> tuple[RunConfig, Path]:
    overrides = {"seed": args.seed}
    if extra_overrides:
        overrides.update(extra_overrides)
    cfg = load_config(args.config, overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    return cfg, out


def _mode_name(args) -> str | None:
    return getattr(args, "mode", None)


def _load_customized(cfg: RunConfig, ckpt: str):
    """Build a model matching the checkpoint contents (bare or customized).

    Adapter/controller presence is detected from the checkpoint; the group
    count comes from the config (it does not change parameter shapes), so
    pass the run's config snapshot when sampling a no-groups checkpoint.
    """
    from .checkpoint import load_checkpoint
    names = {n for n, _, _ in load_checkpoint(ckpt).entries()}
    if not any(n.startswith("adapter.") for n in names):
        bundle = build_bundle(cfg.backbone_config(), cfg.seed)
    else:
        mode = "full" if cfg.mode == "no-joint" else cfg.mode
        if not any(n.startswith("controller.") for n in names):
            mode = "no-controller"
        elif mode == "no-controller":
            mode = "full"
        bundle = build_bundle(cfg.backbone_config(), cfg.seed, cfg.adapter_config(), cfg.groups, mode)
    missing = [n for n in bundle.registry.names() if n not in names]
    if missing:
        raise ValueError(f"{ckpt}: checkpoint lacks {missing[0]!r} required by this config")
    load_into(ckpt, bundle.registry)
    return bundle


def _pick_pair(view: experiments.CorpusView, args) -> tuple[str, str]:
    identity = args.identity or view.identity_names()[0]
    motion = args.motion or view.motion_names()[0]
    return identity, motion


def _cmd_gen_corpus(args) -> None:
    cfg, out = _prepare(args)
    identities = corpus_mod.DEFAULT_IDENTITIES[: args.identities]
    motions = corpus_mod.DEFAULT_MOTIONS[: args.motions]
    records = build_corpus(identities, motions, out, cfg.frames, cfg.height, cfg.width, cfg.seed)
    print(f"wrote {len(records)} clips + manifest to {out}")


def _cmd_pretrain(args) -> None:
    cfg, out = _prepare(args, {"pretrain_steps": args.steps})
    bundle = experiments.pretrain_backbone(
        cfg, out / "pretrain_log.csv",
        progress=lambda s, l: print(f"step {s}: loss {l:.5f}"))
    save_checkpoint(out / "backbone.drck", bundle.registry)
    print(f"backbone checkpoint: {out / 'backbone.drck'}")


def _cmd_customize(args) -> None:
    cfg, out = _prepare(args, {"customize_steps": args.steps, "mode": args.mode})
    view = experiments.CorpusView.load(Path(args.corpus))
    identity, motion = _pick_pair(view, args)
    base = build_bundle(cfg.backbone_config(), cfg.seed)
    load_into(args.backbone, base.registry, prefix="backbone.")
    backbone_state = base.registry.state_arrays("backbone")
    bundle = experiments.customize(cfg, backbone_state, view, identity, motion,
                                   cfg.mode, cfg.seed, cfg.customize_steps,
                                   log_path=out / "train_log.csv")
    save_checkpoint(out / "customized.drck", bundle.registry)
    print(f"customized ({cfg.mode}, {identity}+{motion}): {out / 'customized.drck'}")


def _cmd_sample(args) -> None:
    cfg, out = _prepare(args, {"sample_steps": args.steps})
    view = experiments.CorpusView.load(Path(args.corpus))
    identity, motion = _pick_pair(view, args)
    bundle = _load_customized(cfg, args.ckpt)
    ref = metrics.encode_image(view.reference_image(identity), cfg.cond_dim) if bundle.customized else None
    prompt = (view.id_map[identity], view.mo_map[motion])
    video, records = sample_video(bundle, prompt, cfg.sample_steps, cfg.seed, ref)
    write_video(out / "sample.drv1", video)
    for f in range(video.shape[0]):
        write_ppm(out / f"frame_{f:03d}.ppm", video[f])
    if records and records[0][1] is not None:
        experiments.write_schedule_csv(out / "controller.csv",
                                       [(s, w) for s, w in records])
    print(f"sampled clip: {out / 'sample.drv1'}")


def _cmd_eval(args) -> None:
    cfg, out = _prepare(args)
    view = experiments.CorpusView.load(Path(args.corpus))
    ref_image = view.reference_image(args.identity)
    motion_refs = [view.video(view.motion_record(m)) for m in view.motion_names()]
    rows = []
    for path in args.videos:
        video = read_video(path)
        row = metrics.metric_report(video, ref_image, motion_refs)
        row["clip_id"] = Path(path).stem
        rows.append(row)
    metrics.write_report(out / "report.csv", rows)
    print(f"metric report: {out / 'report.csv'}")


def _cmd_viz_controller(args) -> None:
    cfg, out = _prepare(args, {"sample_steps": args.steps})
    view = experiments.CorpusView.load(Path(args.corpus))
    identity, motion = _pick_pair(view, args)
    bundle = _load_customized(cfg, args.ckpt)
    if not bundle.customized or bundle.controller is None:
        raise RuntimeError("viz-controller needs a checkpoint with a trained controller")
    ref = metrics.encode_image(view.reference_image(identity), cfg.cond_dim)
    prompt = (view.id_map[identity], view.mo_map[motion])
    _, records = sample_video(bundle, prompt, cfg.sample_steps, cfg.seed, ref)
    experiments.write_schedule_csv(out / "controller.csv", records)
    if not args.no_svg:
        experiments.write_schedule_svg(out / "controller.svg", records)
    print(f"controller weights: {out / 'controller.csv'}")


def _cmd_ablate(args) -> None:
    cfg, out = _prepare(args, {"customize_steps": args.steps})
    view = experiments.CorpusView.load(Path(args.corpus))
    base = build_bundle(cfg.backbone_config(), cfg.seed)
    load_into(args.backbone, base.registry, prefix="backbone.")
    backbone_state = base.registry.state_arrays("backbone")
    pairs = [(i, m) for i in view.identity_names() for m in view.motion_names()]
    if args.pairs:
        pairs = pairs[: args.pairs]
    tables = experiments.ablation_table(cfg, backbone_state, view, pairs,
                                        cfg.customize_steps, out)
    for mode, row in tables["modes"].items():
        print(f"{mode}: identity_sim {row['identity_sim']:.4f}  dd_dev {row['dd_deviation']:.3f}")
    print(f"tables: {out / 'ablation_modes.csv'}, {out / 'ablation_groups.csv'}")


_COMMANDS = {
    "gen-corpus": _cmd_gen_corpus,
    "pretrain": _cmd_pretrain,
    "customize": _cmd_customize,
    "sample": _cmd_sample,
    "eval": _cmd_eval,
    "viz-controller": _cmd_viz_controller,
    "ablate": _cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
