#!/usr/bin/env python3
"""End-to-end ablation study on one seed: corpus, pretraining, all four
ablation modes and the group-count sweep, via the same machinery as the CLI.

Usage:
    python scripts/run_ablation.py --out runs/ablation [--steps 400]
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from dualreal.checkpoint import save_checkpoint  # noqa: E402
from dualreal.config import RunConfig  # noqa: E402
from dualreal.corpus import DEFAULT_IDENTITIES, DEFAULT_MOTIONS, build_corpus  # noqa: E402
from dualreal.experiments import CorpusView, ablation_table, pretrain_backbone  # noqa: E402


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", required=True)
    ap.add_argument("--steps", type=int, default=400)
    ap.add_argument("--pretrain-steps", type=int, default=4000)
    ap.add_argument("--pairs", type=int, default=2, help="number of (identity, motion) pairs")
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = RunConfig(pretrain_steps=args.pretrain_steps, seed=args.seed)
    cfg.validate()

    t0 = time.time()
    corpus_dir = out / "corpus"
    build_corpus(DEFAULT_IDENTITIES[:2], DEFAULT_MOTIONS[:2], corpus_dir,
                 cfg.frames, cfg.height, cfg.width)
    view = CorpusView.load(corpus_dir)
    print(f"pretraining backbone ({cfg.pretrain_steps} steps)...", flush=True)
    base = pretrain_backbone(cfg, progress=lambda s, l: print(f"  {s}: {l:.4f}", flush=True))
    save_checkpoint(out / "backbone.drck", base.registry)

    pairs = [(i, m) for i in view.identity_names() for m in view.motion_names()][: args.pairs]
    tables = ablation_table(cfg, base.registry.state_arrays(), view, pairs, args.steps, out)
    print("\nmode                 idsim   dd_dev")
    for mode, row in tables["modes"].items():
        print(f"{mode:20s} {row['identity_sim']:.4f}  {row['dd_deviation']:.3f}")
    print("\ngroup sweep          idsim   dd_dev")
    for name, row in tables["groups"].items():
        print(f"{name:20s} {row['identity_sim']:.4f}  {row['dd_deviation']:.3f}")
    print(f"\ntables in {out}  ({time.time() - t0:.0f}s total)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
