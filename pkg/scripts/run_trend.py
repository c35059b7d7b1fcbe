#!/usr/bin/env python3
"""Desk-scale ablation trend: full joint training vs isolated-run blending
vs fixed-blend training, over multiple seeds on a 2x2 corpus.

Produces one row per seed with mean identity similarity and motion-intensity
deviation per mode, plus the win counts the acceptance gate checks.

Usage:
    python scripts/run_trend.py --out runs/trend [--steps 400] [--seeds 1 2 3 4 5]
"""

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from dualreal.checkpoint import save_checkpoint  # noqa: E402
from dualreal.config import RunConfig  # noqa: E402
from dualreal.corpus import DEFAULT_IDENTITIES, DEFAULT_MOTIONS, build_corpus  # noqa: E402
from dualreal.experiments import CorpusView, customize, evaluate_pair, pretrain_backbone  # noqa: E402


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", required=True)
    ap.add_argument("--steps", type=int, default=500, help="customization budget per run")
    ap.add_argument("--lr", type=float, default=3e-3,
                    help="customization learning rate (short budgets need a faster rate)")
    ap.add_argument("--pretrain-steps", type=int, default=4000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    ap.add_argument("--pairs-per-seed", type=int, default=2)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = RunConfig(pretrain_steps=args.pretrain_steps, lr=args.lr)
    cfg.validate()

    t0 = time.time()
    corpus_dir = out / "corpus"
    build_corpus(DEFAULT_IDENTITIES[:2], DEFAULT_MOTIONS[:2], corpus_dir,
                 cfg.frames, cfg.height, cfg.width)
    view = CorpusView.load(corpus_dir)

    print(f"pretraining backbone ({cfg.pretrain_steps} steps)...", flush=True)
    base = pretrain_backbone(cfg, progress=lambda s, l: print(f"  {s}: {l:.4f}", flush=True))
    save_checkpoint(out / "backbone.drck", base.registry)
    state = base.registry.state_arrays()

    all_pairs = [(i, m) for i in view.identity_names() for m in view.motion_names()]
    modes = ("full", "no-joint", "no-controller")
    rows = []
    wins_nj = wins_nc = 0
    for seed in args.seeds:
        pairs = [all_pairs[(seed - 1 + k) % len(all_pairs)] for k in range(args.pairs_per_seed)]
        per = {}
        for mode in modes:
            reports = []
            for p_idx, (ident, motion) in enumerate(pairs):
                bundle = customize(cfg, state, view, ident, motion, mode,
                                   seed=seed + 100 * p_idx, steps=args.steps)
                reports.append(evaluate_pair(bundle, view, ident, motion, cfg.sample_steps, seed))
            per[mode] = {k: float(np.mean([r[k] for r in reports])) for k in reports[0]}
        nj = (per["full"]["identity_sim"] > per["no-joint"]["identity_sim"]
              and per["full"]["dd_deviation"] <= per["no-joint"]["dd_deviation"])
        nc = per["full"]["identity_sim"] > per["no-controller"]["identity_sim"]
        wins_nj += nj
        wins_nc += nc
        rows.append((seed, per))
        print(f"seed {seed}: " + " | ".join(
            f"{m} idsim {per[m]['identity_sim']:.3f} dd_dev {per[m]['dd_deviation']:.2f}"
            for m in modes) + f"  [{time.time() - t0:.0f}s]", flush=True)

    with open(out / "trend.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed"] + [f"{m}_{k}" for m in modes for k in ("identity_sim", "dd_deviation")])
        for seed, per in rows:
            writer.writerow([seed] + [f"{per[m][k]:.9g}" for m in modes
                                      for k in ("identity_sim", "dd_deviation")])
    print(f"\nfull beats no-joint on {wins_nj}/{len(args.seeds)} seeds; "
          f"full beats no-controller on {wins_nc}/{len(args.seeds)} seeds")
    print(f"table: {out / 'trend.csv'}  ({time.time() - t0:.0f}s total)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
