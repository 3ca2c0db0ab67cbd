"""Margin coefficient sweep: five L-GM models, identical seeds, held-out EER per alpha.

Run: python3 demos/alpha_sweep.py [out_dir] [--lr LR]
Writes lgm_alpha{a}.ckpt for each alpha plus sweep_summary.txt into out_dir.
"""
import argparse
from pathlib import Path

from lgmsv.data import SynthConfig, synth_corpus
from lgmsv.experiments import SWEEP_ALPHAS, format_sweep, run_alpha_sweep, sweep_spearman
from lgmsv.trainer import TrainConfig

ap = argparse.ArgumentParser()
ap.add_argument("out_dir", nargs="?", default="sweep_out")
ap.add_argument("--lr", type=float, default=1e-3)
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()
out = Path(args.out_dir)
out.mkdir(parents=True, exist_ok=True)

corpus = synth_corpus(SynthConfig(seed=7))
rows = run_alpha_sweep(corpus, TrainConfig(lr=args.lr, seed=args.seed), SWEEP_ALPHAS, checkpoint_dir=out)
table = format_sweep(rows) + f"\nSpearman(alpha, EER) = {sweep_spearman(rows):+.3f}\n"
(out / "sweep_summary.txt").write_text(table)
print(table)

# The outcome depends on the training setup. With the defaults (lr 1e-3) the
# EERs barely move with alpha. With --lr 1e-2 the larger margins tended to
# score lower on most train seeds tried, although absolute EER was worse.
