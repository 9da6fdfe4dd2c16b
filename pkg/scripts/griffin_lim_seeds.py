"""Spectral convergence of Griffin-Lim on a 1 s 440 Hz sine across phase seeds and iteration counts.

    python3 scripts/griffin_lim_seeds.py --seeds 20
"""
import argparse

import numpy as np

from _common import write_rows
from speechgram import frontend as fe
from speechgram.phase import griffin_lim, stft


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--iters", type=int, nargs="+", default=[100, 300, 1000])
    ap.add_argument("--out", default="griffin_lim_seeds.csv")
    args = ap.parse_args()

    t = np.arange(16000) / 16000
    mag = np.abs(stft(np.sin(2 * np.pi * 440 * t), fe.DEFAULT))
    longest = max(args.iters)
    rows = []
    for seed in range(args.seeds):
        _, sc = griffin_lim(mag, longest, seed=seed)
        rows.append([seed] + [repr(sc[n - 1]) for n in args.iters])
    table = np.array([[float(v) for v in r[1:]] for r in rows])
    for j, n in enumerate(args.iters):
        col = table[:, j]
        print(f"{n:>5} iters: median {np.median(col):.4f}  min {col.min():.4f}  max {col.max():.4f}  "
              f"below 0.05: {int(np.sum(col < 0.05))}/{len(col)}")
    write_rows(args.out, ["seed"] + [f"sc_{n}" for n in args.iters], rows)


if __name__ == "__main__":
    main()
