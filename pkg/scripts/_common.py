"""Helpers shared by the experiment scripts."""
from __future__ import annotations

import csv
import sys
import time
from pathlib import Path

from speechgram.network import load_weights, save_weights
from speechgram.train import train_toy


def toy_weights(path: str | None, cache: str = "toy.mgw"):
    """Load ``path``, or train the toy network once and cache it next to the outputs."""
    if path:
        return load_weights(path)
    if Path(cache).exists():
        print(f"using cached {cache}", file=sys.stderr)
        return load_weights(cache)
    print("training the toy network (about 5 minutes)...", file=sys.stderr)
    t0 = time.perf_counter()
    rep = train_toy()
    save_weights(cache, rep.weights)
    print(f"trained in {time.perf_counter() - t0:.0f} s, SER {rep.train_ser:.3f}/{rep.heldout_ser:.3f}",
          file=sys.stderr)
    return rep.weights


def write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
