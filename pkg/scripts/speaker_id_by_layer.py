"""Leave-one-out Gram-NN speaker accuracy per layer, trained vs untrained weights.

Toy analog of the layer sweep: one Gram layer at a time plus the shallow
and deep groups used by the acceptance suite.

    python3 scripts/speaker_id_by_layer.py --weights toy.mgw --out speaker_by_layer.csv
"""
import argparse

import numpy as np

from _common import toy_weights, write_rows
from speechgram.network import init_random, toy_spec
from speechgram.speaker import FEATURES, SYMBOLS, gram_feature_vector, loo_accuracy, toy_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--weights")
    ap.add_argument("--corpus-seed", type=int, default=0)
    ap.add_argument("--random-seed", type=int, default=0)
    ap.add_argument("--out", default="speaker_by_layer.csv")
    args = ap.parse_args()

    trained = toy_weights(args.weights)
    untrained = init_random(toy_spec(len(SYMBOLS)), args.random_seed)
    corpus = toy_corpus(3, 20, args.corpus_seed)
    labels = [u.speaker for u in corpus]
    groups = [[FEATURES]] + [[n] for n in trained.spec.names if n != "CTC"]
    groups += [["C0", "C1", "C2", "C3"], ["C4", "C5", "FC0"]]
    rows = []
    for layers in groups:
        name = "+".join(layers)
        accs = []
        for w in (trained, untrained):
            accs.append(loo_accuracy([gram_feature_vector(u.waveform, layers, w) for u in corpus], labels))
        rows.append((name, repr(accs[0]), repr(accs[1])))
        print(f"{name:<16} trained {accs[0]:.3f}  random {accs[1]:.3f}")
    write_rows(args.out, ["layers", "trained_accuracy", "random_accuracy"], rows)


if __name__ == "__main__":
    main()
