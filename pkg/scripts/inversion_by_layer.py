"""Invert each layer of the toy network for one held-out utterance.

Reports feature-space relative error, Griffin-Lim spectral convergence and
the worst relative frame-energy error on silent frames, with the energy
penalty on and off for the fully connected layer.

    python3 scripts/inversion_by_layer.py --weights toy.mgw --iters 300
"""
import argparse

import numpy as np

from _common import toy_weights, write_rows
from speechgram import frontend as fe
from speechgram.synth import feature_relative_error, invert_from_layer
from speechgram.train import heldout_corpus
from speechgram.wavio import write_wav


def silent_energy_error(out, utt, cfg):
    e_ref = fe.frame_energy(fe.features(utt.waveform, cfg))
    e = fe.frame_energy(fe.features(out, cfg))
    m = utt.silent_mask(cfg)
    rel = np.abs(e - e_ref)[m] / np.abs(e_ref[m])
    return float(rel.max()), float(rel.mean())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--weights")
    ap.add_argument("--iters", type=int, default=1000, help="L-BFGS iterations per stage")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="inversion_by_layer.csv")
    ap.add_argument("--wav-prefix", help="also write each reconstruction as <prefix><layer>.wav")
    args = ap.parse_args()

    weights = toy_weights(args.weights)
    cfg = weights.spec.frontend
    utt = heldout_corpus(0)[0]
    runs = [(n, None) for n in weights.spec.names if n != "CTC"] + [("FC0", False)]
    rows = []
    for layer, penalty in runs:
        res = invert_from_layer(utt.waveform, layer, weights, energy_penalty_on=penalty, seed=args.seed,
                                stage1_iters=args.iters, stage2_iters=args.iters)
        on = penalty if penalty is not None else weights.spec.layer(layer).kind == "fc"
        err = feature_relative_error(res.raw, utt.waveform, cfg)
        emax, emean = silent_energy_error(res.raw, utt, cfg)
        rows.append((layer, on, repr(err), repr(res.sc[-1]), repr(emax), repr(emean)))
        print(f"{layer:<4} penalty {str(on):<5} feature err {err:.4f}  SC {res.sc[-1]:.3f}  "
              f"silent energy err max {emax:.3f} mean {emean:.3f}")
        if args.wav_prefix:
            write_wav(f"{args.wav_prefix}{layer}{'' if on else '_nopenalty'}.wav", res.waveform)
    write_rows(args.out, ["layer", "energy_penalty", "feature_rel_error", "spectral_convergence",
                          "silent_energy_err_max", "silent_energy_err_mean"], rows)


if __name__ == "__main__":
    main()
