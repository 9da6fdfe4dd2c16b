"""Command-line entry point.

Exit codes: 0 success, 2 validation error (bad arguments, files, configs or
layer names), 3 numerical failure (non-finite loss, failed gradient check).
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import frontend as fe
from .config import ConfigError, RunConfig, load_config
from .ctc import write_charset
from .losses import default_loss_spec, layer_range
from .network import WeightStore, load_weights, save_weights
from .optim import NumericalError
from .speaker import FEATURES, SYMBOLS, classical_mds, gram_feature_vector, nn_classify, pairwise_distances, toy_corpus
from .synth import SynthesisJob, feature_relative_error, run_job
from .wavio import read_wav, write_wav

log = logging.getLogger("speechgram")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# Shared setup


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {k: getattr(args, k) for k in ("seed", "precision", "trace") if getattr(args, k, None) is not None}
    if getattr(args, "weights", None):
        overrides["weights"] = args.weights
    cfg = replace(cfg, **overrides)
    s = cfg.synthesis
    for name, arg in (("stage1_iters", "stage1_iters"), ("stage2_iters", "stage2_iters"),
                      ("griffin_lim_iters", "gl_iters"), ("init", "init")):
        if getattr(args, arg, None) is not None:
            s = replace(s, **{name: getattr(args, arg)})
    return replace(cfg, synthesis=s)


def _weights(cfg: RunConfig) -> WeightStore:
    if not cfg.weights:
        raise ConfigError("this command needs --weights (or [network] weights in the config)")
    return load_weights(cfg.weights)


def _synthesize(args, task: str, loss_spec, content=None, styles=(), duration=None) -> int:
    cfg = _run_config(args)
    weights = _weights(cfg)
    s = cfg.synthesis
    job = SynthesisJob(task, loss_spec, content=content, styles=list(styles), duration=duration,
                       stage1_iters=s.stage1_iters, stage2_iters=s.stage2_iters, griffin_lim_iters=s.griffin_lim_iters,
                       seed=cfg.seed, init=s.init, history=s.history)

    def progress(stage, it, f, gnorm):
        if it % 100 == 0:
            log.info("%s iter %d loss %.6g |g| %.3g", stage, it, f, gnorm)

    result = run_job(job, weights, progress)
    out = args.out or cfg.output or f"{task}.wav"
    write_wav(out, result.waveform)
    if cfg.trace:
        write_csv(cfg.trace, ["stage", "iteration", "loss", "grad_norm"],
                  [(st, it, _fmt(f), _fmt(g)) for st, it, f, g in result.trace])
    if getattr(args, "sc_out", None):
        write_csv(args.sc_out, ["iteration", "spectral_convergence"], [(i, _fmt(v)) for i, v in enumerate(result.sc)])
    if getattr(args, "dump_spectrogram", None) and result.spectrogram is not None:
        np.save(args.dump_spectrogram, result.spectrogram)
    print(f"wrote {out} ({len(result.waveform)} samples)")
    for k in result.final_terms:
        print(f"  {k}: {result.initial_terms[k]:.6g} -> {result.final_terms[k]:.6g}")
    if result.sc:
        print(f"  griffin-lim spectral convergence: {result.sc[-1]:.4f}")
    if content is not None:
        print(f"  feature relative error vs content: "
              f"{feature_relative_error(result.raw, content, weights.spec.frontend):.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Commands


def cmd_features(args) -> int:
    cfg = _run_config(args)
    fcfg = load_weights(cfg.weights).spec.frontend if cfg.weights else cfg.frontend
    if args.dump_filterbank:
        fb = fe.build_filterbank(fcfg)
        write_csv(args.dump_filterbank, [f"ch{c}" for c in range(fb.shape[1])], [[_fmt(v) for v in row] for row in fb])
    if args.wav:
        feats = fe.features(read_wav(args.wav), fcfg)
        rows = [(t, c, *(_fmt(v) for v in feats[t, c])) for t in range(feats.shape[0]) for c in range(feats.shape[1])]
        if args.out:
            write_csv(args.out, ["frame", "channel", "static", "delta", "delta_delta"], rows)
        print(f"{feats.shape[0]} frames x {feats.shape[1]} channels x 3")
    elif not args.dump_filterbank:
        raise ConfigError("nothing to do: give a wav file and/or --dump-filterbank")
    return EXIT_OK


def cmd_train_toy(args) -> int:
    from .train import train_toy

    cfg = _run_config(args)

    def progress(step, loss):
        if step % 250 == 0:
            log.info("step %d mean nll %.4f", step, loss)

    report = train_toy(args.corpus_seed, args.steps, cfg.seed, args.speakers, args.utts, args.batch_size, progress)
    save_weights(args.out, report.weights)
    charset = Path(args.out).with_suffix(".chars")
    write_charset(charset, SYMBOLS)
    if cfg.trace:
        write_csv(cfg.trace, ["step", "loss"], [(s, _fmt(v)) for s, v in report.trace])
    print(f"wrote {args.out} and {charset}")
    print(f"symbol error rate: train {report.train_ser:.4f}  held-out {report.heldout_ser:.4f}")
    return EXIT_OK


def cmd_invert(args) -> int:
    from .losses import content_spec

    cfg = _run_config(args)
    weights = _weights(cfg)
    layer = weights.spec.layer(args.layer)
    penalty = {"on": True, "off": False, "auto": layer.kind == "fc"}[args.energy_penalty]
    if layer.kind == "fc" and not penalty:
        log.warning("inverting a fully connected layer without the energy penalty")
    content = read_wav(args.wav)
    return _synthesize(args, "invert", content_spec(args.layer, 1.0, 1.0 if penalty else 0.0), content=content)


def cmd_texture(args) -> int:
    from .losses import style_spec

    cfg = _run_config(args)
    weights = _weights(cfg)
    layers = layer_range(args.layers, weights.spec.names)
    styles = [read_wav(p) for p in args.style]
    return _synthesize(args, "texture", style_spec(layers), styles=styles, duration=args.duration)


def cmd_convert(args) -> int:
    cfg = _run_config(args)
    weights = _weights(cfg)
    spec = cfg.loss if cfg.loss is not None else default_loss_spec(weights.spec.names)
    return _synthesize(args, "convert", spec, content=read_wav(args.content), styles=[read_wav(p) for p in args.style])


def _labelled_wavs(directory) -> list[tuple[str, str, Path]]:
    """(uid, speaker label, path) for every wav in ``directory``; the label is the file-name prefix before '_'."""
    paths = sorted(Path(directory).glob("*.wav"))
    if not paths:
        raise ConfigError(f"no .wav files in {directory}")
    return [(p.stem, p.stem.split("_")[0], p) for p in paths]


def cmd_speaker_id(args) -> int:
    cfg = _run_config(args)
    weights = load_weights(cfg.weights) if cfg.weights else None
    names = [FEATURES] + (weights.spec.names if weights else [])
    layers = layer_range(args.layers, names)
    fcfg = weights.spec.frontend if weights else cfg.frontend

    def vectors(items):
        return np.array([gram_feature_vector(read_wav(p), layers, weights, fcfg) for _, _, p in items])

    train = _labelled_wavs(args.train_dir)
    train_v = vectors(train)
    train_l = [lab for _, lab, _ in train]
    rows = []
    if args.test_dir:
        test = _labelled_wavs(args.test_dir)
        test_v = vectors(test)
        for (uid, lab, _), v in zip(test, test_v):
            rows.append((uid, lab, nn_classify(train_v, train_l, v)))
        all_items, all_v = train + test, np.vstack([train_v, test_v])
    else:  # leave-one-out on the training directory
        for i, (uid, lab, _) in enumerate(train):
            keep = [j for j in range(len(train)) if j != i]
            rows.append((uid, lab, nn_classify(train_v[keep], [train_l[j] for j in keep], train_v[i])))
        all_items, all_v = train, train_v
    acc = float(np.mean([t == p for _, t, p in rows]))
    if args.report:
        write_csv(args.report, ["utterance", "true", "predicted"], rows)
    if args.mds_out:
        xy = classical_mds(pairwise_distances(all_v), 2)
        write_csv(args.mds_out, ["utterance", "speaker", "x", "y"],
                  [(uid, lab, _fmt(x), _fmt(y)) for (uid, lab, _), (x, y) in zip(all_items, xy)])
    print(f"layers {','.join(layers)}: accuracy {acc:.4f} ({sum(t == p for _, t, p in rows)}/{len(rows)})")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import TOLERANCE, run_suite

    cfg = _run_config(args)
    rows = []

    def show(r):
        rows.append((r.name, _fmt(r.error), "pass" if r.passed else "FAIL"))
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<26} max rel err {r.error:.3e}  ({r.seconds:.2f} s)")

    results = run_suite(cfg.seed, show)
    if cfg.trace:
        write_csv(cfg.trace, ["check", "max_relative_error", "status"], rows)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks below {TOLERANCE:g}")
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_toy_corpus(args) -> int:
    cfg = _run_config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = toy_corpus(args.speakers, args.utts, cfg.seed)
    rows = []
    for u in corpus:
        write_wav(out / f"{u.uid}.wav", u.waveform)
        rows.append((u.uid, u.speaker, " ".join(SYMBOLS[k - 1] for k in u.transcript)))
    write_csv(out / "transcripts.csv", ["utterance", "speaker", "transcript"], rows)
    print(f"wrote {len(corpus)} utterances to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    common.add_argument("--precision", choices=("high", "single"), default=None,
                        help="float64 (high, default) or float32 arithmetic")
    common.add_argument("--trace", default=None, help="write the loss trace as CSV")
    common.add_argument("--config", default=None, help="run config file (key = value with [sections])")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    synth = argparse.ArgumentParser(add_help=False)
    synth.add_argument("--weights", help="MGW1 weight file")
    synth.add_argument("--out", help="output wav (default <task>.wav)")
    synth.add_argument("--stage1-iters", type=int, default=None, help="spectrogram L-BFGS iterations (default 1000)")
    synth.add_argument("--stage2-iters", type=int, default=None, help="waveform L-BFGS iterations (default 1000)")
    synth.add_argument("--gl-iters", type=int, default=None, help="Griffin-Lim iterations (default 100)")
    synth.add_argument("--init", choices=("noise", "content", "content-waveform"), default=None,
                       help="initialization (default noise)")
    synth.add_argument("--dump-spectrogram", help="save the stage-1 magnitude spectrogram (.npy)")
    synth.add_argument("--sc-out", help="write the Griffin-Lim spectral convergence per iteration as CSV")

    p = argparse.ArgumentParser(prog="speechgram", description=__doc__.splitlines()[0],
                                formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("features", parents=[common], help="dump the feature tensor of a wav file")
    s.add_argument("wav", nargs="?")
    s.add_argument("--out", help="CSV: frame, channel, static, delta, delta_delta")
    s.add_argument("--weights", help="use the frontend stored in this weight file")
    s.add_argument("--dump-filterbank", metavar="CSV", help="write the bins x channels filterbank matrix")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("train-toy", parents=[common], help="train the toy network on the synthetic corpus")
    s.add_argument("--corpus-seed", type=int, default=0)
    s.add_argument("--steps", type=int, default=5000)
    s.add_argument("--speakers", type=int, default=3)
    s.add_argument("--utts", type=int, default=20, help="utterances per speaker")
    s.add_argument("--batch-size", type=int, default=4)
    s.add_argument("--out", default="toy.mgw")
    s.set_defaults(func=cmd_train_toy)

    s = sub.add_parser("invert", parents=[common, synth], help="reconstruct audio from one layer's activations")
    s.add_argument("wav")
    s.add_argument("--layer", required=True)
    s.add_argument("--energy-penalty", choices=("auto", "on", "off"), default="auto",
                   help="frame-energy penalty; auto = on for fully connected layers")
    s.set_defaults(func=cmd_invert)

    s = sub.add_parser("texture", parents=[common, synth], help="synthesize audio matching style Gram statistics")
    s.add_argument("--style", nargs="+", required=True)
    s.add_argument("--layers", default="C0-C5", help="layer range, e.g. C0-C5 or C0,C3")
    s.add_argument("--duration", type=float, default=2.0, help="seconds")
    s.set_defaults(func=cmd_texture)

    s = sub.add_parser("convert", parents=[common, synth], help="voice conversion")
    s.add_argument("--content", required=True)
    s.add_argument("--style", nargs="+", required=True)
    s.set_defaults(func=cmd_convert)

    s = sub.add_parser("speaker-id", parents=[common], help="nearest-neighbour speaker identification on Gram features")
    s.add_argument("--train-dir", required=True, help="wav files named <speaker>_<anything>.wav")
    s.add_argument("--test-dir", help="classify these against --train-dir (default: leave-one-out)")
    s.add_argument("--layers", default="C0-C3", help="layer range; 'features' selects the input features")
    s.add_argument("--weights", help="MGW1 weight file (not needed for 'features')")
    s.add_argument("--report", help="CSV: utterance, true, predicted")
    s.add_argument("--mds-out", help="CSV of 2-D classical MDS coordinates")
    s.set_defaults(func=cmd_speaker_id)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every gradient")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("toy-corpus", parents=[common], help="write the synthetic corpus as wav files")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--speakers", type=int, default=3)
    s.add_argument("--utts", type=int, default=20, help="utterances per speaker")
    s.set_defaults(func=cmd_toy_corpus)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _run_config(args)
        with ad.precision(cfg.precision):
            return args.func(args)
    except (NumericalError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
