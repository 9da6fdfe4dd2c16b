"""Texture synthesis and voice conversion between toy speakers, with a 2-D MDS map.

Synthesizes a texture from each speaker's style and converts one held-out
utterance of every speaker towards every other speaker, then classifies all
outputs with the shallow-layer Gram-NN system and writes MDS coordinates of
corpus and outputs together.

    python3 scripts/texture_and_conversion.py --weights toy.mgw --iters 300
"""
import argparse
import itertools

from _common import toy_weights, write_rows
from speechgram.speaker import classical_mds, gram_feature_vector, nn_classify, pairwise_distances, toy_corpus
from speechgram.synth import convert_voice, synthesize_texture
from speechgram.train import heldout_corpus
from speechgram.wavio import write_wav

SHALLOW = ["C0", "C1", "C2", "C3"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--weights")
    ap.add_argument("--iters", type=int, default=1000, help="L-BFGS iterations per stage")
    ap.add_argument("--duration", type=float, default=1.5)
    ap.add_argument("--out", default="conversion.csv")
    ap.add_argument("--mds-out", default="conversion_mds.csv")
    ap.add_argument("--wav-prefix")
    args = ap.parse_args()

    weights = toy_weights(args.weights)
    corpus = toy_corpus(3, 20, 0)
    speakers = sorted({u.speaker for u in corpus})
    style = {s: [u.waveform for u in corpus if u.speaker == s] for s in speakers}
    content = {s: next(u for u in heldout_corpus(0) if u.speaker == s) for s in speakers}
    train_v = [gram_feature_vector(u.waveform, SHALLOW, weights) for u in corpus]
    train_l = [u.speaker for u in corpus]

    outputs = []  # (name, task, source, target, raw waveform, exported waveform)
    for s in speakers:
        res = synthesize_texture(style[s], ["C0", "C1", "C2", "C3", "C4", "C5"], args.duration, weights,
                                 stage1_iters=args.iters, stage2_iters=args.iters)
        outputs.append((f"texture_{s}", "texture", "", s, res.raw, res.waveform))
    for a, b in itertools.permutations(speakers, 2):
        res = convert_voice(content[a].waveform, style[b], weights, stage1_iters=args.iters, stage2_iters=args.iters)
        outputs.append((f"convert_{a}_to_{b}", "convert", a, b, res.raw, res.waveform))

    rows, vecs = [], []
    for name, task, src, dst, raw, exported in outputs:
        v = gram_feature_vector(raw, SHALLOW, weights)
        vecs.append(v)
        label = nn_classify(train_v, train_l, v)
        rows.append((name, task, src, dst, label))
        print(f"{name:<22} Gram-NN label {label} (target {dst})")
        if args.wav_prefix:
            write_wav(f"{args.wav_prefix}{name}.wav", exported)
    write_rows(args.out, ["output", "task", "content_speaker", "style_speaker", "gram_nn_label"], rows)
    xy = classical_mds(pairwise_distances(train_v + vecs), 2)
    names = [u.uid for u in corpus] + [o[0] for o in outputs]
    kinds = train_l + [o[1] + ":" + o[3] for o in outputs]
    write_rows(args.mds_out, ["item", "group", "x", "y"], [(n, k, repr(x), repr(y)) for n, k, (x, y) in zip(names, kinds, xy)])


if __name__ == "__main__":
    main()
