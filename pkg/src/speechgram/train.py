"""CTC training of the toy acoustic network with Adam."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import frontend as fe
from .ctc import ctc_loss, edit_distance, greedy_decode
from .network import NetworkSpec, WeightStore, forward_collect, forward_nodes, init_random, toy_spec
from .optim import AdamConfig, AdamState, adam_step
from .speaker import SYMBOLS, Utterance, toy_corpus

log = logging.getLogger(__name__)

STAT_SUFFIXES = (".bn_mean", ".bn_var")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 5000
    batch_size: int = 4
    seed: int = 0
    bn_momentum: float = 0.1
    adam: AdamConfig = field(default_factory=AdamConfig)


def _utterance_grads(spec: NetworkSpec, arrays: dict, feats, labels, rng):
    g = ad.Graph()
    params = {k: (g.constant(v) if k.endswith(STAT_SUFFIXES) else g.variable(v)) for k, v in arrays.items()}
    stats = {}
    acts = forward_nodes(g.constant(feats), params, spec, mode="training", rng=rng, stats=stats)
    logits = acts[spec.layers[-1].name]
    nll, dlogits = ctc_loss(logits.value, labels)
    # d(sum(logits * dlogits)) / d(theta) is the CTC gradient
    surrogate = ad.sum(logits * g.constant(dlogits))
    trainable = [n for k, n in params.items() if not k.endswith(STAT_SUFFIXES)]
    grads = g.backward(surrogate, trainable)
    names = {n: k for k, n in params.items()}
    return nll, {names[n]: v for n, v in grads.items()}, stats


def train_ctc(weights: WeightStore, data: list[tuple[np.ndarray, list[int]]], cfg: TrainConfig = TrainConfig(),
              callback=None) -> tuple[WeightStore, list[tuple[int, float]]]:
    """Train on (features, labels) pairs; returns new weights and the per-step mean NLL."""
    rng = np.random.default_rng(cfg.seed)
    params = {k: v.astype(np.float64) for k, v in weights.arrays.items()}
    state = AdamState()
    trace = []
    spec = weights.spec
    for step in range(1, cfg.steps + 1):
        batch = rng.choice(len(data), size=min(cfg.batch_size, len(data)), replace=False)
        total = {}
        losses = []
        for i in batch:
            feats, labels = data[int(i)]
            nll, grads, stats = _utterance_grads(spec, params, feats, labels, rng)
            losses.append(nll)
            for k, v in grads.items():
                total[k] = total.get(k, 0.0) + v / len(batch)
            for name, (mu, var) in stats.items():
                m = cfg.bn_momentum / len(batch)
                params[f"{name}.bn_mean"] = (1 - m) * params[f"{name}.bn_mean"] + m * mu
                params[f"{name}.bn_var"] = (1 - m) * params[f"{name}.bn_var"] + m * var
        learn = {k: v for k, v in params.items() if not k.endswith(STAT_SUFFIXES)}
        adam_step(learn, total, state, cfg.adam, step)
        trace.append((step, float(np.mean(losses))))
        if callback:
            callback(step, trace[-1][1])
    return WeightStore(spec, {k: v.astype(np.float32) for k, v in params.items()}), trace


def symbol_error_rate(weights: WeightStore, data) -> float:
    errors = total = 0
    for feats, labels in data:
        logits = forward_collect(feats, weights)[weights.spec.layers[-1].name]
        errors += edit_distance(greedy_decode(logits), labels)
        total += len(labels)
    return errors / max(total, 1)


def corpus_features(corpus: list[Utterance], cfg: fe.FrontendConfig) -> list[tuple[np.ndarray, list[int]]]:
    return [(fe.features(u.waveform, cfg), list(u.transcript)) for u in corpus]


@dataclass
class ToyTrainingReport:
    weights: WeightStore
    trace: list[tuple[int, float]]
    train_ser: float
    heldout_ser: float


def train_toy(corpus_seed: int = 0, steps: int = 5000, seed: int = 0, num_speakers: int = 3,
              utts_per_speaker: int = 20, batch_size: int = 4, callback=None) -> ToyTrainingReport:
    """Train the toy network on the synthetic corpus; reports greedy symbol error rates."""
    spec: NetworkSpec = toy_spec(len(SYMBOLS))
    corpus = toy_corpus(num_speakers, utts_per_speaker, corpus_seed)
    data = corpus_features(corpus, spec.frontend)
    cfg = TrainConfig(steps=steps, batch_size=batch_size, seed=seed,
                      adam=AdamConfig(total_steps=steps))
    weights, trace = train_ctc(init_random(spec, seed), data, cfg, callback)
    heldout = corpus_features(heldout_corpus(corpus_seed, num_speakers), spec.frontend)
    return ToyTrainingReport(weights, trace, symbol_error_rate(weights, data), symbol_error_rate(weights, heldout))


def heldout_corpus(corpus_seed: int, num_speakers: int = 3, utts_per_speaker: int = 5) -> list[Utterance]:
    """Fresh utterances by the same synthetic speakers as ``toy_corpus(seed=corpus_seed)``."""
    from .speaker import corpus_speakers, make_utterance
    rng = np.random.default_rng([corpus_seed, 1])
    return [make_utterance(s, f"{s.name}_h{j:03d}", rng)
            for s in corpus_speakers(corpus_seed, num_speakers) for j in range(utts_per_speaker)]
