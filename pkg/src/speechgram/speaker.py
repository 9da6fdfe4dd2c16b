"""Speaker statistics: Gram feature vectors, nearest-neighbour identification, classical MDS,
and a synthetic multi-speaker corpus for desk-scale experiments."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import frontend as fe
from .losses import gram_flat
from .network import WeightStore, forward_collect

FEATURES = "features"  # pseudo-layer: the feature tensor itself


# ---------------------------------------------------------------------------
# Synthetic corpus

VOWELS = {  # formant centres (Hz) shared by all speakers
    "a": (730.0, 1090.0),
    "i": (270.0, 2290.0),
    "u": (300.0, 870.0),
    "e": (530.0, 1840.0),
}
SYMBOLS = tuple(VOWELS)


@dataclass(frozen=True)
class Speaker:
    name: str
    f0: float
    peak_hz: float
    tilt: float


@dataclass
class Utterance:
    uid: str
    speaker: str
    waveform: np.ndarray
    transcript: list[int]  # symbol indices, 1-based (0 is the CTC blank)
    segments: list[tuple[int, int]] = field(default_factory=list)  # sample spans of voiced segments

    def silent_mask(self, cfg: fe.FrontendConfig) -> np.ndarray:
        """Frames whose window overlaps no voiced segment."""
        t = cfg.num_frames(len(self.waveform))
        starts = np.arange(t) * cfg.hop_samples
        ends = starts + cfg.window_len_samples
        mask = np.ones(t, dtype=bool)
        for a, b in self.segments:
            mask &= (ends <= a) | (starts >= b)
        return mask


def _draw_separated(rng, lo, hi, n, gap):
    for _ in range(1000):
        v = np.sort(rng.uniform(lo, hi, n))
        if n < 2 or np.min(np.diff(v)) >= gap:
            return rng.permutation(v)
    raise ValueError("could not draw separated values")


def make_speakers(num_speakers: int, rng) -> list[Speaker]:
    f0s = _draw_separated(rng, 90.0, 250.0, num_speakers, min(20.0, 160.0 / max(num_speakers, 1) / 2))
    peaks = _draw_separated(rng, 600.0, 3500.0, num_speakers, min(300.0, 2900.0 / max(num_speakers, 1) / 2))
    tilts = rng.uniform(0.5, 1.5, num_speakers)
    return [Speaker(f"spk{i}", float(f0s[i]), float(peaks[i]), float(tilts[i])) for i in range(num_speakers)]


def _segment(spk: Speaker, vowel: str, n: int, sr: int, rng) -> np.ndarray:
    t = np.arange(n) / sr
    # slow intonation around the speaker's f0
    f0 = spk.f0 * (1.0 + 0.02 * np.sin(2 * np.pi * rng.uniform(2.0, 5.0) * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0) / sr
    out = np.zeros(n)
    for h in range(1, int(7800 // spk.f0) + 1):
        f = h * spk.f0
        formant = sum(np.exp(-0.5 * ((f - c) / 90.0) ** 2) for c in VOWELS[vowel]) + 0.03
        env = (1.0 + 1.5 * np.exp(-0.5 * ((f - spk.peak_hz) / 250.0) ** 2)) * (1.0 + f / 1000.0) ** -spk.tilt
        out += formant * env * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    ramp = min(n // 2, int(0.02 * sr))
    fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    out[:ramp] *= fade
    out[n - ramp:] *= fade[::-1]
    return out


def make_utterance(spk: Speaker, uid: str, rng, sr: int = 16000, peak: float = 0.5) -> Utterance:
    total = int(rng.uniform(1.0, 2.0) * sr)
    w = np.zeros(total)
    pos = int(rng.uniform(0.05, 0.15) * sr)
    transcript, spans = [], []
    while True:
        n = int(rng.uniform(0.12, 0.25) * sr)
        if pos + n + int(0.05 * sr) > total and transcript:
            break
        n = min(n, total - pos - int(0.05 * sr))
        k = int(rng.integers(len(SYMBOLS)))
        w[pos:pos + n] = rng.uniform(0.5, 1.0) * _segment(spk, SYMBOLS[k], n, sr, rng)
        transcript.append(k + 1)
        spans.append((pos, pos + n))
        pos += n + int(rng.uniform(0.05, 0.15) * sr)
    w *= peak / np.max(np.abs(w))
    return Utterance(uid, spk.name, w, transcript, spans)


def toy_corpus(num_speakers: int = 3, utts_per_speaker: int = 20, seed: int = 0) -> list[Utterance]:
    """Synthetic speakers (fixed f0 and spectral envelope) reading random vowel strings."""
    rng = np.random.default_rng(seed)
    speakers = make_speakers(num_speakers, rng)
    corpus = []
    for spk in speakers:
        for j in range(utts_per_speaker):
            corpus.append(make_utterance(spk, f"{spk.name}_{j:03d}", rng))
    return corpus


def corpus_speakers(seed: int, num_speakers: int = 3) -> list[Speaker]:
    return make_speakers(num_speakers, np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# Gram features and identification


def gram_feature_vector(waveform: np.ndarray, layers, weights: WeightStore | None,
                        cfg: fe.FrontendConfig | None = None) -> np.ndarray:
    """Concatenated flattened Gram tensors of ``layers``, unit L2 norm overall.

    Each layer's block is normalized before concatenation so layers with large
    activations do not swamp the others.  ``"features"`` selects the input
    feature tensor itself.
    """
    if cfg is None:
        cfg = weights.spec.frontend if weights is not None else fe.DEFAULT
    feats = fe.features(waveform, cfg)
    layers = list(layers)
    net_layers = [l for l in layers if l != FEATURES]
    acts = {}
    if net_layers:
        if weights is None:
            raise ValueError("network layers requested without weights")
        for l in net_layers:
            weights.spec.layer(l)
        order = weights.spec.names
        acts = forward_collect(feats, weights, upto=max(net_layers, key=order.index))
    acts[FEATURES] = feats
    blocks = []
    for l in layers:
        v = gram_flat(acts[l]).ravel()
        n = np.linalg.norm(v)
        blocks.append(v / n if n > 0 else v)
    out = np.concatenate(blocks)
    n = np.linalg.norm(out)
    return out / n if n > 0 else out


def nn_classify(train_vectors, train_labels, query) -> str:
    """1-nearest-neighbour label under Euclidean distance; ties go to the lowest index."""
    train_vectors = np.asarray(train_vectors)
    if len(train_vectors) == 0:
        raise ValueError("empty training set")
    d = np.linalg.norm(train_vectors - np.asarray(query)[None, :], axis=1)
    return train_labels[int(np.argmin(d))]


def loo_predictions(vectors, labels) -> list:
    vectors = np.asarray(vectors)
    preds = []
    for i in range(len(vectors)):
        keep = [j for j in range(len(vectors)) if j != i]
        preds.append(nn_classify(vectors[keep], [labels[j] for j in keep], vectors[i]))
    return preds


def loo_accuracy(vectors, labels) -> float:
    preds = loo_predictions(vectors, labels)
    return float(np.mean([p == l for p, l in zip(preds, labels)]))


# ---------------------------------------------------------------------------
# Classical MDS


def _top_eigenpairs(b: np.ndarray, k: int, tol: float = 1e-10, max_iter: int = 100000):
    """Largest algebraic eigenpairs of symmetric ``b`` by shifted power iteration with deflation.

    Each vector is iterated until its eigen-residual falls below ``tol`` relative
    to the shifted spectrum; a final Rayleigh-Ritz step on the found subspace
    separates nearly degenerate pairs.
    """
    n = b.shape[0]
    shift = float(np.max(np.sum(np.abs(b), axis=1)))  # Gershgorin bound: b + shift*I is PSD
    m = b + shift * np.eye(n)
    scale = max(2.0 * shift, 1e-300)
    vecs = []
    rng = np.random.default_rng(0)
    for _ in range(min(k, n)):
        v = rng.normal(size=n)
        for u in vecs:
            v -= (u @ v) * u
        nv = np.linalg.norm(v)
        if nv == 0:
            break
        v /= nv
        for _ in range(max_iter):
            w = m @ v
            for u in vecs:
                w -= (u @ w) * u
            lam = v @ w
            if np.linalg.norm(w - lam * v) <= tol * scale:
                break
            nw = np.linalg.norm(w)
            if nw == 0:
                break
            v = w / nw
        vecs.append(v)
    q, _ = np.linalg.qr(np.array(vecs).T)
    vals, rot = np.linalg.eigh(q.T @ b @ q)
    order = np.argsort(vals)[::-1]
    return vals[order], q @ rot[:, order]


def classical_mds(dist: np.ndarray, dim: int = 2) -> np.ndarray:
    """Torgerson MDS: double-centred squared distances, top eigenpairs, negatives clamped."""
    d = np.asarray(dist, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError("distance matrix must be square")
    if not np.allclose(d, d.T, rtol=0, atol=1e-12 * max(1.0, np.abs(d).max())):
        raise ValueError("distance matrix must be symmetric")
    n = d.shape[0]
    j = np.eye(n) - np.ones((n, n)) / n
    b = -0.5 * j @ (d * d) @ j
    b = 0.5 * (b + b.T)
    out = np.zeros((n, dim))
    if not np.any(b):
        return out
    vals, vecs = _top_eigenpairs(b, dim)
    for i, lam in enumerate(vals):
        out[:, i] = vecs[:, i] * np.sqrt(max(lam, 0.0))
    return out


def pairwise_distances(vectors) -> np.ndarray:
    v = np.asarray(vectors)
    sq = np.sum(v * v, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * v @ v.T, 0.0)
    np.fill_diagonal(d2, 0.0)
    d = np.sqrt(d2)
    return 0.5 * (d + d.T)
