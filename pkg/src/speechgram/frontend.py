"""Differentiable log filterbank features with deltas.

The pipeline is framing + Hamming window, a real DFT done as two matrix
products, a smooth modulus, a mixed linear/mel filterbank, a floored log and
regression deltas.  Every step is expressed with :mod:`speechgram.autodiff`
operators so gradients reach either the waveform samples or a magnitude
spectrogram variable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict, replace
from functools import lru_cache

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate_hz: int = 16000
    window_len_samples: int = 400
    hop_samples: int = 160
    dft_size: int = 512
    num_channels: int = 80
    linear_mel_boundary_hz: float = 1000.0
    fmax_hz: float = 8000.0
    modulus_epsilon: float = 1e-3
    log_floor: float = 1e-6

    def __post_init__(self):
        if not 0 < self.window_len_samples <= self.dft_size:
            raise ValueError("window_len_samples must be in (0, dft_size]")
        if not 0 < self.hop_samples <= self.window_len_samples:
            raise ValueError("hop_samples must be in (0, window_len_samples]")
        if not 0 < self.linear_mel_boundary_hz < self.fmax_hz <= self.sample_rate_hz / 2:
            raise ValueError("need 0 < linear_mel_boundary_hz < fmax_hz <= sample_rate_hz / 2")
        if self.modulus_epsilon < 0 or self.log_floor <= 0:
            raise ValueError("modulus_epsilon must be >= 0 and log_floor > 0")

    @property
    def num_bins(self) -> int:
        return self.dft_size // 2 + 1

    @property
    def bin_hz(self) -> float:
        return self.sample_rate_hz / self.dft_size

    @property
    def num_linear_channels(self) -> int:
        # bins strictly below the boundary frequency
        return int(math.ceil(self.linear_mel_boundary_hz / self.bin_hz - 1e-9))

    def num_frames(self, num_samples: int) -> int:
        if num_samples < self.window_len_samples:
            return 0
        return (num_samples - self.window_len_samples) // self.hop_samples + 1

    def num_samples(self, num_frames: int) -> int:
        return (num_frames - 1) * self.hop_samples + self.window_len_samples

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FrontendConfig":
        return cls(**d)


DEFAULT = FrontendConfig()
# small-network override: 20 channels, 8 linear bins below 250 Hz and 12 mel bands
TOY = replace(DEFAULT, num_channels=20, linear_mel_boundary_hz=250.0)

DELTA_KERNEL = np.array([-2.0, -1.0, 0.0, 1.0, 2.0]) / 10.0


class WaveformTooShort(ValueError):
    pass


def hamming(n: int) -> np.ndarray:
    return 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(n) / (n - 1))


@lru_cache(maxsize=None)
def _dft_matrices(cfg: FrontendConfig):
    n = np.arange(cfg.dft_size)[:, None]
    k = np.arange(cfg.num_bins)[None, :]
    ang = 2 * np.pi * n * k / cfg.dft_size
    return np.cos(ang), -np.sin(ang)


def dft_matrices(cfg: FrontendConfig = DEFAULT) -> tuple[np.ndarray, np.ndarray]:
    """Real and imaginary DFT matrices, ``dft_size`` x ``num_bins`` each."""
    re, im = _dft_matrices(cfg)
    return re.copy(), im.copy()


def mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


@lru_cache(maxsize=None)
def _filterbank(cfg: FrontendConfig) -> np.ndarray:
    n_lin = cfg.num_linear_channels
    n_mel = cfg.num_channels - n_lin
    if n_mel < 1:
        raise ValueError(
            f"{cfg.num_channels} channels cannot cover {n_lin} linear bins below "
            f"{cfg.linear_mel_boundary_hz} Hz plus at least one mel band")
    fb = np.zeros((cfg.num_bins, cfg.num_channels))
    fb[np.arange(n_lin), np.arange(n_lin)] = 1.0
    edges = mel_to_hz(np.linspace(mel(cfg.linear_mel_boundary_hz), mel(cfg.fmax_hz), n_mel + 2))
    freqs = np.arange(cfg.num_bins) * cfg.bin_hz
    for m in range(n_mel):
        lo, mid, hi = edges[m:m + 3]
        rise = (freqs - lo) / (mid - lo)
        fall = (hi - freqs) / (hi - mid)
        fb[:, n_lin + m] = np.maximum(0.0, np.minimum(rise, fall))
    if np.any(fb.sum(axis=0) <= 0):
        raise ValueError("filterbank has an empty channel; increase frequency resolution")
    return fb


def build_filterbank(cfg: FrontendConfig = DEFAULT) -> np.ndarray:
    """``num_bins`` x ``num_channels`` matrix; identity copies below the boundary, mel triangles above."""
    return _filterbank(cfg).copy()


def frame_indices(num_samples: int, cfg: FrontendConfig = DEFAULT) -> np.ndarray:
    t = cfg.num_frames(num_samples)
    if t < 1:
        raise WaveformTooShort(
            f"waveform of {num_samples} samples is shorter than one window ({cfg.window_len_samples})")
    return np.arange(t)[:, None] * cfg.hop_samples + np.arange(cfg.window_len_samples)[None, :]


def frame_and_window(w: ad.Node, cfg: FrontendConfig = DEFAULT) -> ad.Node:
    idx = frame_indices(w.shape[0], cfg)
    frames = ad.gather(w, idx)
    win = np.broadcast_to(hamming(cfg.window_len_samples), idx.shape)
    return frames * w.graph.constant(win)


def dft_magnitude(frames: ad.Node, cfg: FrontendConfig = DEFAULT) -> ad.Node:
    """Smooth modulus ``sqrt(eps + re^2 + im^2)`` of the zero-padded frame DFT."""
    re_m, im_m = _dft_matrices(cfg)
    n = frames.shape[1]
    # zero padding to dft_size only touches the first n rows
    g = frames.graph
    re = frames @ g.constant(re_m[:n])
    im = frames @ g.constant(im_m[:n])
    return ad.sqrt(ad.add_scalar(ad.square(re) + ad.square(im), cfg.modulus_epsilon))


def delta_indices(num_frames: int) -> np.ndarray:
    """T x 5 frame indices of the regression window with edge replication."""
    offs = np.arange(-2, 3)
    return np.clip(np.arange(num_frames)[:, None] + offs[None, :], 0, num_frames - 1)


def deltas(x: ad.Node) -> ad.Node:
    """Regression-window deltas over time (axis 0) with replicated edges.

    Written as differences of opposite taps so constant inputs give exactly 0.
    """
    idx = delta_indices(x.shape[0])
    tap = [ad.gather(x, idx[:, k]) for k in range(5)]
    return ad.mul_scalar(tap[4] - tap[0], DELTA_KERNEL[4]) + ad.mul_scalar(tap[3] - tap[1], DELTA_KERNEL[3])


def log_filterbank(mag: ad.Node, cfg: FrontendConfig = DEFAULT) -> ad.Node:
    fb = mag @ mag.graph.constant(_filterbank(cfg))
    return ad.log(ad.add_scalar(fb, cfg.log_floor))


def features_from_magnitude(mag: ad.Node, cfg: FrontendConfig = DEFAULT) -> ad.Node:
    """T x C x 3 feature tensor (static, delta, delta-delta) from a T x B magnitude node."""
    static = log_filterbank(mag, cfg)
    d1 = deltas(static)
    d2 = deltas(d1)
    t, c = static.shape
    parts = [ad.reshape(p, (t, c, 1)) for p in (static, d1, d2)]
    return ad.concat(parts, axis=2)


def features_from_log_magnitude(log_mag: ad.Node, cfg: FrontendConfig = DEFAULT) -> ad.Node:
    """Features of a spectrogram given as log |DFT|.

    The smooth modulus is applied here, so the result equals the waveform path
    whenever ``exp(log_mag)`` is the exact magnitude of some waveform's frames.
    """
    power = ad.exp(ad.mul_scalar(log_mag, 2.0))
    return features_from_magnitude(ad.sqrt(ad.add_scalar(power, cfg.modulus_epsilon)), cfg)


def features_from_waveform(w: ad.Node, cfg: FrontendConfig = DEFAULT) -> ad.Node:
    return features_from_magnitude(dft_magnitude(frame_and_window(w, cfg), cfg), cfg)


def features(x: np.ndarray, cfg: FrontendConfig = DEFAULT, *, spectrogram: bool = False) -> np.ndarray:
    """Feature tensor of a waveform (1-D) or, with ``spectrogram=True``, of a T x B magnitude array."""
    g = ad.Graph()
    node = g.constant(x)
    if spectrogram:
        out = features_from_magnitude(node, cfg)
    else:
        out = features_from_waveform(node, cfg)
    return out.value


def magnitude(w: np.ndarray, cfg: FrontendConfig = DEFAULT) -> np.ndarray:
    """Smooth-modulus magnitude spectrogram of a waveform array."""
    g = ad.Graph()
    return dft_magnitude(frame_and_window(g.constant(w), cfg), cfg).value


def frame_energy(feats) -> "ad.Node | np.ndarray":
    """Per-frame sum of the static log-filterbank channels."""
    if isinstance(feats, ad.Node):
        t = feats.shape[0]
        per_type = ad.transpose(ad.sum(feats, axes=1), (1, 0))  # 3 x T
        return ad.reshape(ad.gather(per_type, [0]), (t,))
    return np.asarray(feats).sum(axis=1)[:, 0]  # same reduction as the node path
