"""STFT / inverse STFT with the frontend framing, and Griffin-Lim phase recovery."""
from __future__ import annotations

import numpy as np

from .frontend import DEFAULT, FrontendConfig, frame_indices, hamming

NORM_FLOOR = 1e-8


def stft(w: np.ndarray, cfg: FrontendConfig = DEFAULT) -> np.ndarray:
    """Complex T x B spectrum of Hamming-windowed frames, zero-padded to ``dft_size``."""
    w = np.asarray(w, dtype=np.float64)
    frames = w[frame_indices(w.shape[0], cfg)] * hamming(cfg.window_len_samples)
    return np.fft.rfft(frames, n=cfg.dft_size, axis=1)


def istft_overlap_add(spec: np.ndarray, cfg: FrontendConfig = DEFAULT) -> np.ndarray:
    """Least-squares inverse: windowed overlap-add divided by the summed squared window."""
    spec = np.asarray(spec)
    t = spec.shape[0]
    n = cfg.window_len_samples
    win = hamming(n)
    frames = np.fft.irfft(spec, n=cfg.dft_size, axis=1)[:, :n] * win
    length = cfg.num_samples(t)
    out = np.zeros(length)
    norm = np.zeros(length)
    for i in range(t):
        s = i * cfg.hop_samples
        out[s:s + n] += frames[i]
        norm[s:s + n] += win * win
    return out / np.maximum(norm, NORM_FLOOR)


def spectral_convergence(w: np.ndarray, mag: np.ndarray, cfg: FrontendConfig = DEFAULT) -> float:
    """||abs(STFT(w)) - mag||_F / ||mag||_F, defined as 0 for an all-zero target."""
    ref = np.linalg.norm(mag)
    if ref == 0:
        return 0.0
    return float(np.linalg.norm(np.abs(stft(w, cfg)) - mag) / ref)


def griffin_lim(mag: np.ndarray, iters: int = 100, seed: int = 0,
                cfg: FrontendConfig = DEFAULT) -> tuple[np.ndarray, list[float]]:
    """Waveform whose STFT magnitude approximates ``mag``, plus the spectral convergence of each iterate.

    Starts from uniformly random phase drawn from ``seed``.  Uses the exact
    modulus; the smoothed modulus of the feature pipeline is not involved.
    """
    mag = np.asarray(mag, dtype=np.float64)
    if np.any(mag < 0):
        raise ValueError("magnitudes must be non-negative")
    if not np.any(mag):
        return np.zeros(cfg.num_samples(mag.shape[0])), [0.0] * iters
    rng = np.random.default_rng(seed)
    phase = np.exp(1j * rng.uniform(-np.pi, np.pi, size=mag.shape))
    ref = np.linalg.norm(mag)
    history = []
    w = istft_overlap_add(mag * phase, cfg)
    for k in range(iters):
        if k:
            w = istft_overlap_add(mag * phase, cfg)
        spec = stft(w, cfg)
        history.append(float(np.linalg.norm(np.abs(spec) - mag) / ref))
        phase = np.exp(1j * np.angle(spec))
    return w, history
