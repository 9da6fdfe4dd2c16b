"""16-bit mono PCM WAV reading and writing at a fixed sample rate."""
from __future__ import annotations

import wave

import numpy as np

SAMPLE_RATE = 16000


class WavFormatError(ValueError):
    pass


def read_wav(path, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Samples scaled by 1/32768.  Only PCM, 16-bit, mono files at ``sample_rate`` are accepted."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as e:
        raise WavFormatError(f"{path}: format: {e}") from None
    except EOFError:
        raise WavFormatError(f"{path}: truncated RIFF header") from None
    if channels != 1:
        raise WavFormatError(f"{path}: channels: expected 1 (mono), got {channels}")
    if width != 2:
        raise WavFormatError(f"{path}: sample width: expected 16-bit, got {8 * width}-bit")
    if rate != sample_rate:
        raise WavFormatError(f"{path}: sample rate: expected {sample_rate} Hz, got {rate} Hz")
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path, samples, sample_rate: int = SAMPLE_RATE) -> None:
    """Inverse of :func:`read_wav` with rounding and saturation to the 16-bit range."""
    q = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(q.tobytes())
