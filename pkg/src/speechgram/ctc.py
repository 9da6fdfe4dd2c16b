"""CTC negative log-likelihood with its analytic gradient, and greedy decoding.

Blank is symbol 0.  Recursions run in log space over the blank-augmented
label sequence.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

BLANK = 0


class InfeasibleAlignment(ValueError):
    pass


def _logsumexp(a, axis=None):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis) if axis is not None else out.item()


def log_softmax(logits: np.ndarray) -> np.ndarray:
    return logits - _logsumexp(logits, axis=1)[:, None]


def min_frames(labels) -> int:
    """Fewest frames that can emit ``labels``: one per symbol plus a blank between repeats."""
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def ctc_loss(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Return ``(-log p(labels | softmax(logits)), d loss / d logits)`` for T x V logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = [int(s) for s in labels]
    t_len, v = logits.shape
    if not labels:
        raise ValueError("label sequence must be non-empty")
    if any(s <= BLANK or s >= v for s in labels):
        raise ValueError(f"labels must lie in [1, {v - 1}]")
    if min_frames(labels) > t_len:
        raise InfeasibleAlignment(
            f"{len(labels)} labels need at least {min_frames(labels)} frames, got {t_len}")

    logp = log_softmax(logits)
    ext = np.full(2 * len(labels) + 1, BLANK)
    ext[1::2] = labels
    s_len = ext.size
    # transitions from s-2 are allowed onto a symbol that differs from the one two back
    skip = np.zeros(s_len, dtype=bool)
    skip[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])

    neg = -np.inf
    alpha = np.full((t_len, s_len), neg)
    alpha[0, 0] = logp[0, ext[0]]
    alpha[0, 1] = logp[0, ext[1]]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        a1 = np.concatenate(([neg], prev[:-1]))
        a2 = np.where(skip, np.concatenate(([neg, neg], prev[:-2])), neg)
        alpha[t] = np.logaddexp(np.logaddexp(prev, a1), a2) + logp[t, ext]

    beta = np.full((t_len, s_len), neg)
    beta[-1, -1] = logp[-1, ext[-1]]
    beta[-1, -2] = logp[-1, ext[-2]]
    skip_next = np.zeros(s_len, dtype=bool)
    skip_next[:-2] = skip[2:]
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1]
        b1 = np.concatenate((nxt[1:], [neg]))
        b2 = np.where(skip_next, np.concatenate((nxt[2:], [neg, neg])), neg)
        beta[t] = np.logaddexp(np.logaddexp(nxt, b1), b2) + logp[t, ext]

    log_like = np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    # alpha * beta double-counts the emission at t
    occ = alpha + beta - logp[:, ext]
    grad = np.exp(logp)
    for s in range(s_len):
        grad[:, ext[s]] -= np.exp(occ[:, s] - log_like)
    return float(-log_like), grad


def greedy_decode(logits: np.ndarray) -> list[int]:
    path = np.asarray(logits).argmax(axis=1)
    out, prev = [], None
    for p in path:
        p = int(p)
        if p != prev and p != BLANK:
            out.append(p)
        prev = p
    return out


def edit_distance(a, b) -> int:
    a, b = list(a), list(b)
    row = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        prev, row[0] = row[0], i
        for j, y in enumerate(b, 1):
            cur = min(row[j] + 1, row[j - 1] + 1, prev + (x != y))
            prev, row[j] = row[j], cur
    return row[-1]


def read_charset(path) -> list[str]:
    """Symbols by index; line 0 is the blank placeholder."""
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ValueError(f"{path}: empty charset")
    return lines


def write_charset(path, symbols) -> None:
    Path(path).write_text("\n".join(["<blank>", *symbols]) + "\n", encoding="utf-8")
