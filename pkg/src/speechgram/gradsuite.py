"""Central finite-difference checks for every differentiable operator and the waveform-to-loss path."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import frontend as fe
from .ctc import ctc_loss
from .losses import LossSpec, LossTerm, gram_node, make_targets, total_loss_node
from .network import forward_collect, forward_nodes, init_random, param_nodes, toy_spec

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error < TOLERANCE


def _contract(node: ad.Node, seed: int = 1) -> ad.Node:
    """Scalar sum(node * R) with a fixed random R, so every output coordinate matters."""
    r = np.random.default_rng(seed).normal(size=node.shape)
    return ad.sum(node * node.graph.constant(r))


def _away_from_zero(rng, shape, lo=0.2, hi=1.5):
    return rng.uniform(lo, hi, shape) * rng.choice([-1.0, 1.0], shape)


def _distinct(rng, shape):
    """Values with well separated ties, so max-pool winners are stable under the FD step."""
    n = int(np.prod(shape))
    return (rng.permutation(n).reshape(shape) * 0.1 + rng.uniform(-0.01, 0.01, shape))


def _op_checks(rng) -> list[tuple[str, Callable, list[np.ndarray]]]:
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    pos = rng.uniform(0.5, 2.0, (3, 4))
    return [
        ("add", lambda x, y: _contract(x + y), [a, b]),
        ("sub", lambda x, y: _contract(x - y), [a, b]),
        ("mul", lambda x, y: _contract(x * y), [a, b]),
        ("div", lambda x, y: _contract(x / y), [a, pos]),
        ("add_scalar", lambda x: _contract(ad.add_scalar(x, 0.7)), [a]),
        ("mul_scalar", lambda x: _contract(ad.mul_scalar(x, -1.3)), [a]),
        ("square", lambda x: _contract(ad.square(x)), [a]),
        ("sqrt", lambda x: _contract(ad.sqrt(x)), [pos]),
        ("log", lambda x: _contract(ad.log(x)), [pos]),
        ("exp", lambda x: _contract(ad.exp(x)), [a]),
        ("relu", lambda x: _contract(ad.relu(x)), [_away_from_zero(rng, (3, 4))]),
        ("matmul", lambda x, y: _contract(x @ y), [rng.normal(size=(3, 5)), rng.normal(size=(5, 2))]),
        ("conv2d", lambda x, w: _contract(ad.conv2d(x, w)),
         [rng.normal(size=(6, 5, 2)), rng.normal(size=(3, 5, 2, 3))]),
        ("maxpool2d", lambda x: _contract(ad.maxpool2d(x, 2, 2)), [_distinct(rng, (5, 7, 2))]),
        ("affine", lambda x, s, t: _contract(ad.affine(x, s, t)),
         [rng.normal(size=(4, 3, 2)), rng.normal(size=2), rng.normal(size=2)]),
        ("sum", lambda x: _contract(ad.sum(x, axes=1)), [rng.normal(size=(3, 4, 2))]),
        ("mean", lambda x: _contract(ad.mean(x, axes=(0, 2))), [rng.normal(size=(3, 4, 2))]),
        ("concat", lambda x, y: _contract(ad.concat([x, y], axis=1)), [a, rng.normal(size=(3, 2))]),
        ("gather", lambda x: _contract(ad.gather(x, np.array([[0, 2], [2, 2], [1, 0]]))), [a]),
        ("reshape", lambda x: _contract(ad.reshape(x, (2, 6))), [a]),
        ("transpose", lambda x: _contract(ad.transpose(x, (1, 0))), [a]),
    ]


def _frontend_checks(rng) -> list[tuple[str, Callable, list[np.ndarray], int | None]]:
    cfg = fe.TOY
    n = cfg.num_samples(6)
    w = 0.3 * rng.normal(size=n)
    mag = rng.uniform(0.1, 2.0, (6, cfg.num_bins))
    return [
        ("frame_and_window", lambda x: _contract(fe.frame_and_window(x, cfg)), [w], 200),
        ("dft_magnitude", lambda x: _contract(fe.dft_magnitude(fe.frame_and_window(x, cfg), cfg)), [w], 200),
        ("deltas", lambda x: _contract(fe.deltas(x)), [rng.normal(size=(7, 4))], None),
        ("log_filterbank", lambda x: _contract(fe.log_filterbank(x, cfg)), [mag], 300),
        ("features_from_magnitude", lambda x: _contract(fe.features_from_magnitude(x, cfg)), [mag], 300),
        ("features_from_log_magnitude", lambda x: _contract(fe.features_from_log_magnitude(x, cfg)),
         [np.log(mag)], 300),
        ("features_from_waveform", lambda x: _contract(fe.features_from_waveform(x, cfg)), [w], 200),
        ("frame_energy", lambda x: _contract(fe.frame_energy(fe.features_from_magnitude(x, cfg))), [mag], 200),
    ]


def _loss_checks(rng):
    c = rng.normal(size=(5, 3, 2))
    return [
        ("gram_node", lambda x: _contract(gram_node(x)), [c], None),
    ]


def _end_to_end_checks(rng, seconds: float = 0.25):
    """Waveform (and log-magnitude) -> features -> toy network -> style + content + energy loss."""
    spec = toy_spec(4)
    weights = init_random(spec, 0)
    cfg = spec.frontend
    n = int(seconds * cfg.sample_rate_hz)
    content = 0.3 * rng.normal(size=n)
    style = 0.3 * rng.normal(size=n)
    loss_spec = LossSpec((LossTerm("C0", "style", 1.0), LossTerm("C2", "style", 1.0),
                          LossTerm("C4", "content", 0.2), LossTerm("FC0", "content", 10.0)), energy_weight=1.0)
    cf = fe.features(content, cfg)
    targets = make_targets(loss_spec, forward_collect(cf, weights, "FC0"), cf,
                           [forward_collect(fe.features(style, cfg), weights, "C2")])

    def loss(feats):
        acts = forward_nodes(feats, param_nodes(feats.graph, weights), spec, upto="FC0")
        return total_loss_node(feats, acts, targets, loss_spec)[0]

    log_mag = np.log(np.abs(np.fft.rfft(fe.frame_and_window(ad.Graph().constant(0.3 * rng.normal(size=n)), cfg).value,
                                        n=cfg.dft_size, axis=1)))
    return [
        ("waveform_to_loss", lambda x: loss(fe.features_from_waveform(x, cfg)), [0.3 * rng.normal(size=n)], 60),
        ("log_magnitude_to_loss", lambda x: loss(fe.features_from_log_magnitude(x, cfg)), [log_mag], 60),
    ]


def _network_check(rng):
    spec = toy_spec(4)
    weights = init_random(spec, 1)
    feats = rng.normal(size=(12, spec.frontend.num_channels, 3))
    return ("network_forward", lambda x: _contract(forward_nodes(x, param_nodes(x.graph, weights), spec)["CTC"]),
            [feats], 150)


def _ctc_check(rng) -> float:
    logits = rng.normal(size=(6, 4))
    labels = [1, 2, 2]
    _, grad = ctc_loss(logits, labels)
    num = ad.numerical_gradient(lambda z: ctc_loss(z, labels)[0], logits)
    return float(ad.relative_error(grad, num).max())


def run_suite(seed: int = 0, callback=None) -> list[CheckResult]:
    """Every check at high precision; ``callback(result)`` is called as each one finishes."""
    rng = np.random.default_rng(seed)
    checks = [(n, f, x, None) for n, f, x in _op_checks(rng)]
    checks += _frontend_checks(rng) + _loss_checks(rng) + [_network_check(rng)] + _end_to_end_checks(rng)
    results = []
    with ad.precision("high"):
        for name, build, inputs, coords in checks:
            t0 = time.perf_counter()
            err = ad.gradcheck(build, inputs, max_coords=coords, seed=seed)
            results.append(CheckResult(name, err, time.perf_counter() - t0))
            if callback:
                callback(results[-1])
        t0 = time.perf_counter()
        results.append(CheckResult("ctc_loss", _ctc_check(rng), time.perf_counter() - t0))
        if callback:
            callback(results[-1])
    return results
