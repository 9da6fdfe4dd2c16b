"""Waveform generation by optimizing network-based losses.

Every job runs in two stages.  Stage 1 optimizes a log-magnitude spectrogram
through the spectrogram entry of the feature pipeline.  Griffin-Lim turns the
result into a waveform, which stage 2 then optimizes directly, sample by
sample, against the same loss.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import frontend as fe
from .losses import (LossSpec, LossTargets, content_spec, default_loss_spec, make_targets, style_spec,
                     total_loss_node)
from .network import WeightStore, forward_collect, forward_nodes, param_nodes
from .optim import LbfgsConfig, lbfgs_minimize
from .phase import griffin_lim, stft

log = logging.getLogger(__name__)

TASKS = ("invert", "texture", "convert")
INITS = ("noise", "content", "content-waveform")
PEAK = 0.95
NOISE_STD = 0.5
LOG_MAG_FLOOR = 1e-10  # exact zeros (digital silence) in the content init


class JobError(ValueError):
    pass


@dataclass
class SynthesisJob:
    task: str
    loss_spec: LossSpec
    content: np.ndarray | None = None
    styles: list[np.ndarray] = field(default_factory=list)
    duration: float | None = None
    stage1_iters: int = 1000
    stage2_iters: int = 1000
    griffin_lim_iters: int = 100
    seed: int = 0
    init: str = "noise"
    history: int = 10

    def validate(self) -> None:
        if self.task not in TASKS:
            raise JobError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.init not in INITS:
            raise JobError(f"unknown init {self.init!r}; expected one of {INITS}")
        if self.task in ("invert", "convert") and self.content is None:
            raise JobError(f"{self.task} needs a content waveform")
        if self.task in ("texture", "convert") and not self.styles:
            raise JobError(f"{self.task} needs at least one style waveform")
        if self.task == "texture" and (self.duration is None or self.duration <= 0):
            raise JobError("texture needs a positive duration")
        if self.init != "noise" and self.content is None:
            raise JobError(f"init {self.init!r} needs a content waveform")
        if min(self.stage1_iters, self.stage2_iters, self.griffin_lim_iters) < 0:
            raise JobError("iteration budgets must be >= 0")


@dataclass
class SynthesisResult:
    waveform: np.ndarray  # peak-normalized output
    raw: np.ndarray  # optimizer output before normalization
    trace: list[tuple[str, int, float, float]]  # (stage, iteration, loss, grad norm)
    sc: list[float]  # Griffin-Lim spectral convergence per iteration
    spectrogram: np.ndarray | None  # stage-1 magnitudes
    initial_terms: dict[str, float]
    final_terms: dict[str, float]

    def stage_trace(self, stage: str) -> list[float]:
        return [row[2] for row in self.trace if row[0] == stage]


class _Objective:
    """Loss and gradient of one stage, reusing a single recorded graph."""

    def __init__(self, weights: WeightStore, targets: LossTargets, spec: LossSpec, x0: np.ndarray, stage: str):
        cfg = weights.spec.frontend
        self.graph = g = ad.Graph()
        self.x = g.variable(x0)
        if stage == "spectrogram":
            feats = fe.features_from_log_magnitude(self.x, cfg)
        else:
            feats = fe.features_from_waveform(self.x, cfg)
        layers = [t.layer for t in spec.terms]
        order = weights.spec.names
        upto = max(layers, key=order.index) if layers else order[0]
        acts = forward_nodes(feats, param_nodes(g, weights), weights.spec, upto=upto) if layers else {}
        self.total, self.terms = total_loss_node(feats, acts, targets, spec)

    def __call__(self, x):
        self.graph.evaluate({self.x: x})
        grad = self.graph.backward(self.total, [self.x])[self.x]
        return float(self.total.value), grad

    def terms_at(self, x) -> dict[str, float]:
        self.graph.evaluate({self.x: x})
        return {k: float(v.value) for k, v in self.terms.items()}


def _reference_acts(w, weights, upto):
    feats = fe.features(w, weights.spec.frontend)
    return feats, (forward_collect(feats, weights, upto=upto) if upto else {})


def prepare_targets(job: SynthesisJob, weights: WeightStore) -> tuple[LossTargets, np.ndarray | None]:
    spec = job.loss_spec
    order = weights.spec.names
    for t in spec.terms:
        weights.spec.layer(t.layer)
    deepest = lambda names: max(names, key=order.index) if names else None  # noqa: E731
    content_feats = content_acts = None
    if job.content is not None:
        content_feats, content_acts = _reference_acts(job.content, weights, deepest(spec.content_layers))
    style_acts = [_reference_acts(s, weights, deepest(spec.style_layers))[1] for s in job.styles]
    targets = make_targets(spec, content_acts, content_feats, style_acts)
    return targets, content_feats


def _num_frames(job: SynthesisJob, cfg: fe.FrontendConfig) -> int:
    if job.content is not None and job.task != "texture":
        t = cfg.num_frames(len(job.content))
    else:
        t = cfg.num_frames(int(round(job.duration * cfg.sample_rate_hz)))
    if t < 5:
        raise JobError(f"duration too short: {t} frames")
    return t


def _reference_energy(job: SynthesisJob, cfg: fe.FrontendConfig) -> float:
    """Mean per-frame spectral energy of the content (invert/convert) or the styles (texture)."""
    refs = [job.content] if job.task != "texture" and job.content is not None else job.styles
    energies = [np.sum(np.abs(stft(r, cfg)) ** 2, axis=1) for r in refs]
    return float(np.mean(np.concatenate(energies)))


def initial_log_magnitude(job: SynthesisJob, cfg: fe.FrontendConfig, num_frames: int) -> np.ndarray:
    if job.init == "content":
        return np.log(np.maximum(np.abs(stft(job.content, cfg)[:num_frames]), LOG_MAG_FLOOR))
    rng = np.random.default_rng(job.seed)
    z = NOISE_STD * rng.standard_normal((num_frames, cfg.num_bins))
    per_frame = np.sum(np.exp(2 * z)) / num_frames
    return z + 0.5 * np.log(_reference_energy(job, cfg) / per_frame)


def peak_normalize(w: np.ndarray, peak: float = PEAK) -> np.ndarray:
    m = np.max(np.abs(w))
    return w * (peak / m) if m > 0 else w.copy()


def run_job(job: SynthesisJob, weights: WeightStore, callback=None) -> SynthesisResult:
    job.validate()
    cfg = weights.spec.frontend
    t = _num_frames(job, cfg)
    targets, _ = prepare_targets(job, weights)
    trace: list[tuple[str, int, float, float]] = []

    def recorder(stage):
        def cb(it, f, gnorm):
            trace.append((stage, it, f, gnorm))
            if callback:
                callback(stage, it, f, gnorm)
        return cb

    sc: list[float] = []
    spectrogram = None
    if job.init == "content-waveform":
        w0 = np.asarray(job.content, dtype=np.float64)[:cfg.num_samples(t)].copy()
        first = _Objective(weights, targets, job.loss_spec, w0, "waveform")
        initial_terms = first.terms_at(w0)
    else:
        l0 = initial_log_magnitude(job, cfg, t)
        obj1 = _Objective(weights, targets, job.loss_spec, l0, "spectrogram")
        initial_terms = obj1.terms_at(l0)
        res1 = lbfgs_minimize(obj1, l0, LbfgsConfig(history=job.history, max_iters=job.stage1_iters),
                              recorder("spectrogram"))
        spectrogram = np.exp(res1.x)
        w0, sc = griffin_lim(spectrogram, job.griffin_lim_iters, job.seed, cfg)
    obj2 = _Objective(weights, targets, job.loss_spec, w0, "waveform")
    res2 = lbfgs_minimize(obj2, w0, LbfgsConfig(history=job.history, max_iters=job.stage2_iters),
                          recorder("waveform"))
    raw = np.asarray(res2.x, dtype=np.float64)
    final_terms = obj2.terms_at(raw)
    return SynthesisResult(peak_normalize(raw), raw, trace, sc, spectrogram, initial_terms, final_terms)


# ---------------------------------------------------------------------------
# Task helpers


def invert_from_layer(content: np.ndarray, layer: str, weights: WeightStore,
                      energy_penalty_on: bool | None = None, **job_kw) -> SynthesisResult:
    """Reconstruct a waveform from one layer's activations of ``content``.

    The frame-energy penalty defaults to on for fully connected layers.
    """
    weights.spec.layer(layer)
    if energy_penalty_on is None:
        energy_penalty_on = weights.spec.layer(layer).kind == "fc"
    spec = content_spec(layer, 1.0, 1.0 if energy_penalty_on else 0.0)
    return run_job(SynthesisJob("invert", spec, content=content, **job_kw), weights)


def synthesize_texture(styles, layers, duration: float, weights: WeightStore, seed: int = 0,
                       **job_kw) -> SynthesisResult:
    if not styles:
        raise JobError("texture needs at least one style waveform")
    for l in layers:
        weights.spec.layer(l)
    job = SynthesisJob("texture", style_spec(layers), styles=list(styles), duration=duration, seed=seed, **job_kw)
    return run_job(job, weights)


def convert_voice(content: np.ndarray, styles, weights: WeightStore, loss_spec: LossSpec | None = None,
                  **job_kw) -> SynthesisResult:
    spec = loss_spec if loss_spec is not None else default_loss_spec(weights.spec.names)
    return run_job(SynthesisJob("convert", spec, content=content, styles=list(styles), **job_kw), weights)


def feature_relative_error(w: np.ndarray, reference: np.ndarray, cfg: fe.FrontendConfig) -> float:
    """||F(w) - F(ref)|| / ||F(ref)|| over the frames both waveforms share."""
    a = fe.features(w, cfg)
    b = fe.features(reference, cfg)
    t = min(len(a), len(b))
    return float(np.linalg.norm(a[:t] - b[:t]) / np.linalg.norm(b[:t]))
