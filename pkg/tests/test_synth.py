import numpy as np
import pytest

from speechgram import frontend as fe
from speechgram.losses import content_spec, style_spec
from speechgram.network import init_random, toy_spec
from speechgram.speaker import toy_corpus
from speechgram.synth import (JobError, SynthesisJob, convert_voice, feature_relative_error, initial_log_magnitude,
                              invert_from_layer, peak_normalize, run_job, synthesize_texture)


@pytest.fixture(scope="module")
def weights():
    return init_random(toy_spec(5), 0)


@pytest.fixture(scope="module")
def utts():
    c = toy_corpus(2, 1, seed=11)
    return [u.waveform[:6000] for u in c]


@pytest.mark.parametrize("kw, match", [
    (dict(task="paint"), "unknown task"),
    (dict(task="invert"), "content"),
    (dict(task="texture", duration=1.0), "style"),
    (dict(task="texture", styles=[np.ones(8000)]), "duration"),
    (dict(task="texture", styles=[np.ones(8000)], duration=1.0, init="content"), "content waveform"),
    (dict(task="invert", content=np.ones(8000), init="zeros"), "unknown init"),
    (dict(task="invert", content=np.ones(8000), stage1_iters=-1), ">= 0"),
])
def test_job_validation(kw, match):
    with pytest.raises(JobError, match=match):
        SynthesisJob(loss_spec=content_spec("C0"), **kw).validate()


def test_too_short(weights):
    job = SynthesisJob("invert", content_spec("C0"), content=np.ones(500))
    with pytest.raises(JobError, match="too short"):
        run_job(job, weights)


def test_peak_normalize():
    assert np.max(np.abs(peak_normalize(np.array([0.1, -0.4])))) == pytest.approx(0.95)
    assert not peak_normalize(np.zeros(3)).any()


def test_noise_init_energy_matches_reference(utts):
    job = SynthesisJob("invert", content_spec("C0"), content=utts[0])
    t = fe.TOY.num_frames(len(utts[0]))
    l0 = initial_log_magnitude(job, fe.TOY, t)
    from speechgram.phase import stft
    ref = np.mean(np.sum(np.abs(stft(utts[0], fe.TOY)) ** 2, axis=1))
    assert np.mean(np.sum(np.exp(2 * l0), axis=1)) == pytest.approx(ref, rel=1e-9)


def test_zero_budget_texture_is_initialization(weights, utts):
    res = synthesize_texture([utts[1]], ["C0"], 1.0, weights, stage1_iters=0, stage2_iters=0, griffin_lim_iters=3)
    job = SynthesisJob("texture", style_spec(["C0"]), styles=[utts[1]], duration=1.0)
    t = fe.TOY.num_frames(16000)
    assert np.array_equal(res.spectrogram, np.exp(initial_log_magnitude(job, fe.TOY, t)))
    assert res.initial_terms == res.final_terms or len(res.sc) == 3
    assert abs(len(res.waveform) - 16000) <= fe.TOY.hop_samples
    assert np.max(np.abs(res.waveform)) == pytest.approx(0.95)


def test_content_waveform_is_fixed_point(weights, utts):
    res = invert_from_layer(utts[0], "C2", weights, init="content-waveform", stage2_iters=20)
    assert sum(res.initial_terms.values()) < 1e-8
    n = len(res.raw)
    assert np.max(np.abs(res.raw - utts[0][:n])) < 1e-6


def test_inversion_reduces_loss_monotonically(weights, utts):
    res = invert_from_layer(utts[0], "C0", weights, stage1_iters=15, stage2_iters=5, griffin_lim_iters=5)
    for stage in ("spectrogram", "waveform"):
        tr = res.stage_trace(stage)
        assert tr and all(b <= a for a, b in zip(tr, tr[1:]))
    s1 = res.stage_trace("spectrogram")
    assert s1[-1] < 0.5 * s1[0]
    assert len(res.sc) == 5


def test_deterministic(weights, utts):
    kw = dict(stage1_iters=5, stage2_iters=3, griffin_lim_iters=3, seed=2)
    a = convert_voice(utts[0], [utts[1]], weights, **kw)
    b = convert_voice(utts[0], [utts[1]], weights, **kw)
    assert a.trace == b.trace and a.waveform.tobytes() == b.waveform.tobytes()
    c = convert_voice(utts[0], [utts[1]], weights, **{**kw, "seed": 3})
    assert a.trace != c.trace


def test_self_conversion_stays_close(weights, utts):
    """Style taken from the content itself: the content waveform is a global minimum."""
    res = convert_voice(utts[0], [utts[0]], weights, init="content-waveform", stage2_iters=10)
    assert sum(res.initial_terms.values()) == 0.0
    assert feature_relative_error(res.raw, utts[0], fe.TOY) < 0.05


def test_convert_frame_count(weights, utts):
    res = convert_voice(utts[0], [utts[1]], weights, stage1_iters=2, stage2_iters=1, griffin_lim_iters=2)
    assert fe.TOY.num_frames(len(res.waveform)) == fe.TOY.num_frames(len(utts[0]))
