import numpy as np
import pytest
from hypothesis import given, strategies as st

from speechgram import autodiff as ad
from speechgram import frontend as fe

CFG = fe.DEFAULT


def _frames(w, cfg=CFG):
    g = ad.Graph()
    return fe.frame_and_window(g.constant(w), cfg).value


def test_frame_counts():
    assert _frames(np.zeros(16000)).shape == (98, 400)
    assert _frames(np.zeros(400)).shape == (1, 400)


def test_too_short_waveform():
    with pytest.raises(fe.WaveformTooShort):
        _frames(np.zeros(399))


def test_constant_frame_is_window():
    np.testing.assert_array_equal(_frames(np.ones(400))[0], fe.hamming(400))
    n = np.arange(400)
    np.testing.assert_allclose(fe.hamming(400), 0.54 - 0.46 * np.cos(2 * np.pi * n / 399), atol=1e-15)


def _mag_of_frame(frame):
    g = ad.Graph()
    return fe.dft_magnitude(g.constant(frame[None, :]), CFG).value[0]


def test_zero_frame_magnitude():
    np.testing.assert_allclose(_mag_of_frame(np.zeros(400)), np.sqrt(1e-3), rtol=1e-15)
    assert abs(np.sqrt(1e-3) - 0.0316228) < 1e-7


def test_smooth_modulus_value():
    # frame whose DFT has re=3, im=4 at bin 0 is impossible for real input, so check the formula
    # through a frame with a known bin-0 value: the sum of samples
    frame = np.zeros(400)
    frame[0] = 5.0
    assert _mag_of_frame(frame)[0] == pytest.approx(np.sqrt(25.001), abs=1e-12)
    assert np.sqrt(25.001) == pytest.approx(5.00010, abs=1e-5)


def test_magnitude_matches_rfft(rng):
    w = rng.normal(size=1200)
    frames = _frames(w)
    oracle = np.sqrt(np.abs(np.fft.rfft(frames, n=512, axis=1)) ** 2 + 1e-3)
    np.testing.assert_allclose(fe.magnitude(w, CFG), oracle, rtol=1e-10, atol=1e-10)


def test_sine_peak_bin():
    t = np.arange(16000) / 16000
    mag = fe.magnitude(np.sin(2 * np.pi * 1000 * t), CFG)
    assert np.all(np.argmax(mag, axis=1) == 32)


def test_filterbank_layout():
    fb = fe.build_filterbank(CFG)
    assert fb.shape == (257, 80)
    assert CFG.num_linear_channels == 32
    np.testing.assert_array_equal(fb[:, 0], np.eye(257)[0])
    np.testing.assert_array_equal(fb[:32, :32], np.eye(32))
    assert np.all(fb[32:, :32] == 0)
    assert np.all(fb.sum(axis=0) > 0)
    for c in range(32, 80):
        col = fb[:, c]
        assert np.all(col >= 0)
        nz = np.flatnonzero(col)
        peak = np.argmax(col)
        # unimodal: non-decreasing up to the peak, non-increasing after it
        assert np.all(np.diff(col[nz[0]:peak + 1]) >= 0)
        assert np.all(np.diff(col[peak:nz[-1] + 1]) <= 0)
        assert col.max() <= 1.0


def test_mel_band_edges():
    edges = fe.mel_to_hz(np.linspace(fe.mel(1000.0), fe.mel(8000.0), 50))
    assert edges[0] == pytest.approx(1000.0)
    assert edges[-1] == pytest.approx(8000.0)
    assert fe.mel(1000.0) == pytest.approx(2595 * np.log10(1 + 1000 / 700))


def test_insufficient_channels():
    bad = fe.FrontendConfig(num_channels=32)
    with pytest.raises(ValueError, match="cannot cover"):
        fe.build_filterbank(bad)


def test_config_validation():
    with pytest.raises(ValueError):
        fe.FrontendConfig(window_len_samples=600)
    with pytest.raises(ValueError):
        fe.FrontendConfig(hop_samples=500)
    with pytest.raises(ValueError):
        fe.FrontendConfig(fmax_hz=9000.0)
    assert fe.FrontendConfig.from_dict(CFG.to_dict()) == CFG


def test_toy_frontend():
    assert fe.TOY.num_linear_channels == 8
    assert fe.build_filterbank(fe.TOY).shape == (257, 20)


def test_constant_input_has_zero_deltas():
    g = ad.Graph()
    x = g.constant(np.tile(np.arange(4.0), (9, 1)))
    np.testing.assert_array_equal(fe.deltas(x).value, 0.0)


def test_delta_of_ramp_interior():
    g = ad.Graph()
    x = g.constant(np.arange(10.0)[:, None] * np.ones((1, 2)))
    d = fe.deltas(x).value
    np.testing.assert_allclose(d[2:-2], 1.0, atol=1e-15)
    # replicated edges: frame 0 sees [0,0,0,1,2]
    np.testing.assert_allclose(d[0], (0 * -2 + 0 * -1 + 0 + 1 + 2 * 2) / 10, atol=1e-15)


def test_silence_features():
    feats = fe.features(np.zeros(4000), CFG)
    colsum = fe.build_filterbank(CFG).sum(axis=0)
    expect = np.log(np.sqrt(1e-3) * colsum + 1e-6)
    np.testing.assert_allclose(feats[:, :, 0], np.broadcast_to(expect, feats[:, :, 0].shape), rtol=1e-12)
    np.testing.assert_array_equal(feats[:, :, 1:], 0.0)


def test_pipeline_factorization(rng):
    w = rng.normal(size=3000)
    a = fe.features(w, CFG)
    b = fe.features(fe.magnitude(w, CFG), CFG, spectrogram=True)
    assert a.tobytes() == b.tobytes()


def test_log_magnitude_path_matches_waveform(rng):
    w = rng.normal(size=3000)
    w[:800] = 0.0  # exact zeros: log|X| = -inf must still give the silence features
    frames = w[fe.frame_indices(len(w), CFG)] * fe.hamming(CFG.window_len_samples)
    with np.errstate(divide="ignore"):
        log_mag = np.log(np.abs(np.fft.rfft(frames, n=CFG.dft_size, axis=1)))
    b = fe.features_from_log_magnitude(ad.Graph().constant(log_mag), CFG).value
    np.testing.assert_allclose(b, fe.features(w, CFG), rtol=0, atol=1e-10)


def test_feature_shape_and_floor(rng):
    feats = fe.features(rng.normal(size=2000), CFG)
    assert feats.shape == (11, 80, 3)
    assert np.all(feats[:, :, 0] >= np.log(1e-6))


def test_shift_covariance(rng):
    w = rng.normal(size=4000)
    delayed = np.concatenate([np.zeros(160), w])[:4000]
    a = fe.features(w, CFG)
    b = fe.features(delayed, CFG)
    # rows away from both edges (delta windows reach 4 frames)
    np.testing.assert_allclose(b[6:-6], a[5:-7], atol=1e-6)


def test_waveform_gradient_end_to_end(rng):
    w = 0.3 * rng.normal(size=1600)
    err = ad.gradcheck(lambda x: ad.sum(fe.features_from_waveform(x, CFG)), [w], max_coords=200)
    assert err < 1e-4


@given(st.integers(400, 3000), st.floats(0.0, 2.0), st.integers(0, 2 ** 31 - 1))
def test_features_finite_and_sized(n, scale, seed):
    w = scale * np.random.default_rng(seed).normal(size=n)
    feats = fe.features(w, fe.TOY)
    assert feats.shape == (fe.TOY.num_frames(n), 20, 3)
    assert np.all(np.isfinite(feats))
    assert np.all(feats[:, :, 0] >= np.log(fe.TOY.log_floor))
