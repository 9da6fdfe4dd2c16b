import csv

import numpy as np
import pytest

from speechgram.cli import main
from speechgram.network import init_random, load_weights, save_weights, toy_spec
from speechgram.speaker import toy_corpus
from speechgram.wavio import read_wav, write_wav


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    save_weights(d / "toy.mgw", init_random(toy_spec(5), 0))
    for u in toy_corpus(2, 2, seed=5):
        write_wav(d / f"{u.uid}.wav", u.waveform[:8000])
    return d


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_gradcheck_passes(tmp_path, capsys):
    assert main(["gradcheck", "--trace", str(tmp_path / "g.csv")]) == 0
    rows = _rows(tmp_path / "g.csv")
    assert rows[0] == ["check", "max_relative_error", "status"]
    assert all(r[2] == "pass" for r in rows[1:])
    assert "checks below" in capsys.readouterr().out


def test_missing_subcommand_exits_2():
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 2


@pytest.mark.parametrize("argv", [
    ["invert", "nope.wav", "--layer", "C0", "--weights", "nope.mgw"],
    ["texture", "--style", "x.wav"],  # no weights
    ["features"],
    ["speaker-id", "--train-dir", "/nonexistent", "--layers", "features"],
])
def test_invalid_inputs_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "error:" in capsys.readouterr().err


def test_unknown_layer_exit_2(workdir, capsys):
    code = main(["invert", str(workdir / "spk0_000.wav"), "--layer", "C42", "--weights", str(workdir / "toy.mgw")])
    assert code == 2
    assert "C42" in capsys.readouterr().err


def test_features_and_filterbank(workdir, tmp_path):
    wav = str(workdir / "spk0_000.wav")
    assert main(["features", wav, "--weights", str(workdir / "toy.mgw"), "--out", str(tmp_path / "f.csv"),
                 "--dump-filterbank", str(tmp_path / "fb.csv")]) == 0
    rows = _rows(tmp_path / "f.csv")
    assert rows[0] == ["frame", "channel", "static", "delta", "delta_delta"]
    assert len(rows) - 1 == 48 * 20  # 8000 samples -> 48 frames
    fb = _rows(tmp_path / "fb.csv")
    assert len(fb) == 1 + 257 and len(fb[0]) == 20
    assert open(tmp_path / "f.csv", "rb").read().count(b"\r") == 0


def test_invert_writes_outputs(workdir, tmp_path):
    out = tmp_path / "inv.wav"
    argv = ["invert", str(workdir / "spk0_000.wav"), "--layer", "C0", "--weights", str(workdir / "toy.mgw"),
            "--out", str(out), "--stage1-iters", "3", "--stage2-iters", "2", "--gl-iters", "2",
            "--trace", str(tmp_path / "t.csv"), "--sc-out", str(tmp_path / "sc.csv"),
            "--dump-spectrogram", str(tmp_path / "s.npy")]
    assert main(argv) == 0
    w = read_wav(out)
    assert abs(len(w) - 8000) <= 160
    assert np.max(np.abs(w)) == pytest.approx(0.95, abs=1e-4)
    trace = _rows(tmp_path / "t.csv")
    assert trace[0] == ["stage", "iteration", "loss", "grad_norm"]
    assert {r[0] for r in trace[1:]} == {"spectrogram", "waveform"}
    assert len(_rows(tmp_path / "sc.csv")) == 3
    assert np.load(tmp_path / "s.npy").shape[1] == 257
    # rerun: identical trace bytes
    first = (tmp_path / "t.csv").read_bytes()
    assert main(argv) == 0
    assert (tmp_path / "t.csv").read_bytes() == first


def test_texture_and_convert(workdir, tmp_path):
    common = ["--weights", str(workdir / "toy.mgw"), "--stage1-iters", "2", "--stage2-iters", "1", "--gl-iters", "2"]
    assert main(["texture", "--style", str(workdir / "spk1_000.wav"), "--layers", "C0,C1", "--duration", "0.5",
                 "--out", str(tmp_path / "tex.wav")] + common) == 0
    assert abs(len(read_wav(tmp_path / "tex.wav")) - 8000) <= 160
    assert main(["convert", "--content", str(workdir / "spk0_000.wav"), "--style", str(workdir / "spk1_000.wav"),
                 "--out", str(tmp_path / "conv.wav")] + common) == 0


def test_convert_with_config(workdir, tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"[network]\nweights = {workdir / 'toy.mgw'}\n\n[loss]\nC0 = style 1e5\nC4 = content 1\n\n"
                   "[synthesis]\nstage1_iters = 1\nstage2_iters = 1\ngriffin_lim_iters = 1\n", encoding="utf-8")
    assert main(["convert", "--config", str(cfg), "--content", str(workdir / "spk0_000.wav"),
                 "--style", str(workdir / "spk1_000.wav"), "--out", str(tmp_path / "c.wav")]) == 0
    cfg.write_text("[loss]\nC0 = sparkle 1\n", encoding="utf-8")
    assert main(["convert", "--config", str(cfg), "--content", "a.wav", "--style", "b.wav"]) == 2


def test_speaker_id_loo_and_mds(workdir, tmp_path, capsys):
    assert main(["speaker-id", "--train-dir", str(workdir), "--layers", "features",
                 "--report", str(tmp_path / "r.csv"), "--mds-out", str(tmp_path / "m.csv")]) == 0
    rep = _rows(tmp_path / "r.csv")
    assert rep[0] == ["utterance", "true", "predicted"] and len(rep) == 5
    assert {r[1] for r in rep[1:]} == {"spk0", "spk1"}
    assert len(_rows(tmp_path / "m.csv")) == 5
    assert main(["speaker-id", "--train-dir", str(workdir), "--test-dir", str(workdir), "--layers", "C0-C1",
                 "--weights", str(workdir / "toy.mgw")]) == 0
    assert "accuracy 1.0000" in capsys.readouterr().out  # test set equals training set


def test_toy_corpus_command(tmp_path):
    assert main(["toy-corpus", "--out-dir", str(tmp_path), "--speakers", "2", "--utts", "1", "--seed", "4"]) == 0
    rows = _rows(tmp_path / "transcripts.csv")
    assert [r[0] for r in rows[1:]] == ["spk0_000", "spk1_000"]
    assert np.array_equal(read_wav(tmp_path / "spk0_000.wav"),
                          np.round(toy_corpus(2, 1, 4)[0].waveform * 32768) / 32768)


@pytest.mark.slow
def test_train_toy_short(tmp_path):
    out = tmp_path / "t.mgw"
    assert main(["train-toy", "--steps", "4", "--speakers", "2", "--utts", "2", "--out", str(out),
                 "--trace", str(tmp_path / "tr.csv")]) == 0
    assert load_weights(out).spec.names[-1] == "CTC"
    assert (tmp_path / "t.chars").exists()
    assert len(_rows(tmp_path / "tr.csv")) == 5
