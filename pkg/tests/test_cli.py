import json
import wave

import numpy as np
import pytest

from affectkit import cli, container, dataset, numcore
from affectkit.dataset import LabeledFrame


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


SMALL = {"steps": 20, "synthetic_samples": 200, "batch_size": 32, "hidden": [8], "learning_rate": 1e-3}


def test_grad_check_passes(capsys):
    assert cli.main(["grad-check", "--points", "1"]) == 0
    assert "all 13 checks passed" in capsys.readouterr().out


def test_grad_check_catches_wrong_rule(monkeypatch, capsys):
    monkeypatch.setitem(numcore.BACKWARD, "tanh", lambda g, ins, out, aux: (g * (1.0 - out),))
    assert cli.main(["grad-check", "--points", "1"]) == 2
    captured = capsys.readouterr()
    assert "FAIL" in captured.out and "numerical failure" in captured.err


@pytest.mark.parametrize("model", ["multitask", "arcface"])
def test_train_is_byte_deterministic(tmp_path, model):
    doc = {**SMALL, "model": model, "seed": 3}
    if model == "arcface":
        doc.update(hidden=[32], input_dim=2)
    cfg = write_json(tmp_path / "cfg.json", doc)
    for run in ("a", "b"):
        assert cli.main(["train", "--config", cfg, "--output-dir", str(tmp_path / run)]) == 0
    for name in ("model.afen", "trace.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_flag_changes_run(tmp_path):
    cfg = write_json(tmp_path / "cfg.json", SMALL)
    cli.main(["train", "--config", cfg, "--output-dir", str(tmp_path / "a"), "--seed", "1"])
    cli.main(["train", "--config", cfg, "--output-dir", str(tmp_path / "b"), "--seed", "2"])
    assert (tmp_path / "a" / "model.afen").read_bytes() != (tmp_path / "b" / "model.afen").read_bytes()


def test_zero_learning_rate_keeps_initial_weights(tmp_path):
    cfg = write_json(tmp_path / "cfg.json", {**SMALL, "learning_rate": 0.0, "optimizer": "sgd_momentum"})
    assert cli.main(["train", "--config", cfg, "--output-dir", str(tmp_path)]) == 0
    run_cfg, model, _ = cli.load_model(tmp_path / "model.afen")
    fresh = cli.build_model(run_cfg, run_cfg.input_dim)
    for k, v in fresh.state_dict().items():
        assert np.array_equal(v, model.state_dict()[k])


@pytest.mark.parametrize(
    "doc, key",
    [({"bogus": 1}, "bogus"), ({"dropout": 1.5}, "dropout"), ({"model": "svm"}, "model"), ({"arcface": {"margin": -1}}, "margin")],
)
def test_invalid_config_exit_one(tmp_path, capsys, doc, key):
    cfg = write_json(tmp_path / "cfg.json", doc)
    assert cli.main(["train", "--config", cfg, "--output-dir", str(tmp_path)]) == 1
    assert key in capsys.readouterr().err


def test_missing_data_file(tmp_path):
    cfg = write_json(tmp_path / "cfg.json", {**SMALL, "data_path": str(tmp_path / "nope.npz")})
    assert cli.main(["train", "--config", cfg, "--output-dir", str(tmp_path)]) == 1


def test_eval_on_trained_model(tmp_path, capsys):
    cfg = write_json(tmp_path / "cfg.json", {**SMALL, "model": "arcface", "input_dim": 2, "hidden": [32]})
    cli.main(["train", "--config", cfg, "--output-dir", str(tmp_path)])
    rng = np.random.default_rng(0)
    np.savez(tmp_path / "d.npz", x=rng.normal(size=(30, 2)), y=rng.integers(0, 7, 30))
    out = tmp_path / "m.csv"
    assert cli.main(["eval", "--model", str(tmp_path / "model.afen"), "--data", str(tmp_path / "d.npz"), "--out", str(out)]) == 0
    assert out.read_text().splitlines()[1].startswith("EXPR_F1,")


def _label_frames(rng, n=40):
    return [
        LabeledFrame("v", i, "s", valence=float(rng.uniform(-1, 1)), arousal=float(rng.uniform(-1, 1)),
                     au=tuple(int(a) for a in rng.integers(0, 2, 8)), expr=i % 7)
        for i in range(n)
    ]


def test_eval_perfect_predictions(tmp_path):
    frames = _label_frames(np.random.default_rng(1))
    dataset.write_frames(tmp_path / "l.jsonl", frames)
    out = tmp_path / "m.csv"
    args = ["eval", "--predictions", str(tmp_path / "l.jsonl"), "--labels", str(tmp_path / "l.jsonl"), "--out", str(out)]
    assert cli.main(args) == 0
    rows = dict(line.split(",") for line in out.read_text().splitlines()[1:])
    assert set(rows) == {"CCC_V", "CCC_A", "AU_F1", "EXPR_F1", "ACCURACY", "MEAN_DIAGONAL"}
    assert all(float(v) == 1.0 for v in rows.values())


def test_eval_constant_predictions_zero_ccc(tmp_path):
    labels = _label_frames(np.random.default_rng(2))
    preds = [LabeledFrame("v", f.frame, "s", valence=0.3, arousal=0.3) for f in labels]
    dataset.write_frames(tmp_path / "l.jsonl", [LabeledFrame("v", f.frame, "s", valence=f.valence, arousal=f.arousal) for f in labels])
    dataset.write_frames(tmp_path / "p.jsonl", preds)
    out = tmp_path / "m.csv"
    cli.main(["eval", "--predictions", str(tmp_path / "p.jsonl"), "--labels", str(tmp_path / "l.jsonl"), "--out", str(out)])
    rows = dict(line.split(",") for line in out.read_text().splitlines()[1:])
    assert float(rows["CCC_V"]) == 0.0 and float(rows["CCC_A"]) == 0.0


def test_eval_missing_prediction(tmp_path, capsys):
    labels = _label_frames(np.random.default_rng(3), 5)
    dataset.write_frames(tmp_path / "l.jsonl", labels)
    dataset.write_frames(tmp_path / "p.jsonl", labels[:4])
    assert cli.main(["eval", "--predictions", str(tmp_path / "p.jsonl"), "--labels", str(tmp_path / "l.jsonl")]) == 1
    assert "frame 4" in capsys.readouterr().err


def test_split_command(tmp_path):
    rng = np.random.default_rng(5)
    frames = [LabeledFrame(f"v{i}", j, f"s{i % 13}", expr=0) for i in range(30) for j in range(int(rng.integers(5, 40)))]
    dataset.write_frames(tmp_path / "f.jsonl", frames)
    assert cli.main(["split", "--frames", str(tmp_path / "f.jsonl"), "--task", "expr", "--out", str(tmp_path / "s.json")]) == 0
    doc = json.loads((tmp_path / "s.json").read_text())
    owner = {}
    for f in frames:
        assert owner.setdefault(f.subject_id, doc["videos"][f.video_id]) == doc["videos"][f.video_id]


def test_aggregate_va_command(tmp_path):
    frames = [LabeledFrame("v", i, "s", valence=v, arousal=-v, annotator_id=a)
              for a, v in (("x", 0.2), ("y", 0.4), ("z", 0.6), ("w", 0.8)) for i in range(3)]
    dataset.write_frames(tmp_path / "f.jsonl", frames)
    args = ["aggregate", "--frames", str(tmp_path / "f.jsonl"), "--task", "va", "--out", str(tmp_path / "o.jsonl"),
            "--report", str(tmp_path / "r.json")]
    assert cli.main(args) == 0
    out = dataset.read_frames(tmp_path / "o.jsonl")
    assert [f.frame for f in out] == [0, 1, 2]
    assert all(abs(f.valence - 0.5) < 1e-15 and abs(f.arousal + 0.5) < 1e-15 for f in out)
    assert json.loads((tmp_path / "r.json").read_text())["v"]["annotators"] == 4


def test_aggregate_expr_command(tmp_path):
    frames = [LabeledFrame("v", i, "s", expr=e, annotator_id=a)
              for a, labels in (("x", [0, 1, 2]), ("y", [0, 5, 2])) for i, e in enumerate(labels)]
    dataset.write_frames(tmp_path / "f.jsonl", frames)
    args = ["aggregate", "--frames", str(tmp_path / "f.jsonl"), "--task", "expr", "--out", str(tmp_path / "o.jsonl")]
    assert cli.main(args) == 0
    assert [(f.frame, f.expr) for f in dataset.read_frames(tmp_path / "o.jsonl")] == [(0, 0), (2, 2)]


def test_stats_command_matches_library(tmp_path):
    frames = _label_frames(np.random.default_rng(6), 25)
    dataset.write_frames(tmp_path / "f.jsonl", frames)
    assert cli.main(["stats", "--frames", str(tmp_path / "f.jsonl"), "--out-dir", str(tmp_path / "st"), "--bins", "5"]) == 0
    golden = dataset.stats_csv(dataset.dataset_stats(frames, bins=5))
    for name, text in golden.items():
        assert (tmp_path / "st" / name).read_text() == text


def _write_wav(path, samples, rate=44100):
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(np.asarray(samples, dtype="<i2").tobytes())


def test_spectrogram_of_silence(tmp_path):
    _write_wav(tmp_path / "s.wav", np.zeros(44100))
    assert cli.main(["spectrogram", "--wav", str(tmp_path / "s.wav"), "--out", str(tmp_path / "s.npy")]) == 0
    grid = np.load(tmp_path / "s.npy")
    assert grid.shape == (44, 728) and np.all(grid == -1.0)


def test_spectrogram_of_tone(tmp_path):
    t = np.arange(44100) / 44100
    _write_wav(tmp_path / "t.wav", np.round(16000 * np.sin(2 * np.pi * 440 * t)))
    cli.main(["spectrogram", "--wav", str(tmp_path / "t.wav"), "--out", str(tmp_path / "t.npy")])
    assert np.all(np.load(tmp_path / "t.npy").argmax(axis=1) == 15)


def test_spectrogram_rate_mismatch(tmp_path, capsys):
    _write_wav(tmp_path / "s.wav", np.zeros(1600), rate=16000)
    assert cli.main(["spectrogram", "--wav", str(tmp_path / "s.wav"), "--out", str(tmp_path / "s.npy")]) == 1
    assert "sample_rate" in capsys.readouterr().err


def test_model_container_layout(tmp_path):
    cfg = write_json(tmp_path / "cfg.json", {**SMALL, "steps": 1})
    cli.main(["train", "--config", cfg, "--output-dir", str(tmp_path)])
    meta, arrays = container.load(tmp_path / "model.afen")
    assert meta["format"] == cli.MODEL_FORMAT and meta["in_dim"] == 16
    assert all(a.dtype == np.float64 for a in arrays.values())
