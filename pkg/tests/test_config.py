import json

import pytest

from affectkit.config import (
    ARCFACE_BEST_MARGINS,
    ARCFACE_DIMS,
    ARCFACE_MARGINS,
    ARCFACE_SCALES,
    AU_IDS,
    AU_SET_COUNTS,
    AU_SET_FRAMES,
    SPLIT_VIDEOS,
    TABLE2,
    RunConfig,
    default_ratios,
)


def test_published_hyperparameters():
    assert (TABLE2["mt_cnn"].learning_rate, TABLE2["mt_cnn"].batch_size) == (1e-4, 256)
    assert (TABLE2["mt_cnn_rnn"].learning_rate, TABLE2["mt_cnn_rnn"].batch_size, TABLE2["mt_cnn_rnn"].seq_len) == (1e-5, 10, 90)
    assert (TABLE2["av_mt_cnn_rnn"].learning_rate, TABLE2["av_mt_cnn_rnn"].batch_size) == (1e-5, 5)
    assert TABLE2["arcface"].optimizer == "sgd_momentum" and TABLE2["arcface"].batch_size == 300
    assert all(c.dropout == 0.4 for c in TABLE2.values())
    assert ARCFACE_MARGINS == (0.1, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
    assert ARCFACE_SCALES == (32.0, 64.0) and ARCFACE_DIMS == (32, 512) and ARCFACE_BEST_MARGINS == (0.1, 1.0)


def test_published_dataset_facts():
    assert AU_IDS == (1, 2, 4, 6, 12, 15, 20, 25)
    assert AU_SET_COUNTS[1] == 86677 and AU_SET_FRAMES == 397800
    assert SPLIT_VIDEOS["va"] == (350, 70, 138)
    assert sum(default_ratios("va")) == pytest.approx(1.0)


def test_run_config_defaults_follow_table():
    cfg = RunConfig()
    assert (cfg.learning_rate, cfg.batch_size, cfg.seq_len, cfg.dropout) == (1e-4, 256, 90, 0.4)


def test_unknown_keys_named(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"lerning_rate": 0.1}))
    with pytest.raises(ValueError, match="lerning_rate: unknown key"):
        RunConfig.load(path)
    with pytest.raises(ValueError, match=r"arcface\.scal: unknown key"):
        RunConfig.from_dict({"arcface": {"scal": 3}})


@pytest.mark.parametrize("doc", [{"model": "cnn"}, {"tasks": ["pose"]}, {"va_loss": "l1"}, {"dropout": 1.5}])
def test_invalid_values(doc):
    with pytest.raises(ValueError):
        RunConfig.from_dict(doc)
