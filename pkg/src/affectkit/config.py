"""Configuration dataclasses and published constants."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_EXPRESSIONS = 7
EXPRESSIONS = ("neutral", "anger", "disgust", "fear", "happiness", "sadness", "surprise")
AU_IDS = (1, 2, 4, 6, 12, 15, 20, 25)
N_AUS = len(AU_IDS)

# Activated-AU counts of the annotated AU set, and its frame total.
AU_SET_COUNTS = {1: 86677, 2: 4166, 4: 56327, 6: 25226, 12: 35675, 15: 3340, 20: 5695, 25: 9048}
AU_SET_PERCENT = {1: 43.9, 2: 2.1, 4: 28.5, 6: 12.8, 12: 18.1, 15: 1.7, 20: 2.9, 25: 4.6}
AU_SET_FRAMES = 397800

# Published video counts per partition (train, validation, test).
SPLIT_VIDEOS = {"va": (350, 70, 138), "au": (42, 7, 14), "expr": (51, 11, 22)}
PARTITIONS = ("train", "validation", "test")


def default_ratios(task: str = "va") -> tuple[float, float, float]:
    counts = SPLIT_VIDEOS[task]
    total = sum(counts)
    return tuple(c / total for c in counts)


# Five-point alignment template (left eye, right eye, nose, left and right
# mouth corner) in (x, y) pixel coordinates of a 96x96 crop.  This is the
# common 96x112 face-recognition template shifted up by 8 px.
FACE_TEMPLATE_96 = np.array(
    [
        [38.2946, 43.6963],
        [73.5318, 43.5014],
        [56.0252, 63.7366],
        [41.5493, 84.3655],
        [70.7299, 84.2041],
    ]
)
CROP_SIZE = (96, 96)

ARCFACE_MARGINS = (0.1, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
ARCFACE_SCALES = (32.0, 64.0)
ARCFACE_DIMS = (32, 512)
# Two reported best margins; which network each belongs to is not stated.
ARCFACE_BEST_MARGINS = (0.1, 1.0)


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-4
    batch_size: int = 256
    seq_len: int = 90
    dropout: float = 0.4
    seed: int = 0
    steps: int = 1000
    momentum: float = 0.9

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd_momentum', got {self.optimizer!r}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.batch_size < 1 or self.steps < 0 or self.seq_len < 1:
            raise ValueError("batch_size and seq_len must be positive, steps non-negative")


# Per-architecture defaults: best learning rate and batch size / sequence length.
TABLE2 = {
    "mt_cnn": TrainConfig(optimizer="adam", learning_rate=1e-4, batch_size=256, seq_len=1),
    "mt_cnn_rnn": TrainConfig(optimizer="adam", learning_rate=1e-5, batch_size=10, seq_len=90),
    "av_mt_cnn_rnn": TrainConfig(optimizer="adam", learning_rate=1e-5, batch_size=5, seq_len=90),
    "arcface": TrainConfig(optimizer="sgd_momentum", learning_rate=1e-4, batch_size=300, seq_len=1),
}


@dataclass
class ArcFaceConfig:
    dim: int = 32
    scale: float = 64.0
    margin: float = ARCFACE_BEST_MARGINS[0]

    def __post_init__(self):
        if self.dim < 2 or self.scale <= 0 or self.margin < 0:
            raise ValueError("ArcFace needs dim >= 2, scale > 0, margin >= 0")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class SpectrogramConfig:
    """Frame geometry.  The overlap is read literally: hop = window - overlap."""

    sample_rate: int = 44100
    window_ms: float = 33.0
    overlap_ms: float = 11.0
    log_magnitude: bool = False

    def __post_init__(self):
        if self.window_samples < 2:
            raise ValueError(f"window of {self.window_samples} samples is too short")
        if self.hop_samples < 1:
            raise ValueError("overlap must be shorter than the window")

    @property
    def window_samples(self) -> int:
        return _round_half_up(self.window_ms * self.sample_rate / 1000.0)

    @property
    def hop_samples(self) -> int:
        return self.window_samples - _round_half_up(self.overlap_ms * self.sample_rate / 1000.0)

    @property
    def n_bins(self) -> int:
        return self.window_samples // 2 + 1

    def frame_count(self, n_samples: int) -> int:
        if n_samples < self.window_samples:
            return 0
        return (n_samples - self.window_samples) // self.hop_samples + 1


@dataclass
class RunConfig:
    """Document read by ``affectkit train --config``.

    ``model`` is one of ``multitask``, ``multitask_gru`` or ``arcface``.
    ``data_path`` names an ``.npz`` file; when absent a synthetic set is
    generated from ``seed``.
    """

    model: str = "multitask"
    optimizer: str = "adam"
    learning_rate: float = 1e-4
    batch_size: int = 256
    seq_len: int = 90
    dropout: float = 0.4
    seed: int = 0
    steps: int = 1000
    momentum: float = 0.9
    data_path: str | None = None
    synthetic_samples: int = 2000
    input_dim: int = 16
    hidden: list[int] = field(default_factory=lambda: [64])
    gru_hidden: int = 128
    gru_layers: int = 2
    n_aus: int = N_AUS
    tasks: list[str] = field(default_factory=lambda: ["va", "au", "expr"])
    va_loss: str = "ccc"
    arcface: dict = field(default_factory=lambda: dataclasses.asdict(ArcFaceConfig()))
    spectrogram: dict = field(default_factory=lambda: dataclasses.asdict(SpectrogramConfig()))
    output_dir: str = "run"

    def __post_init__(self):
        if self.model not in ("multitask", "multitask_gru", "arcface"):
            raise ValueError(f"model: unknown model kind {self.model!r}")
        unknown = set(self.tasks) - {"va", "au", "expr"}
        if unknown or not self.tasks:
            raise ValueError(f"tasks: expected a non-empty subset of va/au/expr, got {self.tasks}")
        if self.va_loss not in ("ccc", "mse"):
            raise ValueError(f"va_loss: expected 'ccc' or 'mse', got {self.va_loss!r}")
        self._check_nested("arcface", ArcFaceConfig)
        self._check_nested("spectrogram", SpectrogramConfig)
        self.train_config()

    def _check_nested(self, key, cls):
        names = {f.name for f in dataclasses.fields(cls)}
        extra = set(getattr(self, key)) - names
        if extra:
            raise ValueError(f"{key}.{sorted(extra)[0]}: unknown key")
        setattr(self, key, dataclasses.asdict(cls(**getattr(self, key))))

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            optimizer=self.optimizer,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            seq_len=self.seq_len,
            dropout=self.dropout,
            seed=self.seed,
            steps=self.steps,
            momentum=self.momentum,
        )

    def arcface_config(self) -> ArcFaceConfig:
        return ArcFaceConfig(**self.arcface)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        for key in doc:
            if key not in names:
                raise ValueError(f"{key}: unknown key")
        return cls(**doc)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        with open(path) as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ValueError("config must be a JSON object")
        return cls.from_dict(doc)
