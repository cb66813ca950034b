"""Audio spectrograms and face-crop geometry."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .config import CROP_SIZE, FACE_TEMPLATE_96, SpectrogramConfig


class DegenerateSignalWarning(RuntimeWarning):
    pass


def magnitude_frames(samples, cfg: SpectrogramConfig) -> np.ndarray:
    """|DFT| of Hann-windowed frames, shape (frames, window // 2 + 1)."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    n_frames = cfg.frame_count(x.size)
    if n_frames == 0:
        raise ValueError(f"signal of {x.size} samples is shorter than one window ({cfg.window_samples})")
    win = cfg.window_samples
    starts = np.arange(n_frames) * cfg.hop_samples
    frames = x[starts[:, None] + np.arange(win)[None, :]]
    return np.abs(np.fft.rfft(frames * np.hanning(win), axis=1))


def normalize_range(values: np.ndarray) -> np.ndarray:
    """Global min-max map onto [-1, 1]; a constant input maps to all -1."""
    lo, hi = values.min(), values.max()
    if hi - lo <= 0.0:
        warnings.warn("constant input: normalized to -1", DegenerateSignalWarning, stacklevel=2)
        return np.full(values.shape, -1.0)
    out = 2.0 * (values - lo) / (hi - lo) - 1.0
    return np.clip(out, -1.0, 1.0)


def spectrogram(samples, cfg: SpectrogramConfig | None = None) -> np.ndarray:
    """Time x frequency intensities normalized to [-1, 1]."""
    cfg = cfg or SpectrogramConfig()
    mag = magnitude_frames(samples, cfg)
    if cfg.log_magnitude:
        mag = np.log(mag + 1e-12)
    return normalize_range(mag)


def normalize_pixels(grid) -> np.ndarray:
    """8-bit intensities to [-1, 1] via v / 127.5 - 1."""
    return np.asarray(grid, dtype=np.float64) / 127.5 - 1.0


@dataclass(frozen=True)
class SimilarityTransform:
    """``p -> scale * rotation @ p + translation`` on 2-D points."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, np.eye(2), np.zeros(2))

    @classmethod
    def from_params(cls, scale: float, angle: float, translation) -> "SimilarityTransform":
        c, s = math.cos(angle), math.sin(angle)
        return cls(float(scale), np.array([[c, -s], [s, c]]), np.asarray(translation, dtype=np.float64))

    @property
    def angle(self) -> float:
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * pts @ self.rotation.T + self.translation

    def inverse(self) -> "SimilarityTransform":
        r_inv = self.rotation.T
        return SimilarityTransform(1.0 / self.scale, r_inv, -(r_inv @ self.translation) / self.scale)

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """``self`` after ``other``."""
        return SimilarityTransform(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            self.scale * self.rotation @ other.translation + self.translation,
        )

    def matrix(self) -> np.ndarray:
        """2 x 3 affine matrix."""
        return np.hstack([self.scale * self.rotation, self.translation[:, None]])


def fit_similarity(src, dst) -> SimilarityTransform:
    """Least-squares similarity transform taking ``src`` onto ``dst``.

    Closed form from the SVD of the cross-covariance, with the sign of the
    last singular direction flipped when needed to keep det(R) = +1.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ValueError(f"expected matching (n, 2) point sets, got {src.shape} and {dst.shape}")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    var_s = (xs * xs).sum() / len(src)
    if var_s < 1e-24:
        raise ValueError("source points have zero variance")
    cov = xd.T @ xs / len(src)
    u, d, vt = np.linalg.svd(cov)
    sign = np.ones(2)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[-1] = -1.0
    rot = u @ np.diag(sign) @ vt
    scale = float((d * sign).sum() / var_s)
    trans = mu_d - scale * rot @ mu_s
    return SimilarityTransform(scale, rot, trans)


def bilinear_sample(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``image`` (h, w, c) at float coordinates; outside -> 0."""
    h, w = image.shape[:2]
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    xc = np.clip(xs, 0, w - 1)
    yc = np.clip(ys, 0, h - 1)
    x0 = np.minimum(np.floor(xc).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xc - x0)[..., None]
    fy = (yc - y0)[..., None]
    top = image[y0, x0] * (1 - fx) + image[y0, x1] * fx
    bottom = image[y1, x0] * (1 - fx) + image[y1, x1] * fx
    out = top * (1 - fy) + bottom * fy
    return np.where(inside[..., None], out, 0.0)


def warp_crop(image, transform: SimilarityTransform, out_size=CROP_SIZE) -> np.ndarray:
    """Resample ``image`` onto an ``out_size`` grid.

    ``transform`` maps output pixel coordinates (x = column, y = row) into
    the source image plane.
    """
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    oh, ow = out_size
    yy, xx = np.mgrid[0:oh, 0:ow].astype(np.float64)
    src = transform.apply(np.stack([xx.ravel(), yy.ravel()], axis=1))
    out = bilinear_sample(img, src[:, 0].reshape(oh, ow), src[:, 1].reshape(oh, ow))
    return out[..., 0] if squeeze else out


def align_face(image, landmarks, template=None, out_size=CROP_SIZE) -> np.ndarray:
    """Crop a face given its five landmarks, (x, y) per row."""
    template = FACE_TEMPLATE_96 if template is None else np.asarray(template)
    return warp_crop(image, fit_similarity(template, landmarks), out_size)
