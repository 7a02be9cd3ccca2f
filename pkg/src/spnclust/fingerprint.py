"""SPN fingerprint extraction, normalization, synthesis and comparison.

A fingerprint is the noise residual of an image (image minus a denoised
copy), with row/column means removed, flattened row-major, centered and
scaled to unit l2 norm.  Columns of a :class:`FingerprintMatrix` are such
vectors, so the normalized correlation of two columns reduces to a dot
product.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.ndimage import convolve1d

from .errors import DegenerateResidual, DimensionMismatch

# ITU-R BT.601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

DARK_LEVEL = 80
DARK_FRACTION = 0.75

DenoiserHook = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class RawImage:
    """Pixel intensities in [0, 1], shape (H, W) or (H, W, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim not in (2, 3) or (px.ndim == 3 and px.shape[2] not in (1, 3)):
            raise ValueError(f"expected (H, W) or (H, W, 3) pixels, got {px.shape}")
        if px.ndim == 3 and px.shape[2] == 1:
            px = px[:, :, 0]
        if px.size == 0:
            raise ValueError("empty image")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_uint8(cls, arr: np.ndarray) -> "RawImage":
        return cls(np.asarray(arr, dtype=np.float64) / 255.0)

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else self.pixels.shape[2]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def crop(self, size: int) -> "RawImage":
        """Top-left ``size`` x ``size`` crop."""
        if size > self.height or size > self.width:
            raise ValueError(
                f"cannot crop {size}x{size} from a {self.height}x{self.width} image"
            )
        return RawImage(self.pixels[:size, :size])

    def grayscale(self) -> np.ndarray:
        if self.channels == 1:
            return self.pixels
        return self.pixels @ LUMA_WEIGHTS


def is_dark(img: RawImage) -> bool:
    """True iff strictly more than 75% of gray levels (0-255 scale) are <= 80."""
    gray = img.grayscale() * 255.0
    frac = np.count_nonzero(gray <= DARK_LEVEL) / gray.size
    return frac > DARK_FRACTION


class GaussianDenoiser:
    """Separable Gaussian blur used as the default smoothing filter.

    A stand-in for a wavelet Wiener filter: any callable mapping a 2-D
    array to a same-shape array can be used instead.
    """

    def __init__(self, sigma: float = 1.0, size: int = 5):
        if size < 1 or size % 2 == 0:
            raise ValueError("kernel size must be a positive odd integer")
        half = size // 2
        taps = np.exp(-0.5 * (np.arange(-half, half + 1) / sigma) ** 2)
        self.kernel = taps / taps.sum()
        self.sigma = sigma
        self.size = size

    def __call__(self, channel: np.ndarray) -> np.ndarray:
        out = convolve1d(channel, self.kernel, axis=0, mode="reflect")
        return convolve1d(out, self.kernel, axis=1, mode="reflect")

    def __repr__(self):
        return f"GaussianDenoiser(sigma={self.sigma}, size={self.size})"


def extract_residual(img: RawImage, denoiser: Optional[DenoiserHook] = None) -> np.ndarray:
    """Noise residual ``img - denoiser(img)`` collapsed to one channel.

    Colour residuals are computed per channel and combined with luma weights.
    """
    denoiser = denoiser or GaussianDenoiser()
    px = img.pixels
    if px.ndim == 2:
        return px - np.asarray(denoiser(px), dtype=np.float64)
    res = np.empty_like(px)
    for c in range(px.shape[2]):
        smooth = np.asarray(denoiser(px[:, :, c]), dtype=np.float64)
        if smooth.shape != px.shape[:2]:
            raise ValueError("denoiser changed the channel shape")
        res[:, :, c] = px[:, :, c] - smooth
    return res @ LUMA_WEIGHTS


def normalize(residual: np.ndarray, *, tol: float = 1e-12) -> np.ndarray:
    """Turn a 2-D residual into a zero-mean, unit-norm 1-D fingerprint.

    Row means are subtracted first, then column means; the result is
    flattened row-major, re-centered and divided by its l2 norm.
    """
    w = np.array(residual, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError("residual must be 2-D")
    if not np.all(np.isfinite(w)):
        raise ValueError("residual contains non-finite values")
    w -= w.mean(axis=1, keepdims=True)
    w -= w.mean(axis=0, keepdims=True)
    v = w.ravel()
    v -= v.mean()
    norm = np.linalg.norm(v)
    scale = max(1.0, float(np.abs(residual).max()))
    if norm <= tol * scale * math.sqrt(v.size):
        raise DegenerateResidual("residual vanishes after row/column centering")
    return v / norm


def correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two normalized fingerprints."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"fingerprint shapes differ: {a.shape} vs {b.shape}")
    return float(a @ b)


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Normalized (Pearson) correlation for arbitrary, un-normalized vectors.

    Returns 0 when either vector is constant.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionMismatch(f"vector shapes differ: {a.shape} vs {b.shape}")
    a = a - a.mean()
    b = b - b.mean()
    den = np.linalg.norm(a) * np.linalg.norm(b)
    if den == 0.0:
        return 0.0
    return float(np.clip(a @ b / den, -1.0, 1.0))


def ncc_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise :func:`ncc` between the columns of ``A`` (d x m) and ``B`` (d x k)."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[0] != B.shape[0]:
        raise DimensionMismatch("row counts differ")
    A = A - A.mean(axis=0)
    B = B - B.mean(axis=0)
    na = np.linalg.norm(A, axis=0)
    nb = np.linalg.norm(B, axis=0)
    na[na == 0] = np.inf
    nb[nb == 0] = np.inf
    return np.clip((A.T @ B) / na[:, None] / nb[None, :], -1.0, 1.0)


def centroid(members: Sequence[np.ndarray]) -> np.ndarray:
    """Element-wise mean of member fingerprints (not re-normalized)."""
    if len(members) == 0:
        raise ValueError("centroid of an empty member list")
    stacked = np.asarray([np.asarray(m, dtype=np.float64) for m in members])
    if stacked.ndim != 2:
        raise DimensionMismatch("members must share a common dimension")
    return stacked.mean(axis=0)


@dataclass
class FingerprintMatrix:
    """Column-stacked fingerprints ``X`` (d x n) with one id per column."""

    X: np.ndarray
    ids: tuple = field(default=())

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise ValueError("X must be 2-D (d x n)")
        if not self.ids:
            self.ids = tuple(str(i) for i in range(self.X.shape[1]))
        self.ids = tuple(str(i) for i in self.ids)
        if len(self.ids) != self.X.shape[1]:
            raise ValueError("one id per column required")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("ids must be distinct")

    @property
    def d(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.n

    def subset(self, cols) -> "FingerprintMatrix":
        cols = list(cols)
        return FingerprintMatrix(self.X[:, cols], tuple(self.ids[c] for c in cols))

    def check_normalized(self, tol: float = 1e-6) -> None:
        sums = np.abs(self.X.sum(axis=0))
        norms = np.linalg.norm(self.X, axis=0)
        if np.any(sums > tol * math.sqrt(self.d)) or np.any(np.abs(norms - 1) > tol):
            raise ValueError("columns are not zero-mean and unit-norm")

    @classmethod
    def from_residuals(cls, residuals, ids=()) -> "FingerprintMatrix":
        cols = [normalize(r) for r in residuals]
        return cls(np.column_stack(cols), tuple(ids))


@dataclass(frozen=True)
class SynthCameraSet:
    """Parameters of the uniform-scene imaging model ``Y = Y0 + Y0*K + Theta``."""

    num_cameras: int = 5
    images_per_camera: int = 100
    d: int = 64 * 64
    k_variance: float = 0.001
    theta_variance: float = 0.1
    base_intensity: float = 0.9
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_cameras < 1 or self.images_per_camera < 1:
            raise ValueError("need at least one camera and one image per camera")
        if self.k_variance <= 0 or self.theta_variance <= 0:
            raise ValueError("variances must be positive")
        if not 0.0 <= self.base_intensity <= 1.0:
            raise ValueError("base_intensity must lie in [0, 1]")
        side = math.isqrt(self.d)
        if side * side != self.d:
            raise ValueError("d must be a perfect square")

    @property
    def side(self) -> int:
        return math.isqrt(self.d)


def camera_patterns(params: SynthCameraSet) -> np.ndarray:
    """The PRNU patterns K, shape (num_cameras, side, side), as used by :func:`synthesize`."""
    rng = np.random.default_rng(params.rng_seed)
    s = params.side
    return rng.normal(0.0, math.sqrt(params.k_variance), size=(params.num_cameras, s, s))


def synthesize(params: SynthCameraSet, denoiser: Optional[DenoiserHook] = None):
    """Generate fingerprints from the synthetic imaging model.

    Returns ``(FingerprintMatrix, labels)`` where ``labels`` holds the camera
    name of every column.  Output is a pure function of ``params``.
    """
    rng = np.random.default_rng(params.rng_seed)
    s = params.side
    sd_k = math.sqrt(params.k_variance)
    sd_t = math.sqrt(params.theta_variance)
    patterns = rng.normal(0.0, sd_k, size=(params.num_cameras, s, s))
    y0 = params.base_intensity
    cols, ids, labels = [], [], []
    for cam in range(params.num_cameras):
        for img in range(params.images_per_camera):
            theta = rng.normal(0.0, sd_t, size=(s, s))
            y = np.clip(y0 + y0 * patterns[cam] + theta, 0.0, 1.0)
            cols.append(normalize(extract_residual(RawImage(y), denoiser)))
            ids.append(f"cam{cam:03d}_img{img:04d}")
            labels.append(f"cam{cam:03d}")
    return FingerprintMatrix(np.column_stack(cols), tuple(ids)), labels
