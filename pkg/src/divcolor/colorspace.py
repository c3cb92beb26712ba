"""sRGB/CIE-Lab conversion, ab quantisation and colour-rarity weights.

Colour fields are H x W x 2 arrays of Lab a/b divided by ``AB_SCALE`` so
that they live in [-1, 1]; lightness stays in Lab units [0, 100].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import EmptyCorpusError

AB_SCALE = 110.0
DEFAULT_BIN_SIZE = 10.0
WEIGHT_FLOOR = 1e-4

# sRGB primaries under D65
_RGB_TO_XYZ = np.array(
    [
        [0.412453, 0.357580, 0.180423],
        [0.212671, 0.715160, 0.072169],
        [0.019334, 0.119193, 0.950227],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
# reference white taken from the matrix so that neutral greys map to a = b = 0
_WHITE = _RGB_TO_XYZ.sum(axis=1)
_EPS = (6.0 / 29.0) ** 3
_KAPPA = (29.0 / 6.0) ** 2 / 3.0


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c: np.ndarray) -> np.ndarray:
    c = np.clip(c, 0.0, 1.0)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1.0 / 2.4) - 0.055)


def rgb_to_lab(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Convert H x W x 3 sRGB bytes to (L, normalised ab)."""
    rgb = np.asarray(image, dtype=np.float64) / 255.0
    xyz = _srgb_to_linear(rgb) @ _RGB_TO_XYZ.T / _WHITE
    f = np.where(xyz > _EPS, np.cbrt(xyz), xyz * _KAPPA + 4.0 / 29.0)
    lightness = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return lightness, np.stack([a, b], axis=-1) / AB_SCALE


def lab_to_rgb(lightness: np.ndarray, ab: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb_to_lab`; returns clipped, rounded uint8 RGB."""
    ab = np.asarray(ab, dtype=np.float64) * AB_SCALE
    fy = (np.asarray(lightness, dtype=np.float64) + 16.0) / 116.0
    fx = fy + ab[..., 0] / 500.0
    fz = fy - ab[..., 1] / 200.0
    f = np.stack([fx, fy, fz], axis=-1)
    xyz = np.where(f > 6.0 / 29.0, f**3, (f - 4.0 / 29.0) / _KAPPA) * _WHITE
    rgb = _linear_to_srgb(xyz @ _XYZ_TO_RGB.T)
    return np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)


def grey_to_rgb(lightness: np.ndarray) -> np.ndarray:
    return lab_to_rgb(lightness, np.zeros(np.shape(lightness) + (2,)))


def n_bins(bin_size: float = DEFAULT_BIN_SIZE) -> int:
    return int(np.ceil(2 * AB_SCALE / bin_size))


def quantize(ab: np.ndarray, bin_size: float = DEFAULT_BIN_SIZE) -> np.ndarray:
    """Flat bin index for every normalised ab pair (last axis of size 2)."""
    side = n_bins(bin_size)
    idx = np.floor((np.asarray(ab) * AB_SCALE + AB_SCALE) / bin_size).astype(np.int64)
    idx = np.clip(idx, 0, side - 1)
    return idx[..., 0] * side + idx[..., 1]


def bin_centers(bins: np.ndarray, bin_size: float = DEFAULT_BIN_SIZE) -> np.ndarray:
    """Normalised ab value at the centre of each flat bin index."""
    side = n_bins(bin_size)
    bins = np.asarray(bins)
    ia, ib = bins // side, bins % side
    centers = -AB_SCALE + (np.stack([ia, ib], axis=-1) + 0.5) * bin_size
    return centers / AB_SCALE


@dataclass(eq=False)
class AbHistogram:
    """Normalised histogram of quantised ab colours with rarity weights.

    ``counts`` holds raw pixel tallies per bin.  Weights are the inverse bin
    probability (floored at ``floor``) rescaled to unit mean over the corpus
    the histogram was built from.
    """

    bin_size: float
    counts: np.ndarray
    floor: float = WEIGHT_FLOOR

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.float64)
        total = self.counts.sum()
        if total <= 0:
            raise EmptyCorpusError("histogram has no pixels")
        self.n_pixels = total
        self.prob = self.counts / total
        raw = np.full(self.counts.shape, 1.0 / self.floor)
        above = self.prob >= self.floor
        raw[above] = total / self.counts[above]
        self._raw = raw
        self.scale = float((self.counts * raw).sum() / total)
        self.weight_grid = raw / self.scale

    @property
    def grid(self) -> np.ndarray:
        side = n_bins(self.bin_size)
        return self.prob.reshape(side, side)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.counts)

    @classmethod
    def uniform(cls, bin_size: float = DEFAULT_BIN_SIZE) -> "AbHistogram":
        """Every bin equally likely, so every weight is exactly 1."""
        return cls(bin_size, np.ones(n_bins(bin_size) ** 2))

    def weights(self, ab: np.ndarray) -> np.ndarray:
        return self.weight_grid[quantize(ab, self.bin_size)]


def build_histogram(fields: Iterable[np.ndarray], bin_size: float = DEFAULT_BIN_SIZE,
                    floor: float = WEIGHT_FLOOR) -> AbHistogram:
    """Tally quantised ab colours over a corpus of colour fields."""
    counts = np.zeros(n_bins(bin_size) ** 2)
    seen = False
    for field in fields:
        bins = quantize(field, bin_size).ravel()
        if bins.size:
            seen = True
        counts += np.bincount(bins, minlength=counts.size)
    if not seen:
        raise EmptyCorpusError("cannot build a histogram from an empty corpus")
    return AbHistogram(bin_size, counts, floor)


def pixel_weights(field: np.ndarray, hist: AbHistogram) -> np.ndarray:
    """H x W colour-rarity weights looked up from the field's own colours."""
    return hist.weights(field)
