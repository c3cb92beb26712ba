"""Small procedurally generated corpora for tests, demos and sanity runs.

Every generator returns ``(lightness, ab)`` with lightness in Lab units
(N, S, S) and ab normalised to [-1, 1] (N, S, S, 2).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .colorspace import lab_to_rgb
from .imageio import write_image

COMMON_AB = (0.05, 0.08)
RARE_AB = (0.55, -0.45)


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    t = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    return np.meshgrid(t, t, indexing="ij")


def smooth_fields(n: int, size: int = 16, rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """A base hue, a linear ramp and one soft blob of a second hue per field."""
    rng = rng if rng is not None else np.random.default_rng(0)
    yy, xx = _grid(size)
    lightness = np.empty((n, size, size))
    ab = np.empty((n, size, size, 2))
    for i in range(n):
        angle = rng.uniform(0, 2 * np.pi, 2)
        base = 0.35 * np.array([np.cos(angle[0]), np.sin(angle[0])])
        spot = 0.45 * np.array([np.cos(angle[1]), np.sin(angle[1])])
        ramp = rng.uniform(-0.15, 0.15, (2, 2))
        cy, cx = rng.uniform(-0.6, 0.6, 2)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * 0.3**2))
        for c in range(2):
            ab[i, :, :, c] = base[c] + ramp[c, 0] * yy + ramp[c, 1] * xx + blob * (spot[c] - base[c])
        lightness[i] = 55.0 + 25.0 * blob - 10.0 * yy
    return lightness, np.clip(ab, -0.95, 0.95)


def imbalanced_fields(n: int, size: int = 16, rng: np.random.Generator | None = None,
                      rare_fraction: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Greyish background with one square of a vivid rare colour.

    The square covers about ``rare_fraction`` of each field, so the corpus
    colour population is roughly (1 - f) : f.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    side = max(1, int(round(np.sqrt(rare_fraction * size * size))))
    lightness = np.full((n, size, size), 70.0)
    ab = np.empty((n, size, size, 2))
    ab[:] = COMMON_AB
    for i in range(n):
        top, left = rng.integers(0, size - side + 1, 2)
        ab[i, top : top + side, left : left + side] = RARE_AB
        lightness[i, top : top + side, left : left + side] = 45.0
    return lightness, ab


def ambiguous_scene(size: int = 16, rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """One grey scene with two colourings: a blob that is either red or blue.

    Returns ``(lightness (S, S), ab (2, S, S, 2))``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    yy, xx = _grid(size)
    cy, cx = rng.uniform(-0.3, 0.3, 2)
    blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * 0.35**2))
    lightness = 50.0 + 30.0 * blob
    hues = np.array([[0.6, 0.4], [-0.1, -0.6]])
    ab = blob[None, :, :, None] * hues[:, None, None, :]
    return lightness, ab


def write_corpus(directory, lightness: np.ndarray, ab: np.ndarray, suffix: str = ".png") -> list[Path]:
    """Save fields as RGB image files ``img000.png``, ... for ingestion."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, (l_chan, ab_chan) in enumerate(zip(lightness, ab)):
        paths.append(directory / f"img{i:03d}{suffix}")
        write_image(paths[-1], lab_to_rgb(l_chan, ab_chan))
    return paths
