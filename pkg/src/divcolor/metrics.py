"""Per-pixel error and diversity measures over normalised colour fields."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .colorspace import AbHistogram
from .errors import DimensionError, UsageError

GRID_POINTS = 8


def grid_indices(size: int, points: int = GRID_POINTS) -> np.ndarray:
    """Evenly spaced lattice coordinates over the central half of an axis."""
    start, window = size // 4, size // 2
    return start + ((2 * np.arange(points) + 1) * window) // (2 * points)


def _select(err: np.ndarray, mode: str) -> np.ndarray:
    if mode == "all":
        return err
    if mode == "grid":
        rows = grid_indices(err.shape[0])
        cols = grid_indices(err.shape[1])
        return err[np.ix_(rows, cols)]
    raise UsageError(f"mode must be 'all' or 'grid', got {mode!r}")


def _pair(pred, target) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 3 or pred.shape[-1] != 2:
        raise DimensionError(f"expected matching H x W x 2 fields, got {pred.shape} and {target.shape}")
    return pred, target


def mae(pred, target, mode: str = "all") -> float:
    """Mean of |delta a| and |delta b| over the selected pixels."""
    pred, target = _pair(pred, target)
    return float(_select(np.abs(pred - target), mode).mean())


def weighted_mae(pred, target, hist: AbHistogram, mode: str = "all") -> float:
    """Absolute error scaled by the colour-rarity weight of the target pixel."""
    pred, target = _pair(pred, target)
    err = np.abs(pred - target) * hist.weights(target)[..., None]
    return float(_select(err, mode).mean())


def error_of_best(preds: Sequence[np.ndarray], target) -> float:
    if len(preds) == 0:
        raise UsageError("error_of_best needs at least one prediction")
    return min(mae(p, target, "all") for p in preds)


def diversity_variance(preds: Sequence[np.ndarray]) -> float:
    """Population variance across predictions, averaged over pixels and channels."""
    stack = np.asarray(preds, dtype=np.float64)
    if stack.ndim != 4 or len(stack) == 0:
        raise DimensionError("diversity_variance expects a non-empty list of H x W x 2 fields")
    # shifting by the first prediction leaves identical lists at exactly zero
    return float((stack - stack[0]).var(axis=0).mean())


REPORT_FIELDS = ("mae_all", "mae_grid", "wae_all", "wae_grid", "eob", "variance")


@dataclass
class ImageScores:
    name: str
    mae_all: float
    mae_grid: float
    wae_all: float
    wae_grid: float
    eob: float
    variance: float


@dataclass
class EvalReport:
    mae_all: float = 0.0
    mae_grid: float = 0.0
    wae_all: float = 0.0
    wae_grid: float = 0.0
    eob: float = 0.0
    variance: float = 0.0
    images: list = field(default_factory=list)

    @classmethod
    def from_images(cls, images: list[ImageScores]) -> "EvalReport":
        if not images:
            raise UsageError("no images to report")
        means = {k: float(np.mean([getattr(im, k) for im in images])) for k in REPORT_FIELDS}
        return cls(images=list(images), **means)

    def to_record(self) -> str:
        """Flat ``key=value`` text, one pair per line."""
        lines = [f"{k}={getattr(self, k):.9g}" for k in REPORT_FIELDS]
        lines.append(f"n_images={len(self.images)}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=("image",) + REPORT_FIELDS, lineterminator="\n")
        writer.writeheader()
        for im in self.images:
            row = asdict(im)
            row["image"] = row.pop("name")
            writer.writerow({k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()


def score_image(name: str, reconstruction: np.ndarray, diverse: Sequence[np.ndarray], target: np.ndarray,
                hist: AbHistogram) -> ImageScores:
    """Reconstruction errors (absolute and weighted) plus diversity scores."""
    return ImageScores(
        name=name,
        mae_all=mae(reconstruction, target, "all"),
        mae_grid=mae(reconstruction, target, "grid"),
        wae_all=weighted_mae(reconstruction, target, hist, "all"),
        wae_grid=weighted_mae(reconstruction, target, hist, "grid"),
        eob=error_of_best(diverse, target),
        variance=diversity_variance(diverse),
    )
