"""Principal components of flattened colour fields."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, RankError

DEFAULT_K = 20
SIGMA_FLOOR = 1e-6
# eigenvalues below this fraction of the largest count as degenerate
_RANK_RTOL = 1e-10


@dataclass(eq=False)
class PcaBasis:
    """Mean, orthonormal top-k directions and their standard deviations.

    ``components`` is k x D with rows sorted by decreasing ``sigmas``; the
    first non-negligible entry of each row is positive.
    """

    mean: np.ndarray
    components: np.ndarray
    sigmas: np.ndarray
    field_shape: tuple

    @property
    def k(self) -> int:
        return len(self.sigmas)

    @property
    def dim(self) -> int:
        return self.mean.size

    def flatten(self, fields: np.ndarray) -> np.ndarray:
        fields = np.asarray(fields, dtype=np.float64)
        if fields.shape == (self.dim,) or fields.shape[-1:] == (self.dim,) and fields.ndim == 2:
            return fields
        if fields.shape[-3:] != tuple(self.field_shape):
            raise DimensionError(f"field shape {fields.shape} does not match basis geometry {self.field_shape}")
        return fields.reshape(fields.shape[:-3] + (self.dim,))


def _sign_normalise(vectors: np.ndarray) -> np.ndarray:
    out = vectors.copy()
    for row in out:
        tol = 1e-10 * np.abs(row).max()
        first = np.flatnonzero(np.abs(row) > tol)[0]
        if row[first] < 0:
            row *= -1.0
    return out


def fit(fields: Sequence[np.ndarray] | np.ndarray, k: int = DEFAULT_K) -> PcaBasis:
    """Fit the top-``k`` principal directions of a corpus of fields."""
    data = np.asarray(fields, dtype=np.float64)
    if data.ndim < 2:
        raise DimensionError("fit expects a stack of fields or vectors")
    field_shape = data.shape[1:]
    n = data.shape[0]
    x = data.reshape(n, -1)
    dim = x.shape[1]
    if k < 1:
        raise ValueError("k must be at least 1")
    if n < k + 1:
        raise RankError(f"{n} samples support at most {n - 1} components, {k} requested", max(n - 1, 0))

    mean = x.mean(axis=0)
    xc = x - mean
    if n - 1 < dim:
        # Gram trick: eigenvectors of X X^T map to those of X^T X
        gram = xc @ xc.T / (n - 1)
        evals, evecs = np.linalg.eigh(gram)
        order = np.argsort(evals)[::-1]
        evals, evecs = evals[order], evecs[:, order]
        keep = max(int(np.sum(evals > _RANK_RTOL * max(evals[0], 0.0))), 0)
        comps = (xc.T @ evecs[:, :keep]) / np.sqrt(evals[:keep] * (n - 1))
        comps = comps.T
    else:
        cov = xc.T @ xc / (n - 1)
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1]
        evals, evecs = evals[order], evecs[:, order]
        keep = max(int(np.sum(evals > _RANK_RTOL * max(evals[0], 0.0))), 0)
        comps = evecs[:, :keep].T

    if keep < k:
        raise RankError(f"data has only {keep} non-degenerate directions, {k} requested", keep)
    comps = _sign_normalise(comps[:k])
    return PcaBasis(mean=mean, components=comps, sigmas=np.sqrt(evals[:k]), field_shape=tuple(field_shape))


def project(basis: PcaBasis, field: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients along each component and the orthogonal residual."""
    centred = basis.flatten(field) - basis.mean
    coeffs = centred @ basis.components.T
    residual = centred - coeffs @ basis.components
    return coeffs, residual


def reconstruct(basis: PcaBasis, coeffs: np.ndarray, residual: np.ndarray | None = None) -> np.ndarray:
    out = basis.mean + np.asarray(coeffs) @ basis.components
    return out if residual is None else out + residual
