"""Thin SVD contract and singular-value soft-thresholding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    def reconstruct(self, s: np.ndarray | None = None) -> np.ndarray:
        s = self.s if s is None else s
        return (self.u * s) @ self.v.T


def _as_finite(matrix) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def svd(matrix) -> SvdResult:
    """Thin SVD with ``k = min(m, n)`` singular values in descending order."""
    m = _as_finite(matrix)
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    return SvdResult(u, s, vt.T)


def svt(matrix, threshold: float) -> np.ndarray:
    """Proximal map of ``threshold * ||.||_*``: shrink every singular value by ``threshold``."""
    if not threshold >= 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    res = svd(matrix)
    return res.reconstruct(np.maximum(res.s - threshold, 0.0))


def nuclear_norm(matrix) -> float:
    return float(np.sum(np.linalg.svd(_as_finite(matrix), compute_uv=False)))


def numerical_rank(matrix, tol: float = 1e-9) -> int:
    return int(np.sum(np.linalg.svd(_as_finite(matrix), compute_uv=False) > tol))
