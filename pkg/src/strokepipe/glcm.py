"""Mask-aware gray-level co-occurrence matrices.

A pixel pair contributes only when both endpoints are valid. Pairs are
counted in both orders, so every matrix is symmetric.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .imgio import GrayImage

__all__ = ["Direction", "Glcm", "EmptyCooccurrenceError", "compute_glcm", "marginals", "DIRECTIONS"]


class EmptyCooccurrenceError(ValueError):
    """No valid pixel pair exists for the requested direction and distance."""


class Direction(Enum):
    """Adjacency directions as (drow, dcol) unit offsets."""

    HORIZONTAL = (0, 1)
    VERTICAL = (1, 0)
    DIAG_RIGHT = (-1, 1)
    DIAG_LEFT = (-1, -1)

    @property
    def angle(self) -> int:
        return {"HORIZONTAL": 0, "DIAG_RIGHT": 45, "VERTICAL": 90, "DIAG_LEFT": 135}[self.name]

    def offset(self, distance: int = 1) -> tuple[int, int]:
        dr, dc = self.value
        return dr * distance, dc * distance


DIRECTIONS = (Direction.HORIZONTAL, Direction.VERTICAL, Direction.DIAG_RIGHT, Direction.DIAG_LEFT)


@dataclass(frozen=True)
class Glcm:
    n_levels: int
    p: np.ndarray
    pair_count: int

    @property
    def counts(self) -> np.ndarray:
        return np.rint(self.p * self.pair_count).astype(np.int64)


def _overlap(n: int, d: int) -> tuple[slice, slice]:
    """Source/target slices along one axis for a shift of ``d``."""
    if d >= 0:
        return slice(0, n - d), slice(d, n)
    return slice(-d, n), slice(0, n + d)


def cooccurrence_counts(img: GrayImage, direction: Direction, distance: int = 1) -> np.ndarray:
    """Raw symmetric pair counts (ints) for one direction."""
    if distance < 1:
        raise ValueError("distance must be >= 1")
    dr, dc = direction.offset(distance)
    h, w = img.shape
    n = img.levels
    counts = np.zeros((n, n), dtype=np.int64)
    if abs(dr) >= h or abs(dc) >= w:
        return counts
    rs, rt = _overlap(h, dr)
    cs, ct = _overlap(w, dc)
    a = img.pixels[rs, cs]
    b = img.pixels[rt, ct]
    valid = img.valid
    both = valid[rs, cs] & valid[rt, ct]
    flat = np.bincount(a[both] * n + b[both], minlength=n * n).reshape(n, n)
    counts += flat
    counts += flat.T
    return counts


def compute_glcm(img: GrayImage, direction: Direction, distance: int = 1) -> Glcm:
    """Normalized symmetric co-occurrence matrix for one direction."""
    counts = cooccurrence_counts(img, direction, distance)
    total = int(counts.sum())
    if total == 0:
        raise EmptyCooccurrenceError(
            f"empty co-occurrence: no valid pixel pairs for {direction.name} at distance {distance}"
        )
    p = counts / total
    p.setflags(write=False)
    return Glcm(n_levels=img.levels, p=p, pair_count=total)


def marginals(g: Glcm) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(p_x, p_y, p_sum, p_diff)``.

    ``p_sum[k]`` holds the mass at 0-based ``i + j == k`` (1-based sum ``k + 2``);
    ``p_diff[k]`` holds the mass at ``|i - j| == k``.
    """
    p = g.p
    n = g.n_levels
    p_x = p.sum(axis=1)
    p_y = p.sum(axis=0)
    i, j = np.indices((n, n))
    p_sum = np.bincount((i + j).ravel(), weights=p.ravel(), minlength=2 * n - 1)
    p_diff = np.bincount(np.abs(i - j).ravel(), weights=p.ravel(), minlength=n)
    return p_x, p_y, p_sum, p_diff
