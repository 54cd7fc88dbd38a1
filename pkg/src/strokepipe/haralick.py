"""Haralick texture statistics and the 28-dimensional texture feature vector.

Conventions: natural logarithms, ``0 * log 0 == 0``, and 1-based gray-level
indices wherever the index value itself enters a formula (sum average, sum
variance). Shift-invariant statistics are unaffected by the index base.
"""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .glcm import DIRECTIONS, Glcm, compute_glcm, marginals
from .imgio import GrayImage
from .util import atomic_write_text

__all__ = [
    "STAT_NAMES",
    "HaralickStats",
    "FeatureKind",
    "FeatureVector",
    "compute_stats",
    "directional_stats",
    "feature_vector_28",
    "feature_names",
    "write_feature_csv",
    "read_feature_csv",
    "concatenate",
]

STAT_NAMES = (
    "asm",
    "contrast",
    "correlation",
    "sum_of_squares_variance",
    "idm",
    "sum_average",
    "sum_variance",
    "sum_entropy",
    "entropy",
    "difference_variance",
    "difference_entropy",
    "imc1",
    "imc2",
    "max_corr_coeff",
)

# Degeneracy flags attached to a HaralickStats instance.
FLAG_CORRELATION = "correlation_degenerate"
FLAG_IMC1 = "imc1_degenerate"
FLAG_MCC = "max_corr_coeff_degenerate"


@dataclass(frozen=True)
class HaralickStats:
    asm: float
    contrast: float
    correlation: float
    sum_of_squares_variance: float
    idm: float
    sum_average: float
    sum_variance: float
    sum_entropy: float
    entropy: float
    difference_variance: float
    difference_entropy: float
    imc1: float
    imc2: float
    max_corr_coeff: float
    mu_x: float = 0.0
    mu_y: float = 0.0
    sigma_x: float = 0.0
    sigma_y: float = 0.0
    hx: float = 0.0
    hy: float = 0.0
    hxy: float = 0.0
    hxy1: float = 0.0
    hxy2: float = 0.0
    flags: frozenset = field(default_factory=frozenset)

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in STAT_NAMES], dtype=float)


def _entropy(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def _max_corr_coeff(p: np.ndarray, p_x: np.ndarray, p_y: np.ndarray) -> Optional[float]:
    rows = p_x > 0
    cols = p_y > 0
    if rows.sum() < 2 or cols.sum() < 2:
        return None
    sub = p[np.ix_(rows, cols)]
    # Q = Dx^-1 P Dy^-1 P^T is similar to S S^T with S = Dx^-1/2 P Dy^-1/2,
    # so its eigenvalues are the squared singular values of S.
    s = sub / np.sqrt(np.outer(p_x[rows], p_y[cols]))
    sv = np.linalg.svd(s, compute_uv=False)
    if sv.size < 2:
        return None
    return float(min(max(sv[1], 0.0), 1.0))


def compute_stats(g: Glcm) -> HaralickStats:
    """All 14 Haralick statistics of one normalized co-occurrence matrix."""
    p = g.p
    n = g.n_levels
    p_x, p_y, p_sum, p_diff = marginals(g)
    levels = np.arange(1, n + 1, dtype=float)
    sums = np.arange(2, 2 * n + 1, dtype=float)
    diffs = np.arange(n, dtype=float)
    flags = set()

    mu_x = float(levels @ p_x)
    mu_y = float(levels @ p_y)
    var_x = float(((levels - mu_x) ** 2) @ p_x)
    var_y = float(((levels - mu_y) ** 2) @ p_y)
    sigma_x, sigma_y = math.sqrt(var_x), math.sqrt(var_y)

    asm = float(np.sum(p * p))
    contrast = float((diffs**2) @ p_diff)
    if sigma_x > 0 and sigma_y > 0:
        correlation = (float(levels @ p @ levels) - mu_x * mu_y) / (sigma_x * sigma_y)
    else:
        correlation = 0.0
        flags.add(FLAG_CORRELATION)
    sum_sq_var = float(((levels - mu_x) ** 2) @ p.sum(axis=1))
    i, j = np.indices((n, n))
    idm = float(np.sum(p / (1.0 + (i - j) ** 2)))
    sum_average = float(sums @ p_sum)
    sum_entropy = _entropy(p_sum)
    sum_variance = float(((sums - sum_entropy) ** 2) @ p_sum)
    entropy = _entropy(p)
    diff_mean = float(diffs @ p_diff)
    difference_variance = float(((diffs - diff_mean) ** 2) @ p_diff)
    difference_entropy = _entropy(p_diff)

    hx, hy, hxy = _entropy(p_x), _entropy(p_y), entropy
    pxpy = np.outer(p_x, p_y)
    nz = pxpy > 0
    log_pxpy = np.zeros_like(pxpy)
    log_pxpy[nz] = np.log(pxpy[nz])
    hxy1 = float(-np.sum(p[nz] * log_pxpy[nz]))
    hxy2 = float(-np.sum(pxpy[nz] * log_pxpy[nz]))
    hmax = max(hx, hy)
    if hmax > 0:
        imc1 = (hxy - hxy1) / hmax
    else:
        imc1 = 0.0
        flags.add(FLAG_IMC1)
    imc2 = math.sqrt(max(0.0, 1.0 - math.exp(-2.0 * (hxy2 - hxy))))
    mcc = _max_corr_coeff(p, p_x, p_y)
    if mcc is None:
        mcc = 0.0
        flags.add(FLAG_MCC)

    return HaralickStats(
        asm=asm,
        contrast=contrast,
        correlation=correlation,
        sum_of_squares_variance=sum_sq_var,
        idm=idm,
        sum_average=sum_average,
        sum_variance=sum_variance,
        sum_entropy=sum_entropy,
        entropy=entropy,
        difference_variance=difference_variance,
        difference_entropy=difference_entropy,
        imc1=imc1,
        imc2=imc2,
        max_corr_coeff=mcc,
        mu_x=mu_x,
        mu_y=mu_y,
        sigma_x=sigma_x,
        sigma_y=sigma_y,
        hx=hx,
        hy=hy,
        hxy=hxy,
        hxy1=hxy1,
        hxy2=hxy2,
        flags=frozenset(flags),
    )


class FeatureKind(str, Enum):
    HARALICK28 = "haralick28"
    NMF14 = "nmf14"
    CONCATENATED42 = "concatenated42"


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    kind: FeatureKind
    source_id: str = ""

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True).ravel()
        kind = FeatureKind(self.kind)
        if kind is FeatureKind.HARALICK28 and values.size != 28:
            raise ValueError(f"haralick28 vector must have 28 entries, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"feature vector {self.source_id!r} has non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "kind", kind)

    def __len__(self) -> int:
        return self.values.size


def directional_stats(img: GrayImage, distance: int = 1) -> np.ndarray:
    """(4, 14) array: rows follow DIRECTIONS (0, 90, 45, 135 degrees)."""
    return np.stack([compute_stats(compute_glcm(img, d, distance)).as_array() for d in DIRECTIONS])


def feature_vector_28(img: GrayImage, source_id: str = "", distance: int = 1) -> FeatureVector:
    """14 direction means followed by 14 direction ranges."""
    stats = directional_stats(img, distance)
    values = np.concatenate([stats.mean(axis=0), stats.max(axis=0) - stats.min(axis=0)])
    return FeatureVector(values, FeatureKind.HARALICK28, source_id)


def feature_names(kind: FeatureKind, length: int) -> list[str]:
    kind = FeatureKind(kind)
    if kind is FeatureKind.HARALICK28:
        return [f"mean_{s}" for s in STAT_NAMES] + [f"range_{s}" for s in STAT_NAMES]
    if kind is FeatureKind.NMF14:
        return [f"h{i}" for i in range(length)]
    return [f"x{i}" for i in range(length)]


def write_feature_csv(path: Union[str, os.PathLike], vectors: Sequence[FeatureVector]) -> None:
    """One row per vector: ``source_id, kind, values...`` (values written with repr)."""
    if not vectors:
        raise ValueError("no feature vectors to write")
    kinds = {v.kind for v in vectors}
    lengths = {len(v) for v in vectors}
    if len(kinds) != 1 or len(lengths) != 1:
        raise ValueError("all vectors in one CSV must share kind and length")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["source_id", "kind", *feature_names(vectors[0].kind, len(vectors[0]))])
    for v in vectors:
        writer.writerow([v.source_id, v.kind.value, *(repr(float(x)) for x in v.values)])
    atomic_write_text(path, buf.getvalue())


def read_feature_csv(path: Union[str, os.PathLike]) -> list[FeatureVector]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["source_id", "kind"]:
            raise ValueError(f"{path}: not a feature CSV (missing source_id,kind header)")
        return [FeatureVector(np.array(row[2:], dtype=float), FeatureKind(row[1]), row[0]) for row in reader if row]


def concatenate(vectors: Iterable[FeatureVector], source_id: Optional[str] = None) -> FeatureVector:
    vectors = list(vectors)
    values = np.concatenate([v.values for v in vectors])
    return FeatureVector(values, FeatureKind.CONCATENATED42, source_id if source_id is not None else vectors[0].source_id)
