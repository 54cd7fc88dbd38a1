"""Non-negative matrix factorization with Lee-Seung multiplicative updates.

``A (n x m) ~= V (n x k) @ H (k x m)``. Columns of ``A`` are vectorized images.
An optional elementwise weight ``W`` turns the objective into
``||W * (A - V H)||_F^2``; the updates then use ``W**2`` as per-entry weights.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .imgio import GrayImage
from .util import read_json, write_json

__all__ = ["NmfConfig", "NmfModel", "factorize", "project", "build_data_matrix", "objective"]

EPS = 1e-12


@dataclass(frozen=True)
class NmfConfig:
    k: int = 14
    max_iters: int = 500
    tol: float = 1e-5
    seed: int = 42
    weight: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")


@dataclass(frozen=True)
class NmfModel:
    V: np.ndarray
    image_shape: Optional[tuple[int, int]] = None
    objective_trace: tuple[float, ...] = field(default=(), repr=False)

    @property
    def k(self) -> int:
        return self.V.shape[1]

    @property
    def n_rows(self) -> int:
        return self.V.shape[0]

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "n_rows": self.n_rows,
            "image_shape": None if self.image_shape is None else list(self.image_shape),
            "V": [float(x) for x in self.V.ravel()],
            "objective_trace": [float(x) for x in self.objective_trace],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NmfModel":
        V = np.asarray(d["V"], dtype=float).reshape(int(d["n_rows"]), int(d["k"]))
        shape = d.get("image_shape")
        return cls(V=V, image_shape=None if shape is None else tuple(shape),
                   objective_trace=tuple(d.get("objective_trace", ())))

    def save(self, path: Union[str, os.PathLike]) -> None:
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: Union[str, os.PathLike]) -> "NmfModel":
        return cls.from_dict(read_json(path))


def objective(A: np.ndarray, V: np.ndarray, H: np.ndarray, weight: Optional[np.ndarray] = None) -> float:
    """Squared (optionally weighted) Frobenius reconstruction error."""
    r = A - V @ H
    if weight is not None:
        r = weight * r
    return float(np.sum(r * r))


def _check_nonneg(A: np.ndarray, what: str) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{what} has non-finite entries")
    if A.size and A.min() < 0:
        raise ValueError(f"{what} has negative entries")
    return A


def factorize(
    A: np.ndarray,
    cfg: NmfConfig = NmfConfig(),
    image_shape: Optional[tuple[int, int]] = None,
    init: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> tuple[NmfModel, np.ndarray]:
    """Fit ``A ~= V H``; returns the model (holding ``V``) and ``H``.

    Stops after ``cfg.max_iters`` or when the relative objective change drops
    below ``cfg.tol``. ``init`` overrides the seeded uniform (0, 1] start.
    """
    A = _check_nonneg(A, "data matrix")
    if A.ndim != 2:
        raise ValueError("data matrix must be 2-D")
    n, m = A.shape
    k = cfg.k
    if k > min(n, m):
        raise ValueError(f"k={k} exceeds min(n, m)={min(n, m)}")
    Wsq = None
    if cfg.weight is not None:
        W = _check_nonneg(cfg.weight, "weight")
        if W.shape != A.shape:
            raise ValueError(f"weight shape {W.shape} != data shape {A.shape}")
        Wsq = W * W

    if init is None:
        rng = np.random.default_rng(cfg.seed)
        # 1 - U[0, 1) lies in (0, 1]
        V = 1.0 - rng.random((n, k))
        H = 1.0 - rng.random((k, m))
    else:
        V = np.array(init[0], dtype=float, copy=True)
        H = np.array(init[1], dtype=float, copy=True)
        if V.shape != (n, k) or H.shape != (k, m):
            raise ValueError("init factors have the wrong shape")

    weight = None if cfg.weight is None else np.asarray(cfg.weight, dtype=float)
    trace = [objective(A, V, H, weight)]
    WA = A if Wsq is None else Wsq * A
    for _ in range(cfg.max_iters):
        if Wsq is None:
            H *= (V.T @ A) / np.maximum(V.T @ V @ H, EPS)
            V *= (A @ H.T) / np.maximum(V @ (H @ H.T), EPS)
        else:
            H *= (V.T @ WA) / np.maximum(V.T @ (Wsq * (V @ H)), EPS)
            V *= (WA @ H.T) / np.maximum((Wsq * (V @ H)) @ H.T, EPS)
        obj = objective(A, V, H, weight)
        prev = trace[-1]
        trace.append(obj)
        if prev == 0.0 or abs(prev - obj) / prev < cfg.tol:
            break
    V.setflags(write=False)
    return NmfModel(V=V, image_shape=image_shape, objective_trace=tuple(trace)), H


def project(
    model: NmfModel,
    a: np.ndarray,
    max_iters: int = 50_000,
    tol: float = 1e-10,
    seed: int = 42,
) -> np.ndarray:
    """Non-negative coefficients ``h`` minimizing ``||a - V h||^2`` with ``V`` fixed.

    Multiplicative updates until the KKT residual ``max|min(h, grad)|`` falls
    below ``tol * max|V'a|``; an objective-change rule stops far too early on
    correlated bases, where progress per step is tiny but steady.
    """
    a = _check_nonneg(a, "input vector").ravel()
    V = model.V
    if a.size != V.shape[0]:
        raise ValueError(f"length mismatch: vector has {a.size} entries, basis has {V.shape[0]} rows")
    rng = np.random.default_rng(seed)
    h = 1.0 - rng.random(V.shape[1])
    Vta = V.T @ a
    VtV = V.T @ V
    scale = max(float(np.abs(Vta).max(initial=0.0)), EPS)
    for _ in range(max_iters):
        VtVh = VtV @ h
        if np.abs(np.minimum(h, VtVh - Vta)).max() <= tol * scale:
            break
        h *= Vta / np.maximum(VtVh, EPS)
    return h


def build_data_matrix(images: Sequence[GrayImage]) -> np.ndarray:
    """Stack row-major flattened images as columns, scaled to [0, 1]."""
    if not images:
        raise ValueError("no images given")
    shape = images[0].shape
    cols = []
    for idx, img in enumerate(images):
        if img.shape != shape:
            raise ValueError(f"image {idx} has shape {img.shape}, expected {shape}")
        if img.mask is not None and not img.mask.all():
            raise ValueError(f"image {idx} is masked; NMF requires complete images")
        cols.append(img.pixels.ravel() / (img.levels - 1))
    return np.column_stack(cols).astype(float)


def unflatten(column: np.ndarray, shape: tuple[int, int], levels: int = 256) -> np.ndarray:
    """Inverse of one ``build_data_matrix`` column back to integer bins."""
    return np.rint(np.asarray(column) * (levels - 1)).astype(np.int64).reshape(shape)
