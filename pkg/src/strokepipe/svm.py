"""Binary soft-margin kernel SVM trained with SMO.

The solver minimizes the dual ``0.5 a'Qa - sum(a)`` subject to
``0 <= a <= C`` and ``y'a = 0`` with ``Q_ij = y_i y_j K(x_i, x_j)``, picking
working pairs by maximal violation with second-order gain (Fan, Chen & Lin).

The normalized score is the signed feature-space distance
``f(x) / ||w||`` with ``||w||^2 = sum_ij a_i a_j y_i y_j K(x_i, x_j)``.
"""
from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .haralick import FeatureKind, FeatureVector
from .util import read_json, write_json

__all__ = [
    "KernelSpec",
    "SvmModel",
    "MinMaxScaler",
    "ConvergenceWarning",
    "DegenerateModelError",
    "FeatureKindMismatch",
    "kernel_eval",
    "gram",
    "train",
    "decision_value",
    "score",
    "predict",
]

TAU = 1e-12


class ConvergenceWarning(UserWarning):
    pass


class DegenerateModelError(ValueError):
    """The model's feature-space weight norm is not positive."""


class FeatureKindMismatch(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    """``linear``: u.v; ``rbf``: exp(-|u-v|^2 / (2 sigma^2)); ``mlp``: tanh(scale u.v + offset)."""

    kind: str = "linear"
    sigma: float = 1.0
    scale: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in ("linear", "rbf", "mlp"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "rbf" and not self.sigma > 0:
            raise ValueError("rbf sigma must be > 0")

    @classmethod
    def linear(cls) -> "KernelSpec":
        return cls("linear")

    @classmethod
    def rbf(cls, sigma: float) -> "KernelSpec":
        return cls("rbf", sigma=float(sigma))

    @classmethod
    def mlp(cls, scale: float, offset: float) -> "KernelSpec":
        return cls("mlp", scale=float(scale), offset=float(offset))

    def to_dict(self) -> dict:
        if self.kind == "linear":
            return {"kind": "linear"}
        if self.kind == "rbf":
            return {"kind": "rbf", "sigma": self.sigma}
        return {"kind": "mlp", "scale": self.scale, "offset": self.offset}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(d["kind"], sigma=d.get("sigma", 1.0), scale=d.get("scale", 1.0), offset=d.get("offset", 0.0))


def gram(spec: KernelSpec, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Kernel matrix between the rows of ``X`` and ``Y``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    dot = X @ Y.T
    if spec.kind == "linear":
        return dot
    if spec.kind == "rbf":
        sq = np.sum(X * X, axis=1)[:, None] + np.sum(Y * Y, axis=1)[None, :] - 2.0 * dot
        return np.exp(-np.maximum(sq, 0.0) / (2.0 * spec.sigma**2))
    return np.tanh(spec.scale * dot + spec.offset)


def kernel_eval(spec: KernelSpec, u, v) -> float:
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if u.size != v.size:
        raise ValueError(f"length mismatch: {u.size} vs {v.size}")
    return float(gram(spec, u[None, :], v[None, :])[0, 0])


@dataclass(frozen=True)
class MinMaxScaler:
    """Per-dimension affine map of the training range onto [0, 1]."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "MinMaxScaler":
        return cls(X.min(axis=0).astype(float), X.max(axis=0).astype(float))

    @classmethod
    def identity(cls, dim: int) -> "MinMaxScaler":
        return cls(np.zeros(dim), np.ones(dim))

    def transform(self, X: np.ndarray) -> np.ndarray:
        span = self.hi - self.lo
        # constant training dimensions map to 0
        span = np.where(span > 0, span, 1.0)
        return (np.asarray(X, dtype=float) - self.lo) / span


@dataclass(frozen=True)
class SvmModel:
    support_vectors: np.ndarray  # in scaled coordinates
    alphas: np.ndarray
    labels: np.ndarray
    bias: float
    kernel: KernelSpec
    C: float
    scaler: MinMaxScaler
    w_norm_sq: float
    feature_kind: Optional[FeatureKind] = None
    converged: bool = True
    iterations: int = 0
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def dim(self) -> int:
        return self.scaler.lo.size

    @property
    def dual_objective(self) -> float:
        return float(self.alphas.sum() - 0.5 * self.w_norm_sq)

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel.to_dict(),
            "C": self.C,
            "feature_kind": None if self.feature_kind is None else self.feature_kind.value,
            "dim": self.dim,
            "scaler": {"min": self.scaler.lo.tolist(), "max": self.scaler.hi.tolist()},
            "support_vectors": self.support_vectors.tolist(),
            "alphas": self.alphas.tolist(),
            "labels": [int(v) for v in self.labels],
            "bias": self.bias,
            "w_norm_sq": self.w_norm_sq,
            "converged": self.converged,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        dim = int(d["dim"])
        return cls(
            support_vectors=np.asarray(d["support_vectors"], dtype=float).reshape(-1, dim),
            alphas=np.asarray(d["alphas"], dtype=float),
            labels=np.asarray(d["labels"], dtype=int),
            bias=float(d["bias"]),
            kernel=KernelSpec.from_dict(d["kernel"]),
            C=float(d["C"]),
            scaler=MinMaxScaler(np.asarray(d["scaler"]["min"], dtype=float), np.asarray(d["scaler"]["max"], dtype=float)),
            w_norm_sq=float(d["w_norm_sq"]),
            feature_kind=None if d.get("feature_kind") is None else FeatureKind(d["feature_kind"]),
            converged=bool(d.get("converged", True)),
            iterations=int(d.get("iterations", 0)),
        )

    def save(self, path: Union[str, os.PathLike]) -> None:
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: Union[str, os.PathLike]) -> "SvmModel":
        return cls.from_dict(read_json(path))


def _as_matrix(data) -> tuple[np.ndarray, Optional[FeatureKind]]:
    if isinstance(data, np.ndarray):
        return np.atleast_2d(data.astype(float)), None
    data = list(data)
    if data and isinstance(data[0], FeatureVector):
        kinds = {v.kind for v in data}
        if len(kinds) != 1:
            raise FeatureKindMismatch(f"feature kind mismatch within training data: {sorted(k.value for k in kinds)}")
        return np.stack([v.values for v in data]), data[0].kind
    return np.atleast_2d(np.asarray(data, dtype=float)), None


def _smo(K: np.ndarray, y: np.ndarray, C: float, tol: float, max_iter: int):
    """Returns ``(alpha, rho, iterations, converged)``; decision is ``sum a y K - rho``."""
    n = y.size
    Q = (y[:, None] * y[None, :]) * K
    QD = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    it = 0
    converged = False
    while it < max_iter:
        yG = -y * G
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.flatnonzero(up)[np.argmax(yG[up])])
        g_max = yG[i]
        g_min = yG[low].min()
        if g_max - g_min < tol:
            converged = True
            break
        # second-order choice of j among violating low indices
        cand = low & (yG < g_max)
        idx = np.flatnonzero(cand)
        b = g_max - yG[idx]
        a = QD[i] + QD[idx] - 2.0 * y[i] * y[idx] * Q[i, idx]
        a = np.where(a > 0, a, TAU)
        j = int(idx[np.argmin(-(b * b) / a)])

        Qi, Qj = Q[i], Q[j]
        old_i, old_j = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = QD[i] + QD[j] + 2.0 * Qi[j]
            quad = quad if quad > 0 else TAU
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            elif alpha[j] > C:
                alpha[j] = C
                alpha[i] = C + diff
        else:
            quad = QD[i] + QD[j] - 2.0 * Qi[j]
            quad = quad if quad > 0 else TAU
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            elif alpha[j] < 0:
                alpha[j] = 0.0
                alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = total
        G += Qi * (alpha[i] - old_i) + Qj * (alpha[j] - old_j)
        it += 1

    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(yG[free].mean())
    else:
        # midpoint of the feasible interval
        ub_mask = ((y < 0) & (alpha >= C)) | ((y > 0) & (alpha <= 0))
        lb_mask = ((y > 0) & (alpha >= C)) | ((y < 0) & (alpha <= 0))
        ub = yG[ub_mask].min() if ub_mask.any() else np.inf
        lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
        rho = float((ub + lb) / 2.0) if np.isfinite(ub) and np.isfinite(lb) else float(ub if np.isfinite(ub) else lb)
    return alpha, rho, it, converged


def train(
    data,
    labels: Sequence[int],
    kernel: KernelSpec = KernelSpec(),
    C: float = 1.0,
    tol: float = 1e-3,
    max_iter: int = 10_000,
    scale: bool = True,
    kind: Optional[FeatureKind] = None,
) -> SvmModel:
    """Train on rows of ``data`` (array or FeatureVectors) with labels in {-1, +1}.

    Features are min-max scaled using training statistics unless ``scale`` is
    False. Non-convergence within ``max_iter`` SMO steps emits a
    ConvergenceWarning and the model is still returned.
    """
    X, data_kind = _as_matrix(data)
    kind = FeatureKind(kind) if kind is not None else data_kind
    y = np.asarray(labels, dtype=float).ravel()
    if X.shape[0] != y.size:
        raise ValueError(f"{X.shape[0]} samples but {y.size} labels")
    if X.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise ValueError("labels must be -1 or +1")
    if np.unique(y).size < 2:
        raise ValueError("single-class data: both labels must be present")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature values")
    if not C > 0:
        raise ValueError("C must be > 0")

    scaler = MinMaxScaler.fit(X) if scale else MinMaxScaler.identity(X.shape[1])
    Xs = scaler.transform(X)
    K = gram(kernel, Xs, Xs)
    alpha, rho, iterations, converged = _smo(K, y, float(C), float(tol), int(max_iter))
    if not converged:
        warnings.warn(f"SMO did not converge within {max_iter} iterations", ConvergenceWarning, stacklevel=2)
    sv = alpha > 0
    ay = alpha[sv] * y[sv]
    w_norm_sq = float(ay @ K[np.ix_(sv, sv)] @ ay)
    f_train = K[:, sv] @ ay - rho
    return SvmModel(
        support_vectors=Xs[sv],
        alphas=alpha[sv],
        labels=y[sv].astype(int),
        bias=0.0 - rho,
        kernel=kernel,
        C=float(C),
        scaler=scaler,
        w_norm_sq=w_norm_sq,
        feature_kind=kind,
        converged=converged,
        iterations=iterations,
        diagnostics={"alpha_all": alpha, "train_decision": f_train},
    )


def _prepare(m: SvmModel, x) -> np.ndarray:
    if isinstance(x, FeatureVector):
        if m.feature_kind is not None and x.kind is not m.feature_kind:
            raise FeatureKindMismatch(
                f"feature kind mismatch: model expects {m.feature_kind.value}, got {x.kind.value}"
            )
        x = x.values
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if X.shape[1] != m.dim:
        raise ValueError(f"dimension mismatch: model expects {m.dim} features, got {X.shape[1]}")
    return m.scaler.transform(X)


def decision_values(m: SvmModel, X) -> np.ndarray:
    Xs = _prepare(m, X)
    return gram(m.kernel, Xs, m.support_vectors) @ (m.alphas * m.labels) + m.bias


def decision_value(m: SvmModel, x) -> float:
    """``f(x) = sum_i a_i y_i K(x_i, x) + b`` for one sample."""
    return float(decision_values(m, x)[0])


def score(m: SvmModel, x) -> float:
    """Signed distance ``f(x) / ||w||`` to the separating hyperplane."""
    if not m.w_norm_sq > 0:
        raise DegenerateModelError(f"degenerate model: w_norm_sq={m.w_norm_sq!r} is not positive")
    return decision_value(m, x) / float(np.sqrt(m.w_norm_sq))


def predict(m: SvmModel, x) -> int:
    """Sign of ``f(x)``; ties (``f == 0``) go to +1."""
    return 1 if decision_value(m, x) >= 0 else -1
