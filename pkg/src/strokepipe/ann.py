"""Tier-1 risk network: one-hidden-layer sigmoid net trained by Levenberg-Marquardt.

Weights are packed into one parameter vector ``[W1.ravel(), W2.ravel()]``
where ``W1`` is ``(hidden, inputs + 1)`` and ``W2`` is ``(outputs, hidden + 1)``;
the last column of each holds the bias.
"""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .util import atomic_write_text, read_json, write_json

__all__ = [
    "RISK_FIELDS",
    "RiskRecord",
    "InputScaler",
    "ScaledInputs",
    "LmConfig",
    "LmResult",
    "AnnModel",
    "forward",
    "forward_arrays",
    "jacobian",
    "fit_network",
    "train_lm",
    "read_risk_csv",
    "write_risk_csv",
]

RISK_FIELDS = (
    "systolic_bp",
    "atrial_fibrillation",
    "smoker",
    "cholesterol",
    "diabetic",
    "exercises",
    "obese",
    "family_history",
    "age",
)
CONTINUOUS = ("systolic_bp", "cholesterol", "age")
BINARY = tuple(f for f in RISK_FIELDS if f not in CONTINUOUS)
LABELS = ("stroke", "no-stroke")
_RANGES = {"systolic_bp": (60, 300), "cholesterol": (50, 500), "age": (1, 120)}


@dataclass(frozen=True)
class RiskRecord:
    systolic_bp: float
    atrial_fibrillation: int
    smoker: int
    cholesterol: float
    diabetic: int
    exercises: int
    obese: int
    family_history: int
    age: float
    label: Optional[str] = None

    def __post_init__(self):
        for name, (lo, hi) in _RANGES.items():
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"{name} is not finite")
            if not lo <= v <= hi:
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")
        for name in BINARY:
            if getattr(self, name) not in (0, 1):
                raise ValueError(f"{name} must be 0 or 1, got {getattr(self, name)!r}")
        if self.label is not None and self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in RISK_FIELDS], dtype=float)

    @property
    def is_stroke(self) -> bool:
        return self.label == "stroke"


class ScaledInputs(np.ndarray):
    """Marker subclass: rows already passed through an InputScaler."""


@dataclass(frozen=True)
class InputScaler:
    """Min-max scales the continuous fields to [0, 1]; binaries pass through."""

    lo: np.ndarray
    hi: np.ndarray
    columns: tuple[int, ...] = tuple(RISK_FIELDS.index(f) for f in CONTINUOUS)

    @classmethod
    def fit(cls, X: np.ndarray, columns: Optional[Sequence[int]] = None) -> "InputScaler":
        cols = tuple(columns) if columns is not None else tuple(RISK_FIELDS.index(f) for f in CONTINUOUS)
        return cls(X[:, cols].min(axis=0).astype(float), X[:, cols].max(axis=0).astype(float), cols)

    def transform(self, X) -> ScaledInputs:
        if isinstance(X, ScaledInputs):
            raise ValueError("inputs are already scaled; refusing to apply the scaler twice")
        X = np.array(X, dtype=float, copy=True)
        span = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        cols = list(self.columns)
        X[:, cols] = (X[:, cols] - self.lo) / span
        return X.view(ScaledInputs)


@dataclass(frozen=True)
class LmConfig:
    mu0: float = 0.1
    mu_dec: float = 0.5
    mu_inc: float = 10.0
    mu_max: float = 1e10
    max_epochs: int = 1000
    goal_mse: float = 0.0
    seed: int = 42
    layer_sizes: tuple[int, int, int] = (9, 6, 2)
    init_scale: float = 1.0


@dataclass
class LmResult:
    weights: np.ndarray
    mse_history: list[float]
    mu_history: list[float]
    stop_reason: str
    epochs: int

    @property
    def converged(self) -> bool:
        return self.stop_reason in ("goal", "gradient")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def n_params(layer_sizes: Sequence[int]) -> int:
    n_in, n_hid, n_out = layer_sizes
    return n_hid * (n_in + 1) + n_out * (n_hid + 1)


def unpack(w: np.ndarray, layer_sizes: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    n_in, n_hid, n_out = layer_sizes
    split = n_hid * (n_in + 1)
    return w[:split].reshape(n_hid, n_in + 1), w[split:].reshape(n_out, n_hid + 1)


def _layers(w, layer_sizes, X):
    W1, W2 = unpack(w, layer_sizes)
    Xb = np.hstack([X, np.ones((X.shape[0], 1))])
    H = _sigmoid(Xb @ W1.T)
    Hb = np.hstack([H, np.ones((H.shape[0], 1))])
    O = _sigmoid(Hb @ W2.T)
    return Xb, H, Hb, O


def forward_arrays(w: np.ndarray, layer_sizes: Sequence[int], X: np.ndarray) -> np.ndarray:
    """Network outputs, shape ``(n_samples, n_out)``."""
    return _layers(w, layer_sizes, np.atleast_2d(np.asarray(X, dtype=float)))[3]


def jacobian(w: np.ndarray, layer_sizes: Sequence[int], X: np.ndarray) -> np.ndarray:
    """d(outputs)/d(weights); rows ordered sample-major, ``(n * n_out, n_params)``."""
    n_in, n_hid, n_out = layer_sizes
    X = np.atleast_2d(np.asarray(X, dtype=float))
    W1, W2 = unpack(w, layer_sizes)
    Xb, H, Hb, O = _layers(w, layer_sizes, X)
    n = X.shape[0]
    dO = O * (1.0 - O)  # (n, out)
    dH = H * (1.0 - H)  # (n, hid)
    J = np.zeros((n, n_out, n_params(layer_sizes)))
    split = n_hid * (n_in + 1)
    # hidden weights: dO_k/dW1[j, m] = dO_k * W2[k, j] * dH_j * Xb_m
    back = dO[:, :, None] * W2[None, :, :n_hid] * dH[:, None, :]  # (n, out, hid)
    J[:, :, :split] = (back[:, :, :, None] * Xb[:, None, None, :]).reshape(n, n_out, split)
    # output weights: dO_k/dW2[k, m] = dO_k * Hb_m
    for k in range(n_out):
        start = split + k * (n_hid + 1)
        J[:, k, start:start + n_hid + 1] = dO[:, k, None] * Hb
    return J.reshape(n * n_out, -1)


def _init_weights(cfg: LmConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    return rng.uniform(-cfg.init_scale, cfg.init_scale, n_params(cfg.layer_sizes))


def fit_network(X: np.ndarray, T: np.ndarray, cfg: LmConfig = LmConfig(), w0: Optional[np.ndarray] = None) -> LmResult:
    """Levenberg-Marquardt on ``0.5 * ||T - outputs||^2``.

    Each epoch solves ``(J'J + mu I) d = J'e`` and retries with ``mu *= mu_inc``
    until the error drops (then ``mu *= mu_dec``) or ``mu`` exceeds ``mu_max``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T = np.atleast_2d(np.asarray(T, dtype=float))
    sizes = cfg.layer_sizes
    if X.shape[1] != sizes[0] or T.shape[1] != sizes[2] or X.shape[0] != T.shape[0]:
        raise ValueError(f"data shapes {X.shape}/{T.shape} do not match layer sizes {sizes}")
    w = _init_weights(cfg) if w0 is None else np.array(w0, dtype=float, copy=True)
    eye = np.eye(w.size)

    def mse_of(w):
        e = T - forward_arrays(w, sizes, X)
        return float(np.mean(e * e)), e.ravel()

    mse, e = mse_of(w)
    mu = cfg.mu0
    history = [mse]
    mus = [mu]
    reason = "max_epochs"
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        if mse <= cfg.goal_mse:
            reason = "goal"
            epoch -= 1
            break
        J = jacobian(w, sizes, X)
        JtJ = J.T @ J
        Jte = J.T @ e
        if not np.any(Jte):
            reason = "gradient"
            break
        accepted = False
        while mu <= cfg.mu_max:
            step = np.linalg.solve(JtJ + mu * eye, Jte)
            cand = w + step
            cand_mse, cand_e = mse_of(cand)
            if cand_mse < mse:
                w, mse, e = cand, cand_mse, cand_e
                mu *= cfg.mu_dec
                accepted = True
                break
            mu *= cfg.mu_inc
        if not accepted:
            reason = "mu_max"
            break
        history.append(mse)
        mus.append(mu)
    else:
        if mse <= cfg.goal_mse:
            reason = "goal"
    return LmResult(weights=w, mse_history=history, mu_history=mus, stop_reason=reason, epochs=len(history) - 1)


@dataclass(frozen=True)
class AnnModel:
    layer_sizes: tuple[int, int, int]
    weights: np.ndarray
    input_scaler: InputScaler
    training: dict = field(default_factory=dict, compare=False)

    @property
    def W1(self) -> np.ndarray:
        return unpack(self.weights, self.layer_sizes)[0]

    @property
    def W2(self) -> np.ndarray:
        return unpack(self.weights, self.layer_sizes)[1]

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "W1": self.W1.tolist(),
            "W2": self.W2.tolist(),
            "activation": "logistic",
            "outputs": ["p_stroke", "p_normal"],
            "inputs": list(RISK_FIELDS),
            "input_scaler": {
                "columns": list(self.input_scaler.columns),
                "min": self.input_scaler.lo.tolist(),
                "max": self.input_scaler.hi.tolist(),
            },
            "training": self.training,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnnModel":
        W1 = np.asarray(d["W1"], dtype=float)
        W2 = np.asarray(d["W2"], dtype=float)
        sc = d["input_scaler"]
        scaler = InputScaler(np.asarray(sc["min"], dtype=float), np.asarray(sc["max"], dtype=float), tuple(sc["columns"]))
        return cls(tuple(d["layer_sizes"]), np.concatenate([W1.ravel(), W2.ravel()]), scaler, d.get("training", {}))

    def save(self, path: Union[str, os.PathLike]) -> None:
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: Union[str, os.PathLike]) -> "AnnModel":
        return cls.from_dict(read_json(path))


def forward(m: AnnModel, r) -> tuple[float, float]:
    """``(p_stroke, p_normal)`` for one record (or one pre-scaled row)."""
    if isinstance(r, RiskRecord):
        x = m.input_scaler.transform(r.as_array()[None, :])
    elif isinstance(r, ScaledInputs):
        x = r
    else:
        x = m.input_scaler.transform(np.atleast_2d(np.asarray(r, dtype=float)))
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    out = forward_arrays(m.weights, m.layer_sizes, np.asarray(x))[0]
    return float(out[0]), float(out[1])


def predict_label(m: AnnModel, r: RiskRecord) -> str:
    p_stroke, p_normal = forward(m, r)
    return "stroke" if p_stroke >= p_normal else "no-stroke"


def _targets(records: Sequence[RiskRecord]) -> np.ndarray:
    return np.array([[1.0, 0.0] if r.is_stroke else [0.0, 1.0] for r in records])


def train_lm(data: Sequence[RiskRecord], cfg: LmConfig = LmConfig()) -> AnnModel:
    """Fit the scaler and the network on labelled risk records."""
    if len(data) < 2:
        raise ValueError("need at least 2 records")
    if any(r.label is None for r in data):
        raise ValueError("all training records need a label")
    if len({r.label for r in data}) < 2:
        raise ValueError("single-class data: both labels must be present")
    X = np.stack([r.as_array() for r in data])
    scaler = InputScaler.fit(X)
    res = fit_network(np.asarray(scaler.transform(X)), _targets(data), cfg)
    info = {
        "epochs": res.epochs,
        "final_mse": res.mse_history[-1],
        "stop_reason": res.stop_reason,
        "seed": cfg.seed,
        "mu0": cfg.mu0,
        "mu_dec": cfg.mu_dec,
        "mu_inc": cfg.mu_inc,
    }
    return AnnModel(tuple(cfg.layer_sizes), res.weights, scaler, info)


def _parse_label(raw: str) -> str:
    v = raw.strip().lower()
    if v in ("stroke", "1", "+1", "yes"):
        return "stroke"
    if v in ("no-stroke", "normal", "0", "-1", "no", "non-stroke"):
        return "no-stroke"
    raise ValueError(f"unrecognized label {raw!r}")


def read_risk_csv(path: Union[str, os.PathLike]) -> list[RiskRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [f for f in RISK_FIELDS if f not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            try:
                kwargs = {f: (float(row[f]) if f in CONTINUOUS else int(row[f])) for f in RISK_FIELDS}
                label = row.get("label")
                records.append(RiskRecord(**kwargs, label=_parse_label(label) if label else None))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return records


def _fmt(v) -> str:
    f = float(v)
    return str(int(f)) if f.is_integer() else repr(f)


def write_risk_csv(path: Union[str, os.PathLike], records: Sequence[RiskRecord]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([*RISK_FIELDS, "label"])
    for r in records:
        writer.writerow([*(_fmt(getattr(r, f)) for f in RISK_FIELDS), r.label or ""])
    atomic_write_text(path, buf.getvalue())
