"""Multi-level SVM: trust whichever of two models is more confident.

Each model scores a sample by its signed distance to the separating
hyperplane; the model with the larger absolute score decides the label.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from .haralick import FeatureKind, FeatureVector
from .svm import FeatureKindMismatch, SvmModel, score

__all__ = ["FusedModel", "FusionResult", "fuse_scores", "fuse_predict"]


class FusionResult(NamedTuple):
    label: int
    chosen: str
    score_a: float
    score_b: float


@dataclass(frozen=True)
class FusedModel:
    model_a: SvmModel
    model_b: SvmModel
    tie_break: str = "prefer_a"

    def __post_init__(self):
        ka, kb = self.model_a.feature_kind, self.model_b.feature_kind
        if ka is not None and kb is not None and ka is kb:
            raise FeatureKindMismatch(f"fused models must use different feature kinds (both {ka.value})")
        if self.tie_break != "prefer_a":
            raise ValueError(f"unsupported tie_break {self.tie_break!r}")

    def to_dict(self) -> dict:
        return {"model_a": self.model_a.to_dict(), "model_b": self.model_b.to_dict(), "tie_break": self.tie_break}

    @classmethod
    def from_dict(cls, d: dict) -> "FusedModel":
        return cls(SvmModel.from_dict(d["model_a"]), SvmModel.from_dict(d["model_b"]), d.get("tie_break", "prefer_a"))


def _sign(s: float) -> int:
    return 1 if s >= 0 else -1


def fuse_scores(score_a: float, score_b: float) -> tuple[int, str]:
    """``(label, chosen)`` from two normalized scores; exact ties pick A."""
    if abs(score_b) > abs(score_a):
        return _sign(score_b), "B"
    return _sign(score_a), "A"


def _check(model: SvmModel, x: FeatureVector, which: str) -> None:
    if model.feature_kind is not None and FeatureKind(x.kind) is not model.feature_kind:
        raise FeatureKindMismatch(
            f"feature kind mismatch for model {which}: expected {model.feature_kind.value}, got {x.kind.value}"
        )


def fuse_predict(fm: FusedModel, x_a: FeatureVector, x_b: FeatureVector) -> FusionResult:
    _check(fm.model_a, x_a, "A")
    _check(fm.model_b, x_b, "B")
    # degenerate models raise here rather than silently deferring to the other
    s_a = score(fm.model_a, x_a)
    s_b = score(fm.model_b, x_b)
    label, chosen = fuse_scores(s_a, s_b)
    return FusionResult(label, chosen, s_a, s_b)
