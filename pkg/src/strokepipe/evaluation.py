"""Confusion matrices, SN/SP/AC metrics and the leave-one-out harness.

Stroke is the positive class (+1) throughout; normal is -1.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import ann as ann_mod
from . import nmf as nmf_mod
from .glcm import EmptyCooccurrenceError
from .fusion import FusedModel, fuse_predict
from .haralick import FeatureKind, FeatureVector, concatenate, feature_vector_28
from .imgio import GrayImage, load_image, normalize_intensity, quantize, resample, with_lesions
from .svm import DegenerateModelError, KernelSpec, SvmModel, decision_value, score, train
from .util import dumps_json, thread_cap

__all__ = [
    "ConfusionMatrix",
    "Metrics",
    "metrics",
    "format_pct",
    "Sample",
    "read_manifest",
    "Pipeline",
    "PipelineConfig",
    "FoldModels",
    "SampleResult",
    "EvalReport",
    "preprocess",
    "haralick_features",
    "train_fold",
    "predict_sample",
    "loocv",
]

POSITIVE, NEGATIVE = 1, -1


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_labels(cls, truth: Sequence[int], predicted: Sequence[int]) -> "ConfusionMatrix":
        tp = tn = fp = fn = 0
        for t, p in zip(truth, predicted, strict=True):
            if t == POSITIVE:
                tp, fn = (tp + 1, fn) if p == POSITIVE else (tp, fn + 1)
            else:
                fp, tn = (fp + 1, tn) if p == POSITIVE else (fp, tn + 1)
        return cls(tp, tn, fp, fn)


@dataclass(frozen=True)
class Metrics:
    """Percentages; ``None`` where the denominator is zero."""

    sn: Optional[float]
    sp: Optional[float]
    ac: Optional[float]


def metrics(c: ConfusionMatrix) -> Metrics:
    def pct(num, den):
        return None if den == 0 else 100.0 * num / den

    return Metrics(pct(c.tp, c.tp + c.fn), pct(c.tn, c.tn + c.fp), pct(c.tp + c.tn, c.total))


def format_pct(value: Optional[float]) -> str:
    """Half-up rounding to 2 decimals for display; ``undefined`` for None."""
    if value is None:
        return "undefined"
    return str(Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    sample_id: str
    image: GrayImage
    label: int
    lesion: Optional[np.ndarray] = None


def parse_label(raw: str) -> int:
    v = str(raw).strip().lower()
    if v in ("stroke", "1", "+1", "positive"):
        return POSITIVE
    if v in ("normal", "non-stroke", "no-stroke", "0", "-1", "negative"):
        return NEGATIVE
    raise ValueError(f"unrecognized label {raw!r}")


def label_name(label: int) -> str:
    return "stroke" if label == POSITIVE else "normal"


class ManifestError(ValueError):
    def __init__(self, message: str, sample_id: Optional[str] = None):
        super().__init__(message)
        self.sample_id = sample_id


def read_manifest(path: Union[str, os.PathLike]) -> list[Sample]:
    """Load ``id,image_path,mask_path,label`` rows; paths resolve against the manifest's directory."""
    path = Path(path)
    base = path.parent
    samples = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"id", "image_path", "label"}
        if not required <= set(reader.fieldnames or ()):
            raise ManifestError(f"{path}: manifest needs columns {sorted(required)}")
        for row in reader:
            sid = row["id"]
            try:
                img = load_image(base / row["image_path"])
                lesion = None
                if row.get("mask_path"):
                    raw = load_image(base / row["mask_path"]).pixels
                    if raw.shape != img.shape:
                        raise ValueError(f"mask dimensions {raw.shape} do not match image {img.shape}")
                    if np.unique(raw[raw != 0]).size > 1:
                        raise ValueError("non-binary mask")
                    lesion = raw != 0
                samples.append(Sample(sid, img, parse_label(row["label"]), lesion))
            except ValueError as exc:
                raise ManifestError(f"sample {sid}: {exc}", sid) from exc
    return samples


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


class Pipeline(str, Enum):
    HARALICK = "haralick"
    NMF = "nmf"
    CONCATENATED = "concatenated"
    MULTILEVEL = "multilevel"
    TIER1 = "tier1"
    TIER2 = "tier2"


@dataclass(frozen=True)
class PipelineConfig:
    bpp: int = 4
    resize: tuple[int, int] = (64, 64)
    top_fraction: float = 0.001
    distance: int = 1
    C: float = 1.0
    svm_tol: float = 1e-3
    svm_max_iter: int = 10_000
    haralick_kernel: KernelSpec = KernelSpec.linear()
    nmf_kernel: KernelSpec = KernelSpec.linear()
    concat_kernel: KernelSpec = KernelSpec.linear()
    tier2_kernel: KernelSpec = KernelSpec.linear()
    nmf_k: int = 14
    nmf_iters: int = 500
    nmf_tol: float = 1e-5
    seed: int = 42
    lm: ann_mod.LmConfig = ann_mod.LmConfig()

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("haralick_kernel", "nmf_kernel", "concat_kernel", "tier2_kernel"):
            d[key] = getattr(self, key).to_dict()
        d["resize"] = list(self.resize)
        d["lm"]["layer_sizes"] = list(self.lm.layer_sizes)
        return d


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------


def preprocess(sample: Sample, cfg: PipelineConfig, masked: bool = False) -> tuple[GrayImage, GrayImage]:
    """Returns ``(texture_image, nmf_image)``.

    Intensity normalization, then nearest-neighbour resampling; the texture
    image is further quantized to ``cfg.bpp`` bits and carries the lesion
    mask when ``masked``.
    """
    img = sample.image
    if masked and sample.lesion is not None:
        img = with_lesions(img, sample.lesion)
    img = normalize_intensity(img, cfg.top_fraction)
    w, h = cfg.resize
    img = resample(img, w, h)
    return quantize(img, cfg.bpp), img


def haralick_features(sample: Sample, cfg: PipelineConfig, masked: bool = False) -> FeatureVector:
    tex, _ = preprocess(sample, cfg, masked)
    try:
        return feature_vector_28(tex, sample.sample_id, cfg.distance)
    except EmptyCooccurrenceError as exc:
        raise EmptyCooccurrenceError(f"sample {sample.sample_id}: {exc}") from exc


def _nmf_config(cfg: PipelineConfig) -> nmf_mod.NmfConfig:
    return nmf_mod.NmfConfig(k=cfg.nmf_k, max_iters=cfg.nmf_iters, tol=cfg.nmf_tol, seed=cfg.seed)


def nmf_column(sample: Sample, cfg: PipelineConfig) -> np.ndarray:
    _, img = preprocess(sample, cfg, masked=False)
    return nmf_mod.build_data_matrix([img])[:, 0]


def fit_nmf(samples: Sequence[Sample], cfg: PipelineConfig) -> tuple[nmf_mod.NmfModel, list[FeatureVector]]:
    A = np.column_stack([nmf_column(s, cfg) for s in samples])
    w, h = cfg.resize
    model, H = nmf_mod.factorize(A, _nmf_config(cfg), image_shape=(w, h))
    return model, [FeatureVector(H[:, j], FeatureKind.NMF14, s.sample_id) for j, s in enumerate(samples)]


def nmf_features(model: nmf_mod.NmfModel, sample: Sample, cfg: PipelineConfig) -> FeatureVector:
    h = nmf_mod.project(model, nmf_column(sample, cfg), seed=cfg.seed)
    return FeatureVector(h, FeatureKind.NMF14, sample.sample_id)


# ---------------------------------------------------------------------------
# Folds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldModels:
    pipeline: Pipeline
    haralick: Optional[SvmModel] = None
    nmf_basis: Optional[nmf_mod.NmfModel] = None
    nmf: Optional[SvmModel] = None
    concat: Optional[SvmModel] = None
    ann: Optional[ann_mod.AnnModel] = None

    def to_dict(self) -> dict:
        d = {"pipeline": self.pipeline.value}
        for name in ("haralick", "nmf_basis", "nmf", "concat", "ann"):
            part = getattr(self, name)
            if part is not None:
                d[name] = part.to_dict()
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class SampleResult:
    sample_id: str
    truth: int
    predicted: int
    chosen: Optional[str] = None
    scores: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "id": self.sample_id,
            "truth": label_name(self.truth),
            "predicted": label_name(self.predicted),
            "chosen_model": self.chosen,
            "scores": self.scores,
        }


def _svm(features: Sequence[FeatureVector], labels, kernel: KernelSpec, cfg: PipelineConfig) -> SvmModel:
    return train(features, labels, kernel, C=cfg.C, tol=cfg.svm_tol, max_iter=cfg.svm_max_iter)


def _check_classes(labels: Sequence[int], where: str) -> None:
    if len(set(labels)) < 2:
        raise ValueError(f"class absent in {where}")


def train_fold(
    train_samples: Sequence,
    pipeline: Pipeline,
    cfg: PipelineConfig,
    haralick_cache: Optional[dict] = None,
) -> FoldModels:
    """Fit every model the pipeline needs using only ``train_samples``.

    ``haralick_cache`` maps sample id to its unmasked texture vector; texture
    vectors depend only on their own image, so sharing them across folds does
    not leak.
    """
    pipeline = Pipeline(pipeline)
    if pipeline is Pipeline.TIER1:
        return FoldModels(pipeline, ann=ann_mod.train_lm(list(train_samples), cfg.lm))
    labels = [s.label for s in train_samples]
    _check_classes(labels, "training fold")

    def texture(s):
        if haralick_cache is not None and s.sample_id in haralick_cache:
            return haralick_cache[s.sample_id]
        return haralick_features(s, cfg)

    models = {}
    if pipeline in (Pipeline.HARALICK, Pipeline.CONCATENATED, Pipeline.MULTILEVEL, Pipeline.TIER2):
        tex = [texture(s) for s in train_samples]
    if pipeline in (Pipeline.NMF, Pipeline.CONCATENATED, Pipeline.MULTILEVEL):
        basis, coeffs = fit_nmf(train_samples, cfg)
        models["nmf_basis"] = basis
    if pipeline in (Pipeline.HARALICK, Pipeline.MULTILEVEL):
        models["haralick"] = _svm(tex, labels, cfg.haralick_kernel, cfg)
    if pipeline is Pipeline.TIER2:
        models["haralick"] = _svm(tex, labels, cfg.tier2_kernel, cfg)
    if pipeline in (Pipeline.NMF, Pipeline.MULTILEVEL):
        models["nmf"] = _svm(coeffs, labels, cfg.nmf_kernel, cfg)
    if pipeline is Pipeline.CONCATENATED:
        joint = [concatenate([a, b]) for a, b in zip(tex, coeffs)]
        models["concat"] = _svm(joint, labels, cfg.concat_kernel, cfg)
    return FoldModels(pipeline, **models)


def _svm_scores(model: SvmModel, x: FeatureVector) -> dict:
    f = decision_value(model, x)
    try:
        s = score(model, x)
    except DegenerateModelError:
        s = None
    return {"decision": f, "score": s}


def predict_sample(models: FoldModels, sample, cfg: PipelineConfig, haralick_cache: Optional[dict] = None) -> SampleResult:
    p = models.pipeline
    if p is Pipeline.TIER1:
        p_stroke, p_normal = ann_mod.forward(models.ann, sample)
        pred = POSITIVE if p_stroke >= p_normal else NEGATIVE
        truth = POSITIVE if sample.is_stroke else NEGATIVE
        return SampleResult(getattr(sample, "sample_id", ""), truth, pred, None,
                            {"p_stroke": p_stroke, "p_normal": p_normal})

    def texture(masked=False):
        if not masked and haralick_cache is not None and sample.sample_id in haralick_cache:
            return haralick_cache[sample.sample_id]
        return haralick_features(sample, cfg, masked)

    if p is Pipeline.HARALICK or p is Pipeline.TIER2:
        x = texture(masked=p is Pipeline.TIER2)
        sc = _svm_scores(models.haralick, x)
        return SampleResult(sample.sample_id, sample.label, 1 if sc["decision"] >= 0 else -1, None, {"haralick": sc})
    if p is Pipeline.NMF:
        sc = _svm_scores(models.nmf, nmf_features(models.nmf_basis, sample, cfg))
        return SampleResult(sample.sample_id, sample.label, 1 if sc["decision"] >= 0 else -1, None, {"nmf": sc})
    if p is Pipeline.CONCATENATED:
        x = concatenate([texture(), nmf_features(models.nmf_basis, sample, cfg)])
        sc = _svm_scores(models.concat, x)
        return SampleResult(sample.sample_id, sample.label, 1 if sc["decision"] >= 0 else -1, None, {"concatenated": sc})
    fused = FusedModel(models.haralick, models.nmf)
    res = fuse_predict(fused, texture(), nmf_features(models.nmf_basis, sample, cfg))
    return SampleResult(
        sample.sample_id,
        sample.label,
        res.label,
        "haralick" if res.chosen == "A" else "nmf",
        {"haralick": res.score_a, "nmf": res.score_b},
    )


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    pipeline: Pipeline
    confusion: ConfusionMatrix
    per_sample: tuple[SampleResult, ...]
    config: dict = field(default_factory=dict)

    @property
    def metrics(self) -> Metrics:
        return metrics(self.confusion)

    @property
    def sn(self):
        return self.metrics.sn

    @property
    def sp(self):
        return self.metrics.sp

    @property
    def ac(self):
        return self.metrics.ac

    def to_dict(self) -> dict:
        m = self.metrics
        return {
            "pipeline": self.pipeline.value,
            "n_samples": len(self.per_sample),
            "confusion": asdict(self.confusion),
            "metrics": {"sn": m.sn, "sp": m.sp, "ac": m.ac},
            "metrics_display": {"sn": format_pct(m.sn), "sp": format_pct(m.sp), "ac": format_pct(m.ac)},
            "per_sample": [r.to_dict() for r in self.per_sample],
            "config": self.config,
        }

    def to_json(self) -> str:
        return dumps_json(self.to_dict())

    def to_text(self) -> str:
        c, m = self.confusion, self.metrics
        width = max(len(str(v)) for v in (c.tp, c.tn, c.fp, c.fn, "normal"))
        lines = [
            f"pipeline: {self.pipeline.value}   samples: {c.total}",
            "",
            f"{'':>16}  {'predicted':^{2 * width + 2}}",
            f"{'':>16}  {'stroke':>{width}}  {'normal':>{width}}",
            f"{'actual stroke':>16}  {c.tp:>{width}}  {c.fn:>{width}}",
            f"{'actual normal':>16}  {c.fp:>{width}}  {c.tn:>{width}}",
            "",
            f"SN = {format_pct(m.sn)}%   SP = {format_pct(m.sp)}%   AC = {format_pct(m.ac)}%",
        ]
        return "\n".join(lines) + "\n"


def _validate(dataset: Sequence, pipeline: Pipeline) -> None:
    if pipeline is Pipeline.TIER1:
        labels = [r.label for r in dataset]
        counts = {lab: labels.count(lab) for lab in ("stroke", "no-stroke")}
    else:
        labels = [s.label for s in dataset]
        counts = {lab: labels.count(lab) for lab in (POSITIVE, NEGATIVE)}
    if min(counts.values()) < 2:
        raise ValueError(f"LOOCV needs at least 2 samples per class, got {counts}")


def loocv(
    dataset,
    pipeline: Union[Pipeline, str],
    cfg: PipelineConfig = PipelineConfig(),
    threads: Optional[int] = None,
) -> EvalReport:
    """Leave-one-out evaluation; every model (scalers, NMF basis) is refit per fold.

    ``dataset`` is a list of Samples (or RiskRecords for tier1), or a path to a
    manifest / risk CSV. Tier-2 trains on unmasked images and tests the
    held-out image with its lesion mask applied.
    """
    pipeline = Pipeline(pipeline)
    if isinstance(dataset, (str, os.PathLike)):
        dataset = ann_mod.read_risk_csv(dataset) if pipeline is Pipeline.TIER1 else read_manifest(dataset)
    dataset = list(dataset)
    if pipeline is Pipeline.TIER1:
        dataset = [
            r if getattr(r, "sample_id", None) else _IdRecord(r, f"r{i + 1:03d}") for i, r in enumerate(dataset)
        ]
    _validate(dataset, pipeline)
    workers = thread_cap(threads)

    cache = None
    if pipeline in (Pipeline.HARALICK, Pipeline.CONCATENATED, Pipeline.MULTILEVEL, Pipeline.TIER2):
        with ThreadPoolExecutor(max_workers=workers) as pool:
            vectors = list(pool.map(lambda s: haralick_features(s, cfg), dataset))
        cache = {v.source_id: v for v in vectors}

    def run_fold(i: int) -> SampleResult:
        held = dataset[i]
        rest = dataset[:i] + dataset[i + 1:]
        models = train_fold([getattr(r, "record", r) for r in rest], pipeline, cfg, cache)
        if pipeline is Pipeline.TIER1:
            res = predict_sample(models, held.record, cfg)
            return SampleResult(held.sample_id, res.truth, res.predicted, None, res.scores)
        return predict_sample(models, held, cfg, cache)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = tuple(pool.map(run_fold, range(len(dataset))))
    confusion = ConfusionMatrix.from_labels([r.truth for r in results], [r.predicted for r in results])
    return EvalReport(pipeline, confusion, results, cfg.to_dict())


@dataclass(frozen=True)
class _IdRecord:
    record: ann_mod.RiskRecord
    sample_id: str

    @property
    def label(self):
        return self.record.label
