"""Seeded stand-ins for the private image and risk-factor datasets.

Images are NOT anatomically realistic: a bright ellipse ("head") filled with
a stationary texture (seeded uniform noise smoothed by a separable
exponential kernel) and a dark central ellipse whose size differs between
classes. Stroke-class images may carry bright disk lesions with matching
binary masks.
"""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.ndimage import convolve1d

from .ann import RiskRecord, write_risk_csv
from .imgio import save_pgm
from .util import atomic_write_text

__all__ = [
    "TextureParams",
    "RiskParams",
    "LesionParams",
    "SynthSpec",
    "SynthImage",
    "render_images",
    "gen_images",
    "gen_risk_table",
]

NORMAL, STROKE = "normal", "stroke"


@dataclass(frozen=True)
class TextureParams:
    correlation_length: float
    contrast: float = 28.0
    anisotropy: float = 1.0  # vertical / horizontal correlation length
    ventricle_scale: float = 0.18
    jitter: float = 0.3  # relative per-image spread of correlation length and ventricle size


@dataclass(frozen=True)
class RiskParams:
    bp_mean: float
    bp_sd: float
    chol_mean: float
    chol_sd: float
    age_mean: float
    age_sd: float
    p_af: float
    p_smoker: float
    p_diabetic: float
    p_exercises: float
    p_obese: float
    p_family: float


@dataclass(frozen=True)
class LesionParams:
    radius_range: tuple[int, int] = (2, 4)
    count: int = 1
    intensity: int = 165


DEFAULT_TEXTURES = {
    NORMAL: TextureParams(correlation_length=1.0, ventricle_scale=0.14),
    STROKE: TextureParams(correlation_length=1.5, ventricle_scale=0.22),
}

DEFAULT_RISK = {
    NORMAL: RiskParams(122, 12, 185, 25, 46, 12, 0.03, 0.15, 0.08, 0.65, 0.12, 0.10),
    STROKE: RiskParams(158, 16, 235, 32, 67, 9, 0.35, 0.50, 0.40, 0.25, 0.45, 0.40),
}


@dataclass(frozen=True)
class SynthSpec:
    n_per_class: int = 15
    image_size: tuple[int, int] = (64, 64)  # (w, h)
    texture_params: dict = field(default_factory=lambda: dict(DEFAULT_TEXTURES))
    risk_params: dict = field(default_factory=lambda: dict(DEFAULT_RISK))
    lesion: Optional[LesionParams] = field(default_factory=LesionParams)
    seed: int = 42

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")
        w, h = self.image_size
        if w < 8 or h < 8:
            raise ValueError("image_size must be at least 8x8")
        if set(self.texture_params) != {NORMAL, STROKE} or set(self.risk_params) != {NORMAL, STROKE}:
            raise ValueError("texture and risk parameters must be given for both classes")
        if self.texture_params[NORMAL] == self.texture_params[STROKE]:
            raise ValueError("class texture parameters must differ")
        if self.risk_params[NORMAL] == self.risk_params[STROKE]:
            raise ValueError("class risk parameters must differ")
        if self.lesion is not None:
            lo, hi = self.lesion.radius_range
            if lo < 1 or hi < lo:
                raise ValueError("invalid lesion radius range")
            if 2 * hi + 1 > min(w, h):
                raise ValueError("lesion larger than image")
            area = self.lesion.count * np.pi * hi * hi
            if area >= 0.3 * w * h:
                raise ValueError("lesions would cover >= 30% of the image")


@dataclass(frozen=True)
class SynthImage:
    sample_id: str
    label: str
    pixels: np.ndarray
    lesion: Optional[np.ndarray]


def _exp_kernel(length: float) -> np.ndarray:
    radius = max(1, int(np.ceil(4 * length)))
    t = np.arange(-radius, radius + 1)
    k = np.exp(-np.abs(t) / length)
    return k / k.sum()


def _texture(rng: np.random.Generator, shape: tuple[int, int], lx: float, ly: float) -> np.ndarray:
    field_ = rng.random(shape)
    field_ = convolve1d(field_, _exp_kernel(lx), axis=1, mode="wrap")
    field_ = convolve1d(field_, _exp_kernel(ly), axis=0, mode="wrap")
    return (field_ - field_.mean()) / field_.std()


def _render_one(rng: np.random.Generator, spec: SynthSpec, label: str):
    w, h = spec.image_size
    tp: TextureParams = spec.texture_params[label]
    jitter = lambda: 1.0 + tp.jitter * rng.uniform(-1, 1)
    lx = tp.correlation_length * jitter()
    z = _texture(rng, (h, w), lx, lx * tp.anisotropy)
    rows, cols = np.indices((h, w))
    cy, cx = (h - 1) / 2, (w - 1) / 2
    head = ((rows - cy) / (0.45 * h)) ** 2 + ((cols - cx) / (0.40 * w)) ** 2 <= 1.0
    vs = tp.ventricle_scale * jitter()
    ventricle = ((rows - cy) / (vs * h)) ** 2 + ((cols - cx) / (0.6 * vs * w)) ** 2 <= 1.0
    img = np.full((h, w), 12.0)
    img[head] = 130.0 + tp.contrast * z[head]
    img[ventricle] = 45.0 + 0.5 * tp.contrast * z[ventricle]
    lesion = None
    if spec.lesion is not None and label == STROKE:
        lesion = np.zeros((h, w), dtype=bool)
        lo, hi = spec.lesion.radius_range
        for _ in range(spec.lesion.count):
            r = int(rng.integers(lo, hi + 1))
            yc = int(rng.integers(r, h - r))
            xc = int(rng.integers(r, w - r))
            lesion |= (rows - yc) ** 2 + (cols - xc) ** 2 <= r * r
        img[lesion] = spec.lesion.intensity + 0.3 * tp.contrast * z[lesion]
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return pixels, lesion


def render_images(spec: SynthSpec) -> list[SynthImage]:
    """In-memory corpus: normals first, then strokes; ids ``s001``..."""
    out = []
    labels = [NORMAL] * spec.n_per_class + [STROKE] * spec.n_per_class
    for idx, label in enumerate(labels):
        # per-item derived stream so items are independent of generation order
        rng = np.random.default_rng([spec.seed, idx])
        pixels, lesion = _render_one(rng, spec, label)
        out.append(SynthImage(f"s{idx + 1:03d}", label, pixels, lesion))
    return out


def gen_images(spec: SynthSpec, out_dir: Union[str, os.PathLike]) -> Path:
    """Write PGM images, PGM lesion masks and ``manifest.csv``; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "image_path", "mask_path", "label"])
    for item in render_images(spec):
        image_rel = f"images/{item.sample_id}.pgm"
        save_pgm(out_dir / image_rel, item.pixels)
        mask_rel = ""
        if item.lesion is not None:
            mask_rel = f"masks/{item.sample_id}_mask.pgm"
            save_pgm(out_dir / mask_rel, item.lesion.astype(np.uint8) * 255)
        writer.writerow([item.sample_id, image_rel, mask_rel, item.label])
    manifest = out_dir / "manifest.csv"
    atomic_write_text(manifest, buf.getvalue())
    return manifest


def _draw(rng: np.random.Generator, rp: RiskParams, label: str) -> RiskRecord:
    bern = lambda p: int(rng.random() < p)
    bp = float(np.clip(np.rint(rng.normal(rp.bp_mean, rp.bp_sd)), 60, 300))
    chol = float(np.clip(np.rint(rng.normal(rp.chol_mean, rp.chol_sd)), 50, 500))
    age = float(np.clip(np.rint(rng.normal(rp.age_mean, rp.age_sd)), 18, 100))
    return RiskRecord(
        systolic_bp=bp,
        atrial_fibrillation=bern(rp.p_af),
        smoker=bern(rp.p_smoker),
        cholesterol=chol,
        diabetic=bern(rp.p_diabetic),
        exercises=bern(rp.p_exercises),
        obese=bern(rp.p_obese),
        family_history=bern(rp.p_family),
        age=age,
        label="stroke" if label == STROKE else "no-stroke",
    )


def gen_risk_table(spec: SynthSpec) -> list[RiskRecord]:
    """``n_per_class`` stroke records followed by ``n_per_class`` normal records."""
    records = []
    labels = [STROKE] * spec.n_per_class + [NORMAL] * spec.n_per_class
    for idx, label in enumerate(labels):
        rng = np.random.default_rng([spec.seed, 1_000_003, idx])
        records.append(_draw(rng, spec.risk_params[label], label))
    return records


def write_risk_table(spec: SynthSpec, path: Union[str, os.PathLike]) -> Path:
    write_risk_csv(path, gen_risk_table(spec))
    return Path(path)
