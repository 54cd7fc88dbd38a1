"""``strokepipe`` command line: synth, extract, train, predict, loocv, tier1, tier2.

Every subcommand writes its outputs atomically plus a ``*.config.json`` echo of
the resolved settings. Failures print a JSON object on stderr and exit 1.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from . import ann as ann_mod
from . import nmf as nmf_mod
from .evaluation import (
    ManifestError,
    Pipeline,
    PipelineConfig,
    fit_nmf,
    haralick_features,
    label_name,
    loocv,
    nmf_features,
    read_manifest,
    train_fold,
)
from .glcm import EmptyCooccurrenceError
from .haralick import FeatureKind, read_feature_csv, write_feature_csv
from .svm import DegenerateModelError, FeatureKindMismatch, KernelSpec, SvmModel, decision_value, score, train
from .synth import SynthSpec, gen_images, write_risk_table
from .util import atomic_write_text, dumps_json, write_json

EXIT_OK, EXIT_ERROR = 0, 1


class CliError(Exception):
    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = context


# ---------------------------------------------------------------------------
# argument helpers
# ---------------------------------------------------------------------------


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("width and height must be positive")
    return w, h


def _pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a,b, got {text!r}") from None
    return a, b


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def _kernel(kind: str, sigma: float, mlp: tuple[float, float]) -> KernelSpec:
    if kind == "rbf":
        return KernelSpec.rbf(sigma)
    if kind == "mlp":
        return KernelSpec.mlp(*mlp)
    return KernelSpec.linear()


def _add_kernel_flags(p: argparse.ArgumentParser, nmf_level: bool = False) -> None:
    g = p.add_argument_group("SVM")
    g.add_argument("--kernel", choices=("linear", "rbf", "mlp"), default="linear")
    g.add_argument("--rbf-sigma", type=_positive_float, default=60.0)
    g.add_argument("--mlp-params", type=_pair, default=(1.0, -2.54), metavar="A,B")
    g.add_argument("--C", dest="C", type=_positive_float, default=1.0)
    g.add_argument("--svm-tol", type=_positive_float, default=1e-3)
    if nmf_level:
        g.add_argument("--nmf-kernel", choices=("linear", "rbf", "mlp"), default=None,
                       help="kernel of the NMF-level model (default: --kernel)")
        g.add_argument("--nmf-rbf-sigma", type=_positive_float, default=None)
        g.add_argument("--nmf-mlp-params", type=_pair, default=None, metavar="A,B")


def _add_image_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("preprocessing / NMF")
    g.add_argument("--bpp", type=int, choices=range(1, 9), default=4, metavar="{1..8}")
    g.add_argument("--resize", type=_size, default=(64, 64), metavar="WxH")
    g.add_argument("--distance", type=int, default=1)
    g.add_argument("--nmf-k", type=int, default=14)
    g.add_argument("--nmf-iters", type=int, default=500)
    g.add_argument("--nmf-tol", type=_positive_float, default=1e-5)


def _add_lm_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("Levenberg-Marquardt")
    g.add_argument("--mu0", type=_positive_float, default=0.1)
    g.add_argument("--mu-dec", type=_positive_float, default=0.5)
    g.add_argument("--mu-inc", type=_positive_float, default=10.0)
    g.add_argument("--max-epochs", type=int, default=1000)
    g.add_argument("--goal", type=float, default=0.0, help="stop once training MSE <= goal")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--threads", type=int, default=None, help="worker cap (STROKEPIPE_THREADS wins)")


def _pipeline_config(args) -> PipelineConfig:
    kw = {}
    if hasattr(args, "bpp"):
        kw.update(bpp=args.bpp, resize=tuple(args.resize), distance=args.distance,
                  nmf_k=args.nmf_k, nmf_iters=args.nmf_iters, nmf_tol=args.nmf_tol)
    if hasattr(args, "kernel"):
        k = _kernel(args.kernel, args.rbf_sigma, args.mlp_params)
        nk = k
        if getattr(args, "nmf_kernel", None) is not None or getattr(args, "nmf_rbf_sigma", None) is not None \
                or getattr(args, "nmf_mlp_params", None) is not None:
            nk = _kernel(args.nmf_kernel or args.kernel, args.nmf_rbf_sigma or args.rbf_sigma,
                         args.nmf_mlp_params or args.mlp_params)
        kw.update(C=args.C, svm_tol=args.svm_tol, haralick_kernel=k, nmf_kernel=nk, concat_kernel=k, tier2_kernel=k)
    if hasattr(args, "mu0"):
        kw["lm"] = ann_mod.LmConfig(mu0=args.mu0, mu_dec=args.mu_dec, mu_inc=args.mu_inc,
                                    max_epochs=args.max_epochs, goal_mse=args.goal, seed=args.seed)
    return PipelineConfig(seed=args.seed, **kw)


def _echo(path: Path, args, cfg: Optional[PipelineConfig] = None) -> None:
    settings = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items() if k != "func"}
    echo = {"command": args.command, "version": __version__, "args": settings}
    if cfg is not None:
        echo["pipeline_config"] = cfg.to_dict()
    write_json(path, echo)


def _config_path(out: Path) -> Path:
    return out / "config.json" if out.suffix == "" else out.with_name(out.name + ".config.json")


def _load_manifest(path) -> list:
    if not Path(path).is_file():
        raise CliError(f"manifest not found: {path}", path=str(path))
    return read_manifest(path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> dict:
    w, h = args.size
    spec = SynthSpec(n_per_class=args.n_per_class, image_size=(w, h), seed=args.seed)
    out = Path(args.out)
    manifest = gen_images(spec, out)
    risk = write_risk_table(spec, out / "risk.csv")
    _echo(out / "config.json", args)
    return {"manifest": str(manifest), "risk": str(risk)}


def cmd_extract(args) -> dict:
    cfg = _pipeline_config(args)
    samples = _load_manifest(args.manifest)
    out = Path(args.out)
    result = {"features": str(out), "rows": len(samples)}
    if args.feature == FeatureKind.HARALICK28.value:
        vectors = [haralick_features(s, cfg, masked=args.masked) for s in samples]
    else:
        if args.nmf_basis:
            basis = nmf_mod.NmfModel.load(args.nmf_basis)
            vectors = [nmf_features(basis, s, cfg) for s in samples]
        else:
            basis, vectors = fit_nmf(samples, cfg)
            basis_path = out.with_name(out.stem + ".basis.json")
            basis.save(basis_path)
            result["basis"] = str(basis_path)
    write_feature_csv(out, vectors)
    _echo(_config_path(out), args, cfg)
    return result


def _labels_by_id(manifest) -> dict:
    return {s.sample_id: s.label for s in _load_manifest(manifest)}


def cmd_train(args) -> dict:
    vectors = read_feature_csv(args.features)
    labels = _labels_by_id(args.manifest)
    missing = [v.source_id for v in vectors if v.source_id not in labels]
    if missing:
        raise CliError(f"no label for sample {missing[0]}", sample_id=missing[0])
    kernel = _kernel(args.kernel, args.rbf_sigma, args.mlp_params)
    model = train(vectors, [labels[v.source_id] for v in vectors], kernel, C=args.C, tol=args.svm_tol)
    out = Path(args.out)
    model.save(out)
    _echo(_config_path(out), args)
    return {"model": str(out), "support_vectors": int(model.alphas.size)}


def cmd_predict(args) -> dict:
    model = SvmModel.load(args.model)
    vectors = read_feature_csv(args.features)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "decision", "score", "predicted"])
    for v in vectors:
        f = decision_value(model, v)
        try:
            s = repr(score(model, v))
        except DegenerateModelError:
            s = ""
        writer.writerow([v.source_id, repr(f), s, label_name(1 if f >= 0 else -1)])
    out = Path(args.out)
    atomic_write_text(out, buf.getvalue())
    _echo(_config_path(out), args)
    return {"predictions": str(out), "rows": len(vectors)}


def _write_report(out: Path, report) -> None:
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "report.json", report.to_json())
    atomic_write_text(out / "report.txt", report.to_text())


def cmd_loocv(args) -> dict:
    cfg = _pipeline_config(args)
    samples = _load_manifest(args.manifest)
    report = loocv(samples, args.pipeline, cfg, threads=args.threads)
    out = Path(args.out)
    _write_report(out, report)
    _echo(out / "config.json", args, cfg)
    return {"report": str(out / "report.json"), "ac": report.ac}


def cmd_tier1(args) -> dict:
    cfg = _pipeline_config(args)
    if not Path(args.risk).is_file():
        raise CliError(f"risk table not found: {args.risk}", path=str(args.risk))
    records = ann_mod.read_risk_csv(args.risk)
    report = loocv(records, Pipeline.TIER1, cfg, threads=args.threads)
    model = ann_mod.train_lm(records, cfg.lm)
    out = Path(args.out)
    _write_report(out, report)
    model.save(out / "ann_model.json")
    _echo(out / "config.json", args, cfg)
    return {"report": str(out / "report.json"), "model": str(out / "ann_model.json"), "ac": report.ac}


def cmd_tier2(args) -> dict:
    cfg = _pipeline_config(args)
    samples = _load_manifest(args.manifest)
    if not any(s.lesion is not None for s in samples):
        raise CliError("tier2 needs lesion masks in the manifest", path=str(args.manifest))
    report = loocv(samples, Pipeline.TIER2, cfg, threads=args.threads)
    models = train_fold(samples, Pipeline.TIER2, cfg)
    out = Path(args.out)
    _write_report(out, report)
    models.haralick.save(out / "svm_model.json")
    _echo(out / "config.json", args, cfg)
    return {"report": str(out / "report.json"), "model": str(out / "svm_model.json"), "ac": report.ac}


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="strokepipe", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic image corpus and risk table")
    p.add_argument("--out", required=True)
    p.add_argument("--n-per-class", type=int, default=15)
    p.add_argument("--size", type=_size, default=(64, 64), metavar="WxH")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="write a feature CSV for every manifest sample")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--feature", choices=(FeatureKind.HARALICK28.value, FeatureKind.NMF14.value), default="haralick28")
    p.add_argument("--nmf-basis", default=None, help="fitted basis JSON; fit on the manifest when omitted")
    p.add_argument("--masked", action="store_true", help="apply lesion masks before texture extraction")
    _add_image_flags(p)
    _common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train an SVM on a feature CSV")
    p.add_argument("--features", required=True)
    p.add_argument("--manifest", required=True, help="source of labels, matched by id")
    p.add_argument("--out", required=True)
    _add_kernel_flags(p)
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score a feature CSV with a trained SVM")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("loocv", help="leave-one-out evaluation of an image pipeline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pipeline", choices=[x.value for x in Pipeline if x not in (Pipeline.TIER1, Pipeline.TIER2)],
                   default="multilevel")
    _add_image_flags(p)
    _add_kernel_flags(p, nmf_level=True)
    _common(p)
    p.set_defaults(func=cmd_loocv)

    p = sub.add_parser("tier1", help="LOOCV and final model for the risk-factor network")
    p.add_argument("--risk", required=True)
    p.add_argument("--out", required=True)
    _add_lm_flags(p)
    _common(p)
    p.set_defaults(func=cmd_tier1)

    p = sub.add_parser("tier2", help="train on unmasked images, test on lesion-masked images")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_image_flags(p)
    _add_kernel_flags(p)
    _common(p)
    p.set_defaults(func=cmd_tier2)
    return parser


def _error_payload(exc: BaseException) -> dict:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, CliError):
        payload.update(exc.context)
    if isinstance(exc, ManifestError) and exc.sample_id is not None:
        payload["sample_id"] = exc.sample_id
    if isinstance(exc, OSError) and exc.filename is not None:
        payload["path"] = str(exc.filename)
    return payload


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = args.func(args)
    except (CliError, ValueError, OSError, KeyError, FeatureKindMismatch, EmptyCooccurrenceError) as exc:
        sys.stderr.write(json.dumps(_error_payload(exc), sort_keys=True) + "\n")
        return EXIT_ERROR
    sys.stdout.write(dumps_json(result))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
