"""Acceptance criteria, one test each, at the stated tolerances.

Each test prints ``criterion N: PASS|FAIL - detail`` and the lines are
repeated in the pytest terminal summary.
"""
import hashlib
import itertools
import json
import time

import numpy as np
import pytest

import conftest
from conftest import random_image
from oracles import OFFSETS, brute_haralick, dual_objective, grid_dual_2, grid_dual_4, naive_counts
from strokepipe.ann import LmConfig, fit_network, forward_arrays, jacobian, n_params
from strokepipe.cli import main
from strokepipe.evaluation import ConfusionMatrix, format_pct, metrics
from strokepipe.fusion import fuse_scores
from strokepipe.glcm import DIRECTIONS, compute_glcm, cooccurrence_counts
from strokepipe.haralick import compute_stats
from strokepipe.imgio import GrayImage
from strokepipe.nmf import NmfConfig, factorize
from strokepipe.svm import KernelSpec, decision_value, gram, train


def verdict(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    conftest.ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_criterion_1_haralick_oracle():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        img = random_image(rng, (8, 8), 16)
        for d in DIRECTIONS:
            g = compute_glcm(img, d)
            diff = np.abs(compute_stats(g).as_array() - np.array(brute_haralick(g.p.tolist())))
            worst = max(worst, float(diff.max()))
    elapsed = time.perf_counter() - start
    verdict(1, worst <= 1e-10 and elapsed < 10, f"max |diff| {worst:.2e} over 50 images x 4 directions x 14 stats, "
                                              f"{elapsed:.2f} s")


def test_criterion_2_glcm_correctness():
    rng = np.random.default_rng(2)
    problems = []
    for trial in range(100):
        img = random_image(rng, (8, 8), 16, mask_prob=0.35)
        # masked pixels get garbage values: they must not influence anything
        noisy = GrayImage(np.where(img.mask, img.pixels, rng.integers(0, 16, img.shape)), 16, img.mask)
        for d, off in zip(DIRECTIONS, OFFSETS):
            expected = np.array(naive_counts(img.pixels.tolist(), 16, img.mask.tolist(), off))
            if not expected.sum():
                continue
            g = compute_glcm(img, d)
            if not np.array_equal(cooccurrence_counts(img, d), expected):
                problems.append(f"{trial}/{d.name}: counts")
            if not np.array_equal(g.p, g.p.T) or abs(g.p.sum() - 1) > 1e-12:
                problems.append(f"{trial}/{d.name}: symmetry or sum")
            if not np.array_equal(compute_glcm(noisy, d).p, g.p):
                problems.append(f"{trial}/{d.name}: masked pixels leaked")
    verdict(2, not problems, f"100 masked 8x8 images exact vs naive counter; issues: {problems[:3] or 'none'}")


def test_criterion_3_nmf():
    worst_rise = -np.inf
    for seed in range(20):
        A = np.random.default_rng(seed).random((64, 30))
        model, _ = factorize(A, NmfConfig(k=14, max_iters=500, tol=1e-300, seed=seed))
        worst_rise = max(worst_rise, float(np.diff(model.objective_trace).max()))
    r = np.random.default_rng(3)
    A1 = np.outer(r.random(64), r.random(30))
    m1, h1 = factorize(A1, NmfConfig(k=1, max_iters=500, tol=1e-12))
    rank1 = np.linalg.norm(A1 - m1.V @ h1) / np.linalg.norm(A1)
    D = np.diag([1.0, 2.0, 3.0])
    md, hd = factorize(D, NmfConfig(k=3, max_iters=500))
    diag = np.linalg.norm(D - md.V @ hd) / np.linalg.norm(D)
    ok = worst_rise <= 1e-12 and rank1 < 1e-3 and diag < 1e-6
    verdict(3, ok, f"max objective rise {worst_rise:.2e} (20 seeds x 500 iters), rank-1 rel err {rank1:.2e}, "
                   f"diagonal rel err {diag:.2e}")


def test_criterion_4_svm_dual():
    worst = 0.0
    coords = [-1.5, -0.5, 0.0, 0.7, 2.0]
    kernels = [KernelSpec.linear(), KernelSpec.rbf(0.5), KernelSpec.rbf(2.0)]
    y2 = np.array([-1.0, 1.0])
    for p, q in itertools.combinations(itertools.product(coords, coords), 2):
        X = np.array([p, q], dtype=float)
        for spec, C in itertools.product(kernels, (0.1, 1.0, 10.0)):
            m = train(X, y2, spec, C=C, scale=False, tol=1e-6)
            K = gram(spec, X, X)
            worst = max(worst, abs(dual_objective(m.diagnostics["alpha_all"], y2, K) - grid_dual_2(y2, K, C)))
    r = np.random.default_rng(7)
    for trial in range(20):
        X = r.random((4, 2))
        y = r.permutation([1.0, -1.0, 1.0, -1.0])
        spec, C = kernels[trial % 3], float(r.choice([0.5, 1.0, 5.0]))
        m = train(X, y, spec, C=C, scale=False, tol=1e-6)
        K = gram(spec, X, X)
        worst = max(worst, abs(dual_objective(m.diagnostics["alpha_all"], y, K) - grid_dual_4(y, K, C)))

    Xa, ya = np.array([[-1.0], [1.0]]), np.array([-1.0, 1.0])
    m = train(Xa, ya, KernelSpec.linear(), C=10, scale=False)
    alpha = m.diagnostics["alpha_all"]
    margins = ya * np.array([decision_value(m, x) for x in Xa])
    kkt = (abs(alpha @ ya) <= 1e-6 and alpha.min() >= 0 and alpha.max() <= 10
           and np.all(np.abs(margins - 1) <= 1e-6) and np.allclose(alpha, 0.5, atol=1e-6) and abs(m.bias) <= 1e-6)
    verdict(4, worst <= 1e-3 and kkt, f"max |SMO - grid| dual gap {worst:.2e} over 2700 two-point and 20 four-point "
                                      f"problems; analytic example alpha={alpha.tolist()}, b={m.bias:.1e}")


def test_criterion_5_metric_arithmetic():
    cases = [
        (ConfusionMatrix(tp=11, fn=3, fp=1, tn=15), (78.57, 93.75, 86.67)),
        (ConfusionMatrix(tp=12, fn=2, fp=7, tn=9), (85.71, 56.25, 70.00)),
    ]
    shown, ok = [], True
    for c, want in cases:
        m = metrics(c)
        got = (m.sn, m.sp, m.ac)
        ok &= all(abs(g - w) <= 0.01 for g, w in zip(got, want))
        shown.append("/".join(format_pct(g) for g in got))
    verdict(5, ok, f"multi-level {shown[0]}, tier-2 MLP {shown[1]}")


def test_criterion_6_fusion_law():
    r = np.random.default_rng(6)
    pairs = r.normal(size=(100_000, 2)) * r.choice([1e-3, 1.0, 1e3], size=(100_000, 1))
    bad = 0
    for a, b in pairs:
        label, _ = fuse_scores(a, b)
        winner = b if abs(b) > abs(a) else a
        if label != (1 if winner >= 0 else -1):
            bad += 1
        if (a > 0 and b > 0 and label != 1) or (a < 0 and b < 0 and label != -1):
            bad += 1
    verdict(6, bad == 0, f"{len(pairs)} random score pairs, {bad} violations")


def test_criterion_7_levenberg_marquardt():
    start = time.perf_counter()
    worst = 0.0
    for trial in range(10):
        r = np.random.default_rng(trial)
        sizes = ((9, 6, 2), (2, 6, 2), (3, 4, 1), (5, 2, 3))[trial % 4]
        w = r.normal(scale=1.5, size=n_params(sizes))
        X = r.random((7, sizes[0]))
        J = jacobian(w, sizes, X)
        Jn = np.zeros_like(J)
        for p in range(w.size):
            d = np.zeros_like(w)
            d[p] = 1e-5
            Jn[:, p] = (forward_arrays(w + d, sizes, X) - forward_arrays(w - d, sizes, X)).ravel() / 2e-5
        worst = max(worst, float(np.abs(J - Jn).max() / np.abs(Jn).max()))
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    T = np.array([[0, 1], [1, 0], [1, 0], [0, 1]], dtype=float)
    hits = 0
    for seed in range(10):
        res = fit_network(X, T, LmConfig(layer_sizes=(2, 6, 2), max_epochs=200, goal_mse=1e-3, seed=seed))
        hits += res.mse_history[-1] < 1e-3
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and hits >= 9 and elapsed < 30
    verdict(7, ok, f"Jacobian max rel err {worst:.2e} on 10 configs, XOR solved {hits}/10 within 200 epochs, "
                   f"{elapsed:.2f} s")


def test_criterion_8_end_to_end(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "data")]) == 0
    manifest = str(tmp_path / "data" / "manifest.csv")
    acc = {}
    start = time.perf_counter()
    assert main(["loocv", "--manifest", manifest, "--out", str(tmp_path / "multilevel"), "--pipeline", "multilevel"]) == 0
    multilevel_seconds = time.perf_counter() - start
    report = json.loads((tmp_path / "multilevel/report.json").read_text())
    acc["multilevel"] = report["metrics"]["ac"]
    rows = len(report["per_sample"])
    for name in ("haralick", "nmf"):
        assert main(["loocv", "--manifest", manifest, "--out", str(tmp_path / name), "--pipeline", name]) == 0
        acc[name] = json.loads((tmp_path / name / "report.json").read_text())["metrics"]["ac"]
    tier2_code = main(["tier2", "--manifest", manifest, "--out", str(tmp_path / "tier2")])
    capsys.readouterr()
    tier2 = json.loads((tmp_path / "tier2/report.json").read_text()) if tier2_code == 0 else None
    floor = max(acc["haralick"], acc["nmf"]) - 100 / 30
    ok = (multilevel_seconds < 300 and rows == 30 and acc["multilevel"] >= floor - 1e-9
          and tier2 is not None and len(tier2["per_sample"]) == 30)
    verdict(8, ok, f"multilevel LOOCV {multilevel_seconds:.1f} s, {rows} rows, AC multilevel "
                   f"{format_pct(acc['multilevel'])} vs haralick {format_pct(acc['haralick'])} / nmf "
                   f"{format_pct(acc['nmf'])}; tier-2 AC {format_pct(tier2['metrics']['ac']) if tier2 else 'failed'}")


def _snapshot(root):
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.suffix in (".csv", ".json", ".txt", ".pgm")
    }


def test_criterion_9_determinism(tmp_path, capsys):
    d = tmp_path
    m = str(d / "data" / "manifest.csv")
    commands = [
        ["synth", "--out", str(d / "data")],
        ["extract", "--manifest", m, "--out", str(d / "h.csv")],
        ["extract", "--manifest", m, "--out", str(d / "n.csv"), "--feature", "nmf14", "--nmf-iters", "100"],
        ["extract", "--manifest", m, "--out", str(d / "np.csv"), "--feature", "nmf14",
         "--nmf-basis", str(d / "n.basis.json")],
        ["train", "--features", str(d / "h.csv"), "--manifest", m, "--out", str(d / "svm.json"), "--kernel", "rbf",
         "--rbf-sigma", "1"],
        ["predict", "--model", str(d / "svm.json"), "--features", str(d / "h.csv"), "--out", str(d / "pred.csv")],
        ["loocv", "--manifest", m, "--out", str(d / "loocv"), "--pipeline", "multilevel", "--nmf-iters", "100"],
        ["tier1", "--risk", str(d / "data" / "risk.csv"), "--out", str(d / "tier1")],
        ["tier2", "--manifest", m, "--out", str(d / "tier2")],
    ]
    snapshots = []
    for _ in range(2):
        for argv in commands:
            assert main(argv) == 0, argv
        snapshots.append(_snapshot(d))
    capsys.readouterr()
    first, second = snapshots
    changed = sorted(k for k in first if first[k] != second.get(k))
    subcommands = sorted({argv[0] for argv in commands})
    verdict(9, not changed and len(first) > 60,
            f"{len(first)} output files from {len(subcommands)} subcommands ({', '.join(subcommands)}) rerun; "
            f"changed: {changed or 'none'}")
