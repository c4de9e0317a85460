"""Acceptance suite: one test per release criterion, at the stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one line per
criterion. Everything here is deterministic: fixed seeds, fixed configs.
"""

import math
import subprocess
import sys
import time

import numpy as np
import pytest

from urbanfuse import synth
from urbanfuse.aggregation import aggregate
from urbanfuse.embedding import (
    CcaHyperparams,
    build_cca_system,
    fit_embedding,
    l2_normalize_rows,
    pca_project,
    solve_gev_descending,
    training_views,
)
from urbanfuse.evaluation import (
    average_reports,
    evaluate,
    nearest_neighbor_label_oa,
    row_normalize,
    sensitivity_sweep,
)
from urbanfuse.fusion import (
    TrainConfig,
    create_model,
    cross_entropy_loss,
    forward_batch,
    loss_gradients,
    predict,
    train,
)
from urbanfuse.io import stratified_split
from urbanfuse.retrieval import build_index, label_coherence_curve, predict_missing

from oracles import central_difference_gradient, cca_small_oracle, two_loop_aggregate

SEEDS = (1, 2, 3, 4, 5)


def _report(name, elapsed, budget):
    assert elapsed < budget, f"{name} took {elapsed:.1f}s, budget {budget}s"
    print(f"[ACCEPTANCE] {name}: PASS ({elapsed:.1f}s)")


@pytest.fixture(scope="module")
def default_runs(tmp_path_factory):
    """The default synthetic protocol: per seed, three trained heads, an
    embedding, an index and the test-side arrays."""
    runs = {}
    for seed in SEEDS:
        root = tmp_path_factory.mktemp(f"default{seed}")
        manifest = synth.generate(synth.SynthConfig(seed=seed), root)
        split = stratified_split(manifest, seed=seed)
        train_records, test_records = split.partition(manifest)
        heads = {}
        for mode, dims in (
            ("overhead_only", (0, manifest.dim_overhead)),
            ("ground_only", (manifest.dim_ground, 0)),
            ("multimodal", (manifest.dim_ground, manifest.dim_overhead)),
        ):
            head = create_model(mode, manifest.num_classes, dims[0], dims[1], seed=seed)
            head, _ = train(head, manifest, split, TrainConfig(seed=seed))
            heads[mode] = head
        ground, overhead, labels, ids = training_views(train_records)
        emb = fit_embedding(ground, overhead, labels, manifest.num_classes)
        index = build_index(emb, ground, labels, ids)
        runs[seed] = dict(
            manifest=manifest,
            split=split,
            heads=heads,
            emb=emb,
            index=index,
            train_arrays=(ground, overhead, labels),
            test_records=test_records,
            test_overhead=np.asarray([r.overhead for r in test_records], dtype=np.float64),
            test_labels=np.asarray([r.label for r in test_records], dtype=np.int64),
        )
    return runs


def _test_oa(head, records, num_classes, pooling="avg"):
    preds, truths = [], []
    for rec in records:
        if head.mode != "overhead_only" and rec.n_views == 0:
            continue
        g = aggregate(rec.ground_views, pooling) if head.mode != "overhead_only" else None
        preds.append(predict(head, overhead=rec.overhead, ground=g)[0])
        truths.append(rec.label)
    return evaluate(preds, truths, num_classes).oa


def test_loss_sanity_ln_k():
    start = time.time()
    model = create_model("overhead_only", 16, 0, 24, seed=0)
    model.weights[:] = 0.0
    model.bias[:] = 0.0
    rng = np.random.default_rng(0)
    scores = forward_batch(model, rng.normal(size=(32, 24)))
    loss = cross_entropy_loss(scores, rng.integers(0, 16, size=32))
    assert abs(loss - math.log(16)) < 1e-9
    assert abs(loss - 2.7725887) < 5e-8  # ln 16 to 7 decimals
    _report("loss sanity (ln K at zero init)", time.time() - start, 1.0)


def test_gradient_correctness():
    start = time.time()
    rng = np.random.default_rng(100)
    checked = 0
    while checked < 100:
        k = int(rng.integers(2, 6))
        d = int(rng.integers(2, 7))
        n = int(rng.integers(1, 5))
        model = create_model("overhead_only", k, 0, d, seed=int(rng.integers(0, 2**31)))
        model.weights[:] = rng.normal(size=(k, d))
        model.bias[:] = rng.normal(size=k)
        inputs = rng.normal(size=(n, d))
        labels = rng.integers(0, k, size=n)
        grad_w, grad_b = loss_gradients(model, inputs, labels)

        def loss():
            return cross_entropy_loss(inputs @ model.weights.T + model.bias, labels)

        fd_w = central_difference_gradient(loss, model.weights, h=1e-5)
        fd_b = central_difference_gradient(loss, model.bias, h=1e-5)
        for got, want in ((grad_w, fd_w), (grad_b, fd_b)):
            denom = np.maximum(np.maximum(np.abs(got), np.abs(want)), 1e-8)
            assert np.max(np.abs(got - want) / denom) < 1e-4
        checked += 1
    _report(f"gradient vs central differences ({checked} instances)", time.time() - start, 10.0)


def test_aggregation_oracle_equivalence():
    start = time.time()
    rng = np.random.default_rng(200)
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        d = int(rng.integers(1, 13))
        batch = rng.normal(size=(n, d)) * 10.0 ** int(rng.integers(-2, 3))
        for pooling in ("avg", "max"):
            got = aggregate(batch, pooling).values
            want = two_loop_aggregate(batch, pooling)
            assert np.allclose(got, want, rtol=1e-6, atol=0)
        perm = rng.permutation(n)
        assert np.allclose(
            aggregate(batch, "avg").values, aggregate(batch[perm], "avg").values, rtol=1e-5
        )
        assert np.array_equal(aggregate(batch, "max").values, aggregate(batch[perm], "max").values)
    _report("aggregation vs two-loop oracle (1000 sets)", time.time() - start, 5.0)


def test_cca_correctness():
    start = time.time()
    rng = np.random.default_rng(300)

    # (a) eigenpair residuals on a structured problem
    n, k = 90, 4
    labels = rng.integers(0, k, size=n)
    z = rng.normal(size=(k, 3))[labels] + 0.4 * rng.normal(size=(n, 3))
    x1 = z @ rng.normal(size=(3, 12)) + 0.3 * rng.normal(size=(n, 12))
    x2 = z @ rng.normal(size=(3, 9)) + 0.3 * rng.normal(size=(n, 9))
    x3 = np.eye(k)[labels]
    views = [x - x.mean(axis=0) for x in (x1, x2, x3)]
    a, b = build_cca_system(*views, eta=1e-4)
    eigvals, eigvecs = solve_gev_descending(a, b)
    norm_a = np.linalg.norm(a, "fro")
    for col in range(eigvecs.shape[1]):
        residual = a @ eigvecs[:, col] - eigvals[col] * (b @ eigvecs[:, col])
        assert np.linalg.norm(residual) <= 1e-8 * norm_a

    # (b) per-view constraint on the fitted projections
    labels_b = rng.integers(0, 4, size=120)
    centers = rng.normal(size=(4, 5))
    latent = centers[labels_b] + 0.3 * rng.normal(size=(120, 5))
    ground = latent @ rng.normal(size=(5, 24)) + 0.3 * rng.normal(size=(120, 24))
    overhead = latent @ rng.normal(size=(5, 18)) + 0.3 * rng.normal(size=(120, 18))
    hyper = CcaHyperparams(pca_frac=0.3, demb_frac=0.1, power=6.0, eta=1e-4)
    model = fit_embedding(ground, overhead, labels_b, 4, hyper)
    x1p = pca_project(model.pca_ground, l2_normalize_rows(ground))
    x2p = pca_project(model.pca_overhead, l2_normalize_rows(overhead))
    x3p = np.eye(4)[labels_b] - model.label_mean
    d_emb = model.dim_embedding
    assert d_emb <= min(x1p.shape[1], x2p.shape[1], 3)
    for x, w in ((x1p, model.w_ground), (x2p, model.w_overhead), (x3p, model.w_label)):
        c_tilde = x.T @ x + hyper.eta * np.eye(x.shape[1])
        assert np.max(np.abs(w.T @ c_tilde @ w - np.eye(d_emb))) < 1e-6

    # (c) >= 20 random three-view problems, per-view dim <= 10
    for _ in range(22):
        dims = rng.integers(1, 11, size=3)
        n = int(rng.integers(12, 40))
        views = [rng.normal(size=(n, d)) for d in dims]
        views = [v - v.mean(axis=0) for v in views]
        a, b = build_cca_system(*views, eta=1e-4)
        eigvals, _ = solve_gev_descending(a, b)
        oracle_vals, oracle_vecs, _, _ = cca_small_oracle(*views, eta=1e-4)
        scale = max(1.0, float(np.abs(oracle_vals).max()))
        assert np.max(np.abs(eigvals - oracle_vals)) <= 1e-7 * scale
        for col in range(len(eigvals)):
            residual = a @ oracle_vecs[:, col] - eigvals[col] * (b @ oracle_vecs[:, col])
            assert np.linalg.norm(residual) <= 1e-7 * np.linalg.norm(a, "fro")

    # (d) identical views correlate >= 0.99 in the embedding
    base = rng.normal(size=(80, 6))
    base -= base.mean(axis=0)
    lab = rng.integers(0, 3, size=80)
    x3 = np.eye(3)[lab]
    x3 = x3 - x3.mean(axis=0)
    a, b = build_cca_system(base, base.copy(), x3, eta=1e-4)
    _, vecs = solve_gev_descending(a, b)
    for col in range(2):
        p1 = base @ vecs[:6, col]
        p2 = base @ vecs[6:12, col]
        assert abs(np.corrcoef(p1, p2)[0, 1]) >= 0.99
    _report("three-view CCA correctness (residual, constraint, oracle, identical views)",
            time.time() - start, 30.0)


def test_qualitative_ordering(default_runs):
    start = time.time()
    oa = {"overhead_only": [], "ground_only": [], "multimodal": [], "pm": []}
    for seed in SEEDS:
        run = default_runs[seed]
        k = run["manifest"].num_classes
        for mode in ("overhead_only", "ground_only", "multimodal"):
            oa[mode].append(_test_oa(run["heads"][mode], run["test_records"], k))
        preds = [
            predict_missing(run["heads"]["multimodal"], run["emb"], run["index"], rec.overhead, k=1)[0]
            for rec in run["test_records"]
        ]
        oa["pm"].append(evaluate(preds, run["test_labels"], k).oa)
    means = {key: float(np.mean(vals)) for key, vals in oa.items()}
    print(f"  mean OA: overhead {means['overhead_only']:.2f}, ground {means['ground_only']:.2f}, "
          f"multimodal {means['multimodal']:.2f}, missing-modality {means['pm']:.2f}")
    assert means["multimodal"] >= means["overhead_only"] + 5.0
    assert means["multimodal"] >= means["ground_only"] + 5.0
    assert means["pm"] > means["overhead_only"]
    assert means["pm"] <= means["multimodal"] + 1.0
    _report("qualitative ordering over seeds 1-5", time.time() - start, 300.0)


def test_retrieval_coherence(default_runs):
    start = time.time()
    run = default_runs[1]
    curve = label_coherence_curve(
        run["index"], run["emb"], run["test_overhead"], run["test_labels"], k_max=len(run["index"])
    )
    assert np.all(np.diff(curve) >= 0.0)  # exactly monotone non-decreasing
    chance = 1.0 / run["manifest"].num_classes
    assert curve[0] >= 4.0 * chance
    print(f"  top-1 coherence {curve[0]:.3f} vs chance {chance:.4f}")
    _report("retrieval label coherence", time.time() - start, 30.0)


def test_sensitivity_stability(default_runs):
    start = time.time()
    run = default_runs[1]
    ground, overhead, labels = run["train_arrays"]
    k = run["manifest"].num_classes
    base = CcaHyperparams()
    default_oa = nearest_neighbor_label_oa(
        run["emb"], ground, labels, run["test_overhead"], run["test_labels"], k
    )
    sweeps = {
        "demb_frac": [0.1, 0.2, 0.3, 0.4, 0.5],
        "power": [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
        "pca_frac": [0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
    }
    for param, values in sweeps.items():
        results = sensitivity_sweep(
            ground, overhead, labels, run["test_overhead"], run["test_labels"], k, param, values, base
        )
        for value, oa in results:
            assert abs(oa - default_oa) <= 10.0, (
                f"{param}={value}: OA {oa:.2f} leaves the 10-point band around {default_oa:.2f}"
            )
    print(f"  default nearest-neighbor OA {default_oa:.2f}; all sweep points within ±10")
    _report("hyperparameter sensitivity stability", time.time() - start, 300.0)


def test_metrics_hand_fixtures():
    start = time.time()
    report = evaluate([0, 1, 1, 1], [0, 0, 1, 1], 2)
    assert report.oa == 75.0
    assert np.allclose(report.per_class, [50.0, 100.0])
    assert report.aa == 75.0

    normalized = row_normalize(report.confusion)
    sums = np.nansum(normalized, axis=1)
    assert np.all(np.abs(sums - 100.0) < 1e-6)

    oas = [73.0, 74.0, 72.0, 75.0, 71.0]
    reports = []
    for oa in oas:
        preds = [0] * int(oa) + [1] * (100 - int(oa))
        reports.append(evaluate(preds, [0] * 100, 2))
    avg = average_reports(reports)
    assert abs(avg.oa_mean - np.mean(oas)) < 1e-12
    assert abs(avg.oa_std - np.std(oas, ddof=1)) < 1e-12
    _report("metrics vs hand-computed fixtures", time.time() - start, 10.0)


def test_cli_determinism(tmp_path):
    start = time.time()
    base = ["--manifest", "data/manifest.tsv", "--vocab", "data/vocabulary.txt",
            "--split", "split/split.tsv"]
    commands = [
        ["synth", "--out", "data", "--seed", "3", "--classes", "4",
         "--objects-per-class", "8", "--dim-ground", "32", "--dim-overhead", "24"],
        ["split", "--manifest", "data/manifest.tsv", "--vocab", "data/vocabulary.txt",
         "--seed", "3", "--out", "split"],
        ["train", *base, "--mode", "multimodal", "--epochs", "4", "--seed", "3", "--out", "train"],
        ["train", *base, "--mode", "overhead", "--epochs", "4", "--seed", "3", "--out", "train_oh"],
        ["fit-embedding", *base, "--out", "emb"],
        ["eval", *base, "--model", "train/model.mmck", "--out", "eval"],
        ["retrieve", *base, "--embedding", "emb/embedding.mmck", "--k", "3", "--out", "retrieve"],
        ["predict", "--manifest", "data/manifest.tsv", "--vocab", "data/vocabulary.txt",
         "--model", "train_oh/model.mmck", "--out", "predict"],
        ["predict-missing", *base, "--model", "train/model.mmck",
         "--embedding", "emb/embedding.mmck", "--out", "pm"],
        ["sweep", *base, "--param", "power", "--values", "0,6", "--out", "sweep"],
    ]

    def run_all():
        for argv in commands:
            proc = subprocess.run(
                [sys.executable, "-m", "urbanfuse.cli", *argv],
                cwd=tmp_path, capture_output=True, text=True,
            )
            assert proc.returncode == 0, f"{argv}: {proc.stderr}"

    def snapshot():
        return {
            str(p.relative_to(tmp_path)): p.read_bytes()
            for p in sorted(tmp_path.rglob("*"))
            if p.is_file()
        }

    run_all()
    first = snapshot()
    run_all()
    second = snapshot()
    assert set(first) == set(second)
    diffs = [name for name in first if first[name] != second[name]]
    assert diffs == [], f"outputs changed on re-run: {diffs}"
    print(f"  {len(commands)} commands, {len(first)} files byte-identical on re-run")
    _report("CLI determinism (bit-identical re-runs)", time.time() - start, 120.0)
