"""Command-line entry point.

Every command writes its outputs plus a ``config.txt`` echo of the resolved
options into the run directory given by --out. Option precedence is
command-line flag over config-file entry over built-in default, where the
optional config file is line-oriented ``key = value`` text. Re-running a
command with identical inputs and seed reproduces every output byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import evaluation, fusion, retrieval, synth
from .aggregation import aggregate
from .embedding import CcaHyperparams, fit_embedding, load_embedding, save_embedding, training_views
from .io import load_manifest, read_split, stratified_split, write_split

MODE_ALIASES = {"overhead": "overhead_only", "ground": "ground_only", "multimodal": "multimodal"}

# key -> (flag, type, default, help); default None means required
_COMMON = {
    "manifest": ("--manifest", str, None, "dataset manifest (TSV)"),
    "vocab": ("--vocab", str, None, "label vocabulary file"),
    "split": ("--split", str, None, "split assignment file"),
    "out": ("--out", str, None, "run directory for outputs"),
    "pooling": ("--pooling", str, "avg", "ground-view pooling: avg or max"),
    "seed": ("--seed", int, 0, "random seed"),
}

COMMAND_SPECS: dict[str, dict[str, tuple]] = {
    "synth": {
        "out": _COMMON["out"],
        "seed": _COMMON["seed"],
        "classes": ("--classes", int, 16, "number of landuse classes"),
        "objects_per_class": ("--objects-per-class", int, 40, "objects per class"),
        "dim_ground": ("--dim-ground", int, 128, "ground feature dimension"),
        "dim_overhead": ("--dim-overhead", int, 96, "overhead feature dimension"),
        "min_views": ("--min-views", int, 1, "minimum ground views per object"),
        "max_views": ("--max-views", int, 5, "maximum ground views per object"),
        "shared_signal": ("--shared-signal", float, 0.6, "cross-view class signal strength"),
        "exclusive_ground": ("--exclusive-ground", float, 0.0, "ground-only class signal"),
        "exclusive_overhead": ("--exclusive-overhead", float, 0.1, "overhead-only class signal"),
        "noise": ("--noise", float, 0.9, "feature noise sigma"),
        "missing_frac": ("--missing-frac", float, 0.0, "fraction of objects without ground views"),
    },
    "split": {
        "manifest": _COMMON["manifest"],
        "vocab": _COMMON["vocab"],
        "seed": _COMMON["seed"],
        "train_frac": ("--train-frac", float, 0.8, "per-class train fraction"),
        "out": _COMMON["out"],
    },
    "train": {
        "manifest": _COMMON["manifest"],
        "vocab": _COMMON["vocab"],
        "split": _COMMON["split"],
        "mode": ("--mode", str, None, "overhead | ground | multimodal"),
        "pooling": _COMMON["pooling"],
        "epochs": ("--epochs", int, 50, "training epochs"),
        "batch": ("--batch", int, 4, "objects per training iteration"),
        "lr": ("--lr", float, 0.001, "initial learning rate"),
        "momentum": ("--momentum", float, 0.9, "SGD momentum coefficient"),
        "seed": _COMMON["seed"],
        "out": _COMMON["out"],
    },
    "eval": {
        "manifest": _COMMON["manifest"],
        "vocab": _COMMON["vocab"],
        "split": _COMMON["split"],
        "model": ("--model", str, None, "fusion model checkpoint"),
        "pooling": _COMMON["pooling"],
        "out": _COMMON["out"],
    },
    "fit-embedding": {
        "manifest": _COMMON["manifest"],
        "vocab": _COMMON["vocab"],
        "split": _COMMON["split"],
        "pooling": _COMMON["pooling"],
        "pca_frac": ("--pca-frac", float, 0.1, "PCA kept-dimension fraction"),
        "demb_frac": ("--demb-frac", float, 0.2, "embedding-dimension fraction"),
        "power": ("--power", float, 6.0, "eigenvalue scaling exponent"),
        "eta": ("--eta", float, 1e-4, "covariance ridge"),
        "out": _COMMON["out"],
    },
    "retrieve": {
        "manifest": _COMMON["manifest"],
        "vocab": _COMMON["vocab"],
        "split": _COMMON["split"],
        "embedding": ("--embedding", str, None, "embedding checkpoint"),
        "pooling": _COMMON["pooling"],
        "k": ("--k", int, 5, "neighbors per query / coherence curve length"),
        "out": _COMMON["out"],
    },
    "predict": {
        "manifest": _COMMON["manifest"],
        "vocab": _COMMON["vocab"],
        "split": ("--split", str, "", "optional split file; predicts the test side (default: all objects)"),
        "model": ("--model", str, None, "fusion model checkpoint"),
        "pooling": _COMMON["pooling"],
        "out": _COMMON["out"],
    },
    "predict-missing": {
        "manifest": _COMMON["manifest"],
        "vocab": _COMMON["vocab"],
        "split": _COMMON["split"],
        "model": ("--model", str, None, "multimodal fusion checkpoint"),
        "embedding": ("--embedding", str, None, "embedding checkpoint"),
        "pooling": _COMMON["pooling"],
        "k": ("--k", int, 1, "neighbors whose ground features are averaged"),
        "out": _COMMON["out"],
    },
    "sweep": {
        "manifest": _COMMON["manifest"],
        "vocab": _COMMON["vocab"],
        "split": _COMMON["split"],
        "pooling": _COMMON["pooling"],
        "param": ("--param", str, None, "hyperparameter to vary: pca_frac | demb_frac | power"),
        "values": ("--values", str, None, "comma-separated values to sweep"),
        "pca_frac": ("--pca-frac", float, 0.1, "fixed PCA fraction"),
        "demb_frac": ("--demb-frac", float, 0.2, "fixed embedding fraction"),
        "power": ("--power", float, 6.0, "fixed eigenvalue exponent"),
        "eta": ("--eta", float, 1e-4, "covariance ridge"),
        "out": _COMMON["out"],
    },
}


def _parse_config_file(path: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        entries[key.strip()] = value.strip()
    return entries


def _resolve_options(command: str, args: argparse.Namespace) -> dict:
    spec = COMMAND_SPECS[command]
    file_entries = _parse_config_file(args.config) if args.config else {}
    unknown = set(file_entries) - set(spec)
    if unknown:
        raise ValueError(f"config file has unknown keys for {command!r}: {sorted(unknown)}")
    resolved = {}
    for key, (_, typ, default, _) in spec.items():
        value = getattr(args, key)
        if value is None and key in file_entries:
            value = typ(file_entries[key])
        if value is None:
            value = default
        if value is None:
            raise ValueError(f"missing required option --{key.replace('_', '-')}")
        resolved[key] = value
    return resolved


def _write_config_echo(out_dir: Path, command: str, resolved: dict) -> None:
    lines = [f"command = {command}\n"]
    for key in sorted(resolved):
        lines.append(f"{key} = {resolved[key]}\n")
    (out_dir / "config.txt").write_text("".join(lines), encoding="utf-8")


def _prepare_out(resolved: dict, command: str) -> Path:
    out_dir = Path(resolved["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_config_echo(out_dir, command, resolved)
    return out_dir


def _load_dataset(resolved: dict):
    return load_manifest(resolved["manifest"], resolved["vocab"])


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _predict_records(model, records, pooling: str):
    """(ids, truths, predictions, probabilities) for records usable by the mode."""
    ids, truths, preds, probs = [], [], [], []
    for rec in records:
        if model.mode != "overhead_only" and rec.n_views == 0:
            continue
        ground = aggregate(rec.ground_views, pooling) if model.mode != "overhead_only" else None
        label, p = fusion.predict(model, overhead=rec.overhead, ground=ground)
        ids.append(rec.object_id)
        truths.append(rec.label)
        preds.append(label)
        probs.append(p)
    if not ids:
        raise ValueError(f"no test objects usable for mode {model.mode!r}")
    return ids, truths, preds, probs


def _write_predictions(path: Path, class_names, ids, truths, preds, probs) -> None:
    header = ["object_id", "truth", "prediction"] + [f"p_{name}" for name in class_names]
    rows = [
        [oid, class_names[t], class_names[p], *(str(float(v)) for v in pr)]
        for oid, t, p, pr in zip(ids, truths, preds, probs)
    ]
    _write_csv(path, header, rows)


def _write_evaluation(out_dir: Path, report, class_names) -> None:
    evaluation.write_report_text(report, class_names, out_dir / "report.txt")
    evaluation.write_report_csv(report, class_names, out_dir / "report.csv")
    evaluation.write_confusion_csv(evaluation.row_normalize(report.confusion), class_names, out_dir / "confusion.csv")


def cmd_synth(resolved: dict) -> None:
    out_dir = _prepare_out(resolved, "synth")
    config = synth.SynthConfig(
        num_classes=resolved["classes"],
        objects_per_class=resolved["objects_per_class"],
        dim_ground=resolved["dim_ground"],
        dim_overhead=resolved["dim_overhead"],
        min_views=resolved["min_views"],
        max_views=resolved["max_views"],
        shared_signal=resolved["shared_signal"],
        exclusive_signal_ground=resolved["exclusive_ground"],
        exclusive_signal_overhead=resolved["exclusive_overhead"],
        noise_sigma=resolved["noise"],
        missing_ground_fraction=resolved["missing_frac"],
        seed=resolved["seed"],
    )
    manifest = synth.generate(config, out_dir)
    print(f"wrote {len(manifest.records)} objects to {out_dir}")


def cmd_split(resolved: dict) -> None:
    out_dir = _prepare_out(resolved, "split")
    manifest = _load_dataset(resolved)
    assignment = stratified_split(manifest, resolved["seed"], resolved["train_frac"])
    write_split(assignment, out_dir / "split.tsv")
    n_train = sum(1 for v in assignment.assignment.values() if v == "train")
    print(f"split {len(assignment.assignment)} objects: {n_train} train")


def cmd_train(resolved: dict) -> None:
    out_dir = _prepare_out(resolved, "train")
    manifest = _load_dataset(resolved)
    split = read_split(resolved["split"])
    mode = MODE_ALIASES.get(resolved["mode"])
    if mode is None:
        raise ValueError(f"unknown mode {resolved['mode']!r}; expected one of {sorted(MODE_ALIASES)}")
    if mode != "overhead_only" and manifest.dim_ground is None:
        raise ValueError("dataset has no ground views; only overhead mode is trainable")
    model = fusion.create_model(
        mode,
        manifest.num_classes,
        manifest.dim_ground or 0,
        manifest.dim_overhead,
        resolved["seed"],
    )
    config = fusion.TrainConfig(
        epochs=resolved["epochs"],
        batch_size=resolved["batch"],
        lr0=resolved["lr"],
        momentum=resolved["momentum"],
        seed=resolved["seed"],
    )
    model, trace = fusion.train(model, manifest, split, config, resolved["pooling"])
    fusion.save_checkpoint(model, out_dir / "model.mmck")
    _write_csv(out_dir / "trace.csv", ["epoch", "loss"], [[str(e), str(float(l))] for e, l in enumerate(trace)])
    final = f"{trace[-1]:.6f}" if trace else "n/a"
    print(f"trained {mode} head: final epoch loss {final}")


def cmd_eval(resolved: dict) -> None:
    out_dir = _prepare_out(resolved, "eval")
    manifest = _load_dataset(resolved)
    split = read_split(resolved["split"])
    model = fusion.load_checkpoint(resolved["model"])
    _, test_records = split.partition(manifest)
    ids, truths, preds, probs = _predict_records(model, test_records, resolved["pooling"])
    report = evaluation.evaluate(preds, truths, manifest.num_classes)
    _write_evaluation(out_dir, report, manifest.vocabulary.names)
    _write_predictions(out_dir / "predictions.csv", manifest.vocabulary.names, ids, truths, preds, probs)
    print(f"evaluated {report.n_eval} objects: OA {report.oa:.2f}, AA {report.aa:.2f}")


def cmd_fit_embedding(resolved: dict) -> None:
    out_dir = _prepare_out(resolved, "fit-embedding")
    manifest = _load_dataset(resolved)
    split = read_split(resolved["split"])
    train_records, _ = split.partition(manifest)
    ground, overhead, labels, _ = training_views(train_records, resolved["pooling"])
    hyper = CcaHyperparams(resolved["pca_frac"], resolved["demb_frac"], resolved["power"], resolved["eta"])
    model = fit_embedding(ground, overhead, labels, manifest.num_classes, hyper)
    save_embedding(model, out_dir / "embedding.mmck")
    print(f"fitted embedding on {ground.shape[0]} objects: d_emb {model.dim_embedding}")


def _build_train_index(manifest, split, embedding_model, pooling: str):
    train_records, _ = split.partition(manifest)
    ground, _, labels, ids = training_views(train_records, pooling)
    return retrieval.build_index(embedding_model, ground, labels, ids)


def cmd_retrieve(resolved: dict) -> None:
    out_dir = _prepare_out(resolved, "retrieve")
    manifest = _load_dataset(resolved)
    split = read_split(resolved["split"])
    embedding_model = load_embedding(resolved["embedding"])
    index = _build_train_index(manifest, split, embedding_model, resolved["pooling"])
    _, test_records = split.partition(manifest)
    names = manifest.vocabulary.names

    rows = []
    k = resolved["k"]
    for rec in test_records:
        result = retrieval.query(index, embedding_model, rec.overhead, k)
        for rank, nb in enumerate(result.neighbors, start=1):
            rows.append(
                [rec.object_id, str(rank), nb.object_id, names[nb.label], str(float(nb.similarity)),
                 str(int(result.zero_query))]
            )
    _write_csv(out_dir / "retrieval.csv",
               ["query_id", "rank", "neighbor_id", "neighbor_class", "similarity", "zero_query"], rows)

    test_overhead = np.asarray([rec.overhead for rec in test_records], dtype=np.float64)
    test_labels = np.asarray([rec.label for rec in test_records], dtype=np.int64)
    curve = retrieval.label_coherence_curve(index, embedding_model, test_overhead, test_labels, k)
    _write_csv(out_dir / "coherence.csv", ["k", "hit_rate"],
               [[str(i + 1), str(float(h))] for i, h in enumerate(curve)])
    print(f"retrieved top-{k} neighbors for {len(test_records)} queries; top-1 coherence {curve[0]:.3f}")


def cmd_predict(resolved: dict) -> None:
    out_dir = _prepare_out(resolved, "predict")
    manifest = _load_dataset(resolved)
    model = fusion.load_checkpoint(resolved["model"])
    if resolved["split"]:
        _, records = read_split(resolved["split"]).partition(manifest)
    else:
        records = list(manifest.records)
    ids, truths, preds, probs = _predict_records(model, records, resolved["pooling"])
    _write_predictions(out_dir / "predictions.csv", manifest.vocabulary.names, ids, truths, preds, probs)
    print(f"predicted {len(ids)} objects")


def cmd_predict_missing(resolved: dict) -> None:
    out_dir = _prepare_out(resolved, "predict-missing")
    manifest = _load_dataset(resolved)
    split = read_split(resolved["split"])
    model = fusion.load_checkpoint(resolved["model"])
    embedding_model = load_embedding(resolved["embedding"])
    index = _build_train_index(manifest, split, embedding_model, resolved["pooling"])
    _, test_records = split.partition(manifest)

    ids, truths, preds, probs, retrieved = [], [], [], [], []
    for rec in test_records:
        label, p, neighbor_ids = retrieval.predict_missing(model, embedding_model, index, rec.overhead, resolved["k"])
        ids.append(rec.object_id)
        truths.append(rec.label)
        preds.append(label)
        probs.append(p)
        retrieved.append(";".join(neighbor_ids))
    report = evaluation.evaluate(preds, truths, manifest.num_classes)
    _write_evaluation(out_dir, report, manifest.vocabulary.names)

    names = manifest.vocabulary.names
    header = ["object_id", "truth", "prediction", "retrieved"] + [f"p_{n}" for n in names]
    rows = [
        [oid, names[t], names[p], ret, *(str(float(v)) for v in pr)]
        for oid, t, p, ret, pr in zip(ids, truths, preds, retrieved, probs)
    ]
    _write_csv(out_dir / "predictions.csv", header, rows)
    print(f"predicted {report.n_eval} ground-less objects: OA {report.oa:.2f}, AA {report.aa:.2f}")


def cmd_sweep(resolved: dict) -> None:
    out_dir = _prepare_out(resolved, "sweep")
    manifest = _load_dataset(resolved)
    split = read_split(resolved["split"])
    train_records, test_records = split.partition(manifest)
    ground, overhead, labels, _ = training_views(train_records, resolved["pooling"])
    test_overhead = np.asarray([rec.overhead for rec in test_records], dtype=np.float64)
    test_labels = np.asarray([rec.label for rec in test_records], dtype=np.int64)
    values = [float(v) for v in resolved["values"].split(",") if v.strip()]
    if not values:
        raise ValueError("no sweep values given")
    base = CcaHyperparams(resolved["pca_frac"], resolved["demb_frac"], resolved["power"], resolved["eta"])
    results = evaluation.sensitivity_sweep(
        ground, overhead, labels, test_overhead, test_labels,
        manifest.num_classes, resolved["param"], values, base,
    )
    _write_csv(out_dir / "sweep.csv", ["value", "oa"], [[str(v), str(float(oa))] for v, oa in results])
    print(f"swept {resolved['param']} over {len(values)} values")


HANDLERS = {
    "synth": cmd_synth,
    "split": cmd_split,
    "train": cmd_train,
    "eval": cmd_eval,
    "fit-embedding": cmd_fit_embedding,
    "retrieve": cmd_retrieve,
    "predict": cmd_predict,
    "predict-missing": cmd_predict_missing,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="urbanfuse",
        description="Urban-object landuse classification from ground and overhead features",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, spec in COMMAND_SPECS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None, help="optional key = value config file")
        for key, (flag, typ, _, help_text) in spec.items():
            p.add_argument(flag, dest=key, type=typ, default=None, help=help_text)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        resolved = _resolve_options(args.command, args)
        HANDLERS[args.command](resolved)
    except Exception as exc:  # argparse already handled unknown commands/flags
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
