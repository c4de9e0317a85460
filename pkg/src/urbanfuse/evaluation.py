"""Classification metrics, multi-split averaging and the CCA sensitivity sweep.

OA is the percentage of correct predictions; AA averages the per-class
producer's accuracies (recall) over classes that appear in the ground truth.
Confusion matrices are counts with rows = truth, columns = prediction;
row-normalized variants express each row in percent.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .embedding import CcaHyperparams, fit_embedding
from .retrieval import build_index, query

SWEEPABLE = ("pca_frac", "demb_frac", "power")


@dataclass(frozen=True)
class EvaluationReport:
    oa: float  # percent
    aa: float  # percent over classes present in the ground truth
    per_class: np.ndarray  # (K,) producer accuracy percent; NaN marks an absent class
    confusion: np.ndarray  # (K, K) integer counts, rows = truth
    n_eval: int


@dataclass(frozen=True)
class AveragedReports:
    oa_mean: float
    oa_std: float
    aa_mean: float
    aa_std: float
    per_class_mean: np.ndarray  # (K,) NaN-aware mean of producer accuracies
    confusion_mean: np.ndarray  # (K, K) percent; mean of row-normalized matrices
    n_reports: int


def evaluate(predictions, ground_truth, num_classes: int) -> EvaluationReport:
    preds = np.asarray(predictions, dtype=np.int64).reshape(-1)
    truths = np.asarray(ground_truth, dtype=np.int64).reshape(-1)
    if preds.shape[0] != truths.shape[0]:
        raise ValueError(f"length mismatch: {preds.shape[0]} predictions vs {truths.shape[0]} truths")
    if preds.shape[0] == 0:
        raise ValueError("nothing to evaluate")
    for name, arr in (("prediction", preds), ("truth", truths)):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise ValueError(f"{name} label out of range [0, {num_classes})")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (truths, preds), 1)
    row_totals = confusion.sum(axis=1)
    per_class = np.full(num_classes, np.nan)
    present = row_totals > 0
    per_class[present] = 100.0 * np.diag(confusion)[present] / row_totals[present]
    oa = 100.0 * np.trace(confusion) / confusion.sum()
    aa = float(np.mean(per_class[present]))
    return EvaluationReport(float(oa), aa, per_class, confusion, int(confusion.sum()))


def row_normalize(confusion: np.ndarray) -> np.ndarray:
    """Each row expressed in percent of its total; empty rows become NaN."""
    counts = np.asarray(confusion, dtype=np.float64)
    totals = counts.sum(axis=1, keepdims=True)
    return np.where(totals > 0, 100.0 * counts / np.where(totals > 0, totals, 1.0), np.nan)


def _mean_std(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def average_reports(reports: list[EvaluationReport]) -> AveragedReports:
    """Mean and sample (n-1) standard deviation across splits.

    Confusion matrices are row-normalized per split before averaging; a class
    absent from some split contributes only the splits where it appears.
    """
    if not reports:
        raise ValueError("no reports to average")
    k = reports[0].confusion.shape[0]
    if any(r.confusion.shape != (k, k) for r in reports):
        raise ValueError("reports disagree on class count")
    oa_mean, oa_std = _mean_std([r.oa for r in reports])
    aa_mean, aa_std = _mean_std([r.aa for r in reports])
    with warnings.catch_warnings():
        # a class absent from every split stays NaN; that is the sentinel, not an error
        warnings.simplefilter("ignore", RuntimeWarning)
        per_class_mean = np.nanmean(np.stack([r.per_class for r in reports]), axis=0)
        confusion_mean = np.nanmean(np.stack([row_normalize(r.confusion) for r in reports]), axis=0)
    return AveragedReports(oa_mean, oa_std, aa_mean, aa_std, per_class_mean, confusion_mean, len(reports))


def _fmt(value: float) -> str:
    return "n/a" if np.isnan(value) else str(float(value))


def write_report_text(report: EvaluationReport, class_names, path) -> None:
    """Line-oriented key-value rendering of a single-split report."""
    lines = [
        f"oa = {_fmt(report.oa)}\n",
        f"aa = {_fmt(report.aa)}\n",
        f"n_eval = {report.n_eval}\n",
    ]
    for name, acc in zip(class_names, report.per_class):
        lines.append(f"producer_acc[{name}] = {_fmt(acc)}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def write_report_csv(report: EvaluationReport, class_names, path) -> None:
    """Single-row CSV: oa, aa, n_eval, per-class accuracies, then the raw
    confusion counts flattened row-major."""
    k = len(class_names)
    header = ["oa", "aa", "n_eval"]
    header += [f"acc_{name}" for name in class_names]
    header += [f"conf_{i}_{j}" for i in range(k) for j in range(k)]
    row = [_fmt(report.oa), _fmt(report.aa), str(report.n_eval)]
    row += [_fmt(v) for v in report.per_class]
    row += [str(int(v)) for v in report.confusion.reshape(-1)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerow(row)


def write_confusion_csv(matrix: np.ndarray, class_names, path) -> None:
    """K x K grid (percent or counts) with class-name header and row labels."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["truth\\pred", *class_names])
        for name, row in zip(class_names, np.asarray(matrix)):
            writer.writerow([name, *(_fmt(float(v)) for v in row)])


def format_mean_std(mean: float, std: float, digits: int = 2) -> str:
    return f"{mean:.{digits}f} ± {std:.{digits}f}"


def write_average_text(avg: AveragedReports, class_names, path) -> None:
    lines = [
        f"n_reports = {avg.n_reports}\n",
        f"oa = {format_mean_std(avg.oa_mean, avg.oa_std)}\n",
        f"aa = {format_mean_std(avg.aa_mean, avg.aa_std)}\n",
    ]
    for name, acc in zip(class_names, avg.per_class_mean):
        lines.append(f"producer_acc[{name}] = {_fmt(acc)}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def nearest_neighbor_label_oa(
    model,
    train_ground: np.ndarray,
    train_labels: np.ndarray,
    test_overhead: np.ndarray,
    test_labels: np.ndarray,
    num_classes: int,
) -> float:
    """OA (percent) of predicting each test object with the label of its
    nearest training ground-view neighbor in the embedding."""
    index = build_index(model, train_ground, train_labels)
    preds = [query(index, model, feat, k=1).neighbors[0].label for feat in np.atleast_2d(test_overhead)]
    return evaluate(preds, test_labels, num_classes).oa


def sensitivity_sweep(
    train_ground: np.ndarray,
    train_overhead: np.ndarray,
    train_labels: np.ndarray,
    test_overhead: np.ndarray,
    test_labels: np.ndarray,
    num_classes: int,
    param: str,
    values,
    base: CcaHyperparams = CcaHyperparams(),
) -> list[tuple[float, float]]:
    """Refit the embedding for each value of one hyperparameter (the other
    two stay at ``base``) and score nearest-neighbor-label OA on the test set."""
    if param not in SWEEPABLE:
        raise ValueError(f"cannot sweep {param!r}; choose from {SWEEPABLE}")
    results = []
    for value in values:
        hyper = replace(base, **{param: float(value)})
        model = fit_embedding(train_ground, train_overhead, train_labels, num_classes, hyper)
        oa = nearest_neighbor_label_oa(model, train_ground, train_labels, test_overhead, test_labels, num_classes)
        results.append((float(value), oa))
    return results
