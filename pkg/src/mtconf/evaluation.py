"""Binary-classification metrics for word-level mistranslation detection.

A method's per-word uncertainty scores are joined with annotator labels into
LabeledScore records; `sweep` walks every distinct score as a decision
threshold (rule: score > t, matching attribution.classify), and the report
carries max F1, AUC-PR (trapezoid over the recall-sorted curve) and AUC-ROC
(Mann-Whitney pair counting with half credit for ties).

Conventions, recorded here because they affect curve endpoints: precision at
zero predicted positives is defined as 1, and unannotated words count as
negatives.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MetricsError

CURVE_CSV_HEADER = ["threshold", "precision", "recall", "fpr", "tpr", "tp", "fp", "tn", "fn"]


@dataclass(frozen=True)
class LabeledScore:
    sentence_id: str
    word_index: int
    score: float
    label: bool
    method: str = ""


@dataclass(frozen=True)
class CurvePoint:
    threshold: float
    precision: float
    recall: float
    fpr: float
    tpr: float
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def f1(self) -> float:
        if self.precision + self.recall == 0:
            return 0.0
        return 2 * self.precision * self.recall / (self.precision + self.recall)


@dataclass(frozen=True)
class MetricsReport:
    method: str
    max_f1: float
    threshold_at_max_f1: float
    auc_pr: float
    auc_roc: float
    curve: tuple[CurvePoint, ...]
    positives: int
    negatives: int
    unresolved_triples: int = 0


def _split_classes(scores: list[LabeledScore]) -> tuple[np.ndarray, np.ndarray]:
    values = np.asarray([s.score for s in scores], dtype=np.float64)
    labels = np.asarray([s.label for s in scores], dtype=bool)
    if not labels.any():
        raise MetricsError("no positive labels: cannot evaluate (missing class: positive)")
    if labels.all():
        raise MetricsError("no negative labels: cannot evaluate (missing class: negative)")
    return values, labels


def sweep(scores: list[LabeledScore]) -> tuple[list[CurvePoint], float, float]:
    """Curve points at every distinct score threshold plus +/-inf sentinels.

    Returns (points sorted by descending threshold, max_f1, argmax threshold).
    On F1 ties the highest threshold wins, which prefers the least-flagging
    decision rule.
    """
    values, labels = _split_classes(scores)
    total_pos = int(labels.sum())
    total_neg = int(labels.size - total_pos)

    thresholds = [float("inf")] + sorted({float(v) for v in values}, reverse=True) + [float("-inf")]
    points = []
    for t in thresholds:
        flagged = values > t
        tp = int((flagged & labels).sum())
        fp = int((flagged & ~labels).sum())
        fn = total_pos - tp
        tn = total_neg - fp
        precision = tp / (tp + fp) if (tp + fp) > 0 else 1.0
        recall = tp / total_pos
        fpr = fp / total_neg
        points.append(CurvePoint(threshold=t, precision=precision, recall=recall,
                                 fpr=fpr, tpr=recall, tp=tp, fp=fp, tn=tn, fn=fn))

    best = max(points, key=lambda p: (p.f1, p.threshold))
    return points, best.f1, best.threshold


def auc_pr(curve: list[CurvePoint]) -> float:
    """Trapezoid area under precision over recall-sorted curve points."""
    ordered = sorted(curve, key=lambda p: (p.recall, -p.precision))
    recalls = np.asarray([p.recall for p in ordered])
    precisions = np.asarray([p.precision for p in ordered])
    return float(np.trapezoid(precisions, recalls))


def auc_roc(scores: list[LabeledScore]) -> float:
    """AUC-ROC by Mann-Whitney pair counting; ties earn half credit.

    Computed with average ranks, which is algebraically the fraction of
    (positive, negative) pairs ranked correctly.
    """
    values, labels = _split_classes(scores)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < sorted_vals.size:
        j = i
        while j + 1 < sorted_vals.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0  # average 1-based rank
        i = j + 1
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    rank_sum = float(ranks[labels].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def evaluate_scores(scores: list[LabeledScore], method: str,
                    unresolved_triples: int = 0) -> MetricsReport:
    """Full report (sweep + both AUCs) over joined score/label records."""
    if not scores:
        raise MetricsError(f"{method}: empty score/label join, nothing to evaluate")
    curve, max_f1, threshold = sweep(scores)
    labels = [s.label for s in scores]
    return MetricsReport(
        method=method,
        max_f1=max_f1,
        threshold_at_max_f1=threshold,
        auc_pr=auc_pr(curve),
        auc_roc=auc_roc(scores),
        curve=tuple(curve),
        positives=sum(labels),
        negatives=len(labels) - sum(labels),
        unresolved_triples=unresolved_triples,
    )


def join_labels(results: dict[str, "AttributionResult"], positive_indices: dict[str, set[int]],
                method: str) -> list[LabeledScore]:
    """Join per-sentence word scores with annotated mistranslation positions.

    ``positive_indices`` maps sentence id to the set of resolved source word
    indices labeled as mistranslations; every other word is a negative.
    """
    joined = []
    for sentence_id, result in results.items():
        positives = positive_indices.get(sentence_id, set())
        for word_index, score in enumerate(result.per_word_scores):
            joined.append(LabeledScore(
                sentence_id=sentence_id,
                word_index=word_index,
                score=float(score),
                label=word_index in positives,
                method=method,
            ))
    return joined


def evaluate_method(results: dict[str, "AttributionResult"], positive_indices: dict[str, set[int]],
                    method: str, unresolved_triples: int = 0) -> MetricsReport:
    scores = join_labels(results, positive_indices, method)
    return evaluate_scores(scores, method, unresolved_triples=unresolved_triples)


# ---------------------------------------------------------------------------
# Curve / summary export
# ---------------------------------------------------------------------------

def _write_curve_csv(path: Path, points) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CURVE_CSV_HEADER)
        for p in points:
            writer.writerow([repr(p.threshold), repr(p.precision), repr(p.recall),
                             repr(p.fpr), repr(p.tpr), p.tp, p.fp, p.tn, p.fn])


def export_curves(reports: list[MetricsReport], out_dir: str | Path) -> dict[str, Path]:
    """Write `{method}_pr.csv` and `{method}_roc.csv` per report plus
    `summary.json`. Deterministic: re-exporting identical reports writes
    byte-identical files."""
    if not reports:
        raise MetricsError("no reports to export")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    summary = {}
    for report in reports:
        pr_points = sorted(report.curve, key=lambda p: (p.recall, -p.precision))
        roc_points = sorted(report.curve, key=lambda p: (p.fpr, p.tpr))
        pr_path = out_dir / f"{report.method}_pr.csv"
        roc_path = out_dir / f"{report.method}_roc.csv"
        _write_curve_csv(pr_path, pr_points)
        _write_curve_csv(roc_path, roc_points)
        written[f"{report.method}_pr"] = pr_path
        written[f"{report.method}_roc"] = roc_path
        summary[report.method] = {
            "max_f1": report.max_f1,
            "threshold_at_max_f1": report.threshold_at_max_f1,
            "auc_pr": report.auc_pr,
            "auc_roc": report.auc_roc,
            "positives": report.positives,
            "negatives": report.negatives,
        }
    summary_path = out_dir / "summary.json"
    summary_path.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    written["summary"] = summary_path
    return written


def read_curve_csv(path: str | Path) -> list[CurvePoint]:
    points = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != CURVE_CSV_HEADER:
            raise MetricsError(f"{path}: unexpected curve CSV header {reader.fieldnames}")
        for row in reader:
            points.append(CurvePoint(
                threshold=float(row["threshold"]),
                precision=float(row["precision"]),
                recall=float(row["recall"]),
                fpr=float(row["fpr"]),
                tpr=float(row["tpr"]),
                tp=int(row["tp"]), fp=int(row["fp"]), tn=int(row["tn"]), fn=int(row["fn"]),
            ))
    return points


def render_curves(csv_dir: str | Path, out_dir: str | Path | None = None) -> tuple[Path, Path]:
    """Render PR and ROC panels from exported curve CSVs into two PNGs."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    csv_dir = Path(csv_dir)
    out_dir = Path(out_dir) if out_dir else csv_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    pr_files = sorted(csv_dir.glob("*_pr.csv"))
    roc_files = sorted(csv_dir.glob("*_roc.csv"))
    if not pr_files and not roc_files:
        raise MetricsError(f"no curve CSVs found in {csv_dir}")

    fig, ax = plt.subplots(figsize=(5, 4))
    for path in pr_files:
        points = read_curve_csv(path)
        ax.plot([p.recall for p in points], [p.precision for p in points],
                label=path.name.removesuffix("_pr.csv"))
    ax.set_xlabel("Recall")
    ax.set_ylabel("Precision")
    ax.set_title("Precision-Recall")
    ax.legend()
    pr_png = out_dir / "pr_curves.png"
    fig.savefig(pr_png, dpi=120, bbox_inches="tight")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 4))
    for path in roc_files:
        points = read_curve_csv(path)
        ax.plot([p.fpr for p in points], [p.tpr for p in points],
                label=path.name.removesuffix("_roc.csv"))
    ax.plot([0, 1], [0, 1], linestyle=":", color="gray", linewidth=1)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_title("ROC")
    ax.legend()
    roc_png = out_dir / "roc_curves.png"
    fig.savefig(roc_png, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return pr_png, roc_png
