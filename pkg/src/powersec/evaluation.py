"""Confusion matrix, accuracy, Cohen's kappa and per-class error.

Matrices are indexed by class code (normal, alarm, emergency1, emergency2);
reports list classes in the published order alarm, emergency1, emergency2,
normal.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .security import REPORT_ORDER, SecurityClass

K = len(SecurityClass)


def confusion_matrix(predictions, truth, n_classes: int = K) -> np.ndarray:
    """``counts[actual, predicted]``."""
    p = np.asarray([int(v) for v in predictions], dtype=np.int64)
    t = np.asarray([int(v) for v in truth], dtype=np.int64)
    if len(p) != len(t):
        raise ValueError(f"length mismatch: {len(p)} predictions, {len(t)} labels")
    if len(p) == 0:
        raise ValueError("empty input")
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (t, p), 1)
    return m


def to_report_order(matrix) -> np.ndarray:
    idx = [int(c) for c in REPORT_ORDER]
    return np.asarray(matrix)[np.ix_(idx, idx)]


def from_report_order(matrix) -> np.ndarray:
    """Inverse of :func:`to_report_order`."""
    m = np.asarray(matrix)
    out = np.zeros_like(m)
    idx = [int(c) for c in REPORT_ORDER]
    out[np.ix_(idx, idx)] = m
    return out


def accuracy(matrix) -> float:
    m = np.asarray(matrix, dtype=float)
    return float(np.trace(m) / m.sum())


def expected_accuracy(matrix) -> float:
    m = np.asarray(matrix, dtype=float)
    n = m.sum()
    return float(np.sum(m.sum(axis=1) * m.sum(axis=0)) / (n * n))


def kappa(matrix) -> float:
    """``(O - E) / (1 - E)``; NaN when ``E == 1`` (a single class)."""
    o, e = accuracy(matrix), expected_accuracy(matrix)
    if e >= 1.0:
        return float("nan")
    return (o - e) / (1.0 - e)


def per_class_error(matrix) -> np.ndarray:
    """``1 - diagonal / row total``; NaN for classes with no samples."""
    m = np.asarray(matrix, dtype=float)
    rows = m.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(rows > 0, 1.0 - np.diag(m) / rows, np.nan)


@dataclass(frozen=True)
class EvaluationReport:
    matrix: np.ndarray
    observed_accuracy: float
    expected_accuracy: float
    kappa: float
    per_class_error: np.ndarray

    @classmethod
    def from_matrix(cls, matrix) -> "EvaluationReport":
        m = np.asarray(matrix, dtype=np.int64)
        return cls(m, accuracy(m), expected_accuracy(m), kappa(m), per_class_error(m))

    def to_dict(self) -> dict:
        labels = [c.label for c in REPORT_ORDER]
        err = self.per_class_error
        return {
            "classes": labels,
            "confusion_matrix": to_report_order(self.matrix).tolist(),
            "accuracy": self.observed_accuracy,
            "expected_accuracy": self.expected_accuracy,
            "kappa": self.kappa,
            "class_error": {c.label: (None if np.isnan(err[int(c)]) else float(err[int(c)]))
                            for c in REPORT_ORDER},
        }

    def format_table(self) -> str:
        """Confusion matrix with a class-error column, percentages to 2 decimals."""
        labels = [c.label for c in REPORT_ORDER]
        m = to_report_order(self.matrix)
        width = max(len(s) for s in labels) + 2
        lines = ["".ljust(width) + "".join(s.rjust(width) for s in labels) + "class error".rjust(13)]
        for c, row in zip(REPORT_ORDER, m):
            e = self.per_class_error[int(c)]
            lines.append(c.label.ljust(width) + "".join(str(v).rjust(width) for v in row)
                         + ("n/a" if np.isnan(e) else f"{e:.2f}").rjust(13))
        lines.append(f"accuracy {100 * self.observed_accuracy:.2f}%   "
                     f"kappa {100 * self.kappa:.2f}%")
        return "\n".join(lines)

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path) -> None:
        labels = [c.label for c in REPORT_ORDER]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["actual"] + labels + ["class_error"])
            for c, row in zip(REPORT_ORDER, to_report_order(self.matrix)):
                e = self.per_class_error[int(c)]
                w.writerow([c.label] + [int(v) for v in row] + ["" if np.isnan(e) else repr(float(e))])


def evaluate(predictions, truth) -> EvaluationReport:
    return EvaluationReport.from_matrix(confusion_matrix(predictions, truth))


def comparison_table(results: dict[str, EvaluationReport]) -> str:
    """Accuracy and kappa per algorithm, one column each."""
    names = list(results)
    width = max([10] + [len(n) + 2 for n in names])
    lines = ["metric".ljust(10) + "".join(n.rjust(width) for n in names)]
    lines.append("accuracy".ljust(10) + "".join(
        f"{100 * results[n].observed_accuracy:.2f}".rjust(width) for n in names))
    lines.append("kappa".ljust(10) + "".join(
        f"{100 * results[n].kappa:.2f}".rjust(width) for n in names))
    return "\n".join(lines)
