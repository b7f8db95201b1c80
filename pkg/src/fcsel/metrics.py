"""AUC, Logloss, relative AUC improvement, and evaluation reports."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

EPS_P = 1e-7
NOTEWORTHY = 0.001


class UndefinedMetricError(ValueError):
    pass


def auc(labels, scores) -> float:
    """Mann-Whitney AUC with average ranks for ties (a tie counts 1/2)."""
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {s.shape}")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative label")
    ranks = rankdata(s, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def logloss(labels, scores) -> float:
    y = np.asarray(labels, dtype=np.float64)
    p = np.asarray(scores, dtype=np.float64)
    if y.shape != p.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {p.shape}")
    p = np.clip(p, EPS_P, 1.0 - EPS_P)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def rel_imp(auc_method: float, auc_base: float) -> float:
    """Relative AUC lift over a baseline in percent, measured from 0.5."""
    if auc_base <= 0.5:
        raise UndefinedMetricError(f"baseline AUC {auc_base} must exceed 0.5")
    return ((auc_method - 0.5) / (auc_base - 0.5) - 1.0) * 100.0


@dataclass(frozen=True)
class MetricsReport:
    model_id: str
    split_tag: str
    n_records: int
    auc: float
    logloss: float
    baseline_id: str | None = None
    rel_imp: float | None = None
    noteworthy: bool | None = None

    def to_json(self) -> dict:
        return asdict(self)


def evaluate(model_id: str, labels, probs, split_tag: str = "test", baseline: MetricsReport | None = None) -> MetricsReport:
    a = auc(labels, probs)
    ll = logloss(labels, probs)
    if baseline is None:
        return MetricsReport(model_id, split_tag, len(labels), a, ll)
    if baseline.n_records != len(labels) or baseline.split_tag != split_tag:
        raise ValueError("baseline report was computed on a different dataset")
    noteworthy = (a - baseline.auc) >= NOTEWORTHY or (baseline.logloss - ll) >= NOTEWORTHY
    return MetricsReport(model_id, split_tag, len(labels), a, ll, baseline.model_id, rel_imp(a, baseline.auc), noteworthy)


def append_results(path: str | Path, run_id: str, config_hash: str, report: MetricsReport) -> None:
    """Append one JSON line per report to a results ledger."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    row = {"run_id": run_id, "config_hash": config_hash, **report.to_json()}
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(row, sort_keys=True) + "\n")
