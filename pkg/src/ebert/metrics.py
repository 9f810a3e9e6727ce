"""ENCODE-DREAM scoring metrics and rank aggregation.

Score ties are treated as one threshold: tied predictions enter the positive
set together.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

METRICS = ("auprc", "auroc", "recall_at_10fdr", "recall_at_50fdr")


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        y = np.asarray(self.labels).astype(np.int64)
        if s.shape != y.shape or s.ndim != 1:
            raise ValueError("scores and labels must be 1-D and aligned")
        if not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0/1")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)


@dataclass(frozen=True)
class MetricReport:
    auprc: float
    auroc: float
    recall_at_10fdr: float
    recall_at_50fdr: float

    def as_dict(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in METRICS}


def _curve(scores, labels, metric: str):
    """Cumulative (tp, fp) at each distinct score threshold, descending."""
    p = PredictionSet(scores, labels)
    n_pos = int(p.labels.sum())
    if n_pos == 0:
        raise MetricError(f"{metric}: no positive labels")
    order = np.argsort(-p.scores, kind="stable")
    s, y = p.scores[order], p.labels[order]
    last_of_group = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(y)[last_of_group]
    fp = np.cumsum(1 - y)[last_of_group]
    return tp.astype(np.float64), fp.astype(np.float64), n_pos, len(y) - n_pos


def auprc(scores, labels) -> float:
    """Step-interpolated average precision: sum_n (R_n - R_{n-1}) * P_n."""
    tp, fp, n_pos, _ = _curve(scores, labels, "auprc")
    recall = tp / n_pos
    precision = tp / (tp + fp)
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def auroc(scores, labels) -> float:
    """Mann-Whitney AUC with ties counted as one half."""
    p = PredictionSet(scores, labels)
    n_pos = int(p.labels.sum())
    n_neg = len(p.labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError(f"auroc: needs both classes (positives={n_pos}, negatives={n_neg})")
    _, inv, counts = np.unique(p.scores, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    mid_rank = upper - (counts - 1) / 2.0  # average 1-based rank of each tie group
    rank_sum = mid_rank[inv][p.labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def recall_at_fdr(scores, labels, fdr: float) -> float:
    """Largest recall at a threshold whose precision is >= 1 - fdr; 0 if none."""
    if not 0.0 < fdr < 1.0:
        raise ValueError(f"fdr must be in (0, 1), got {fdr}")
    tp, fp, n_pos, _ = _curve(scores, labels, f"recall_at_{round(fdr * 100)}fdr")
    ok = tp / (tp + fp) >= (1.0 - fdr) - 1e-12
    return float(tp[ok].max() / n_pos) if ok.any() else 0.0


def evaluate(scores, labels) -> MetricReport:
    return MetricReport(
        auprc=auprc(scores, labels),
        auroc=auroc(scores, labels),
        recall_at_10fdr=recall_at_fdr(scores, labels, 0.10),
        recall_at_50fdr=recall_at_fdr(scores, labels, 0.50),
    )


# --------------------------------------------------------------------------
# ranking


def competition_rank(values: Sequence[float], higher_is_better: bool = True) -> list[int]:
    """1-based ranks; tied values share the minimum rank ("1224" ranking)."""
    v = np.asarray(values, dtype=np.float64)
    key = -v if higher_is_better else v
    return [int((key < key[i]).sum()) + 1 for i in range(len(v))]


@dataclass(frozen=True)
class Ranking:
    models: list[str]  # ordered best first; ties broken by name
    mean_rank: dict[str, float]
    rank: dict[str, int]
    ties: list[tuple[str, ...]]


def _rank_from_means(means: Mapping[str, float]) -> Ranking:
    names = list(means)
    ranks = competition_rank([means[n] for n in names], higher_is_better=False)
    rank = dict(zip(names, ranks))
    order = sorted(names, key=lambda n: (means[n], n))
    groups: dict[int, list[str]] = {}
    for n in order:
        groups.setdefault(rank[n], []).append(n)
    ties = [tuple(g) for g in groups.values() if len(g) > 1]
    return Ranking(order, dict(means), rank, ties)


def rank_models(table: Mapping[str, Mapping[str, int]]) -> Ranking:
    """Overall leaderboard from per-dataset ranks ``table[dataset][model]``."""
    if not table:
        raise ValueError("empty rank table")
    models = list(next(iter(table.values())))
    for ds, row in table.items():
        missing = set(models) - set(row)
        if missing:
            raise ValueError(f"{ds}: missing rank for {sorted(missing)}")
    means = {m: float(np.mean([table[ds][m] for ds in table])) for m in models}
    return _rank_from_means(means)


def rank_dataset(reports: Mapping[str, MetricReport | Mapping[str, float]], by: str = "rank") -> Ranking:
    """Rank models on one dataset from their four metrics.

    ``by="rank"`` averages the per-metric ranks (higher metric = better);
    ``by="value"`` averages the raw metric values instead.
    """
    if len(reports) < 2:
        raise ValueError("need at least two models to rank")
    rows = {}
    for m, r in reports.items():
        d = r.as_dict() if isinstance(r, MetricReport) else dict(r)
        missing = [k for k in METRICS if k not in d]
        if missing:
            raise ValueError(f"{m}: missing metric(s) {missing}")
        rows[m] = d
    names = list(rows)
    if by == "rank":
        per_metric = [competition_rank([rows[n][k] for n in names]) for k in METRICS]
        means = {n: float(np.mean([pm[i] for pm in per_metric])) for i, n in enumerate(names)}
    elif by == "value":
        # negate so that a lower mean is better, as with ranks
        means = {n: -float(np.mean([rows[n][k] for k in METRICS])) for n in names}
    else:
        raise ValueError(f"by must be 'rank' or 'value', got {by!r}")
    return _rank_from_means(means)
