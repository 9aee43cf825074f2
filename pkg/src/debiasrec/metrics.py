"""Per-impression ranking metrics, aggregate evaluation, CTR-by-bucket
analysis, and the Pearson chi-square dependence test."""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

# Upper critical values of the chi-square distribution at alpha = 0.01 for
# dof 1..100 (standard table values).
CHI2_CRIT_001 = (
    6.634896601, 9.210340372, 11.344866730, 13.276704136,
    15.086272469, 16.811893830, 18.475306907, 20.090235030,
    21.665994333, 23.209251159, 24.724970311, 26.216967306,
    27.688249610, 29.141237741, 30.577914167, 31.999926909,
    33.408663605, 34.805305735, 36.190869129, 37.566234787,
    38.932172684, 40.289360438, 41.638398119, 42.979820139,
    44.314104896, 45.641682666, 46.962942125, 48.278235770,
    49.587884473, 50.892181312, 52.191394833, 53.485771836,
    54.775539760, 56.060908748, 57.342073434, 58.619214502,
    59.892500045, 61.162086764, 62.428121016, 63.690739752,
    64.950071335, 66.206236284, 67.459347922, 68.709512969,
    69.956832066, 71.201400248, 72.443307377, 73.682638520,
    74.919474308, 76.153891249, 77.385962016, 78.615755715,
    79.843338122, 81.068771906, 82.292116829, 83.513429932,
    84.732765705, 85.950176245, 87.165711400, 88.379418901,
    89.591344491, 90.801532031, 92.010023614, 93.216859660,
    94.422079008, 95.625719000, 96.827815564, 98.028403283,
    99.227515471, 100.425184229, 101.621440514, 102.816314189,
    104.009834082, 105.202028030, 106.392922930, 107.582544781,
    108.770918726, 109.958069091, 111.144019423, 112.328792520,
    113.512410470, 114.694894678, 115.876265893, 117.056544243,
    118.235749254, 119.413899877, 120.591014513, 121.767111032,
    122.942206798, 124.116318686, 125.289463102, 126.461656000,
    127.632912901, 128.803248910, 129.972678727, 131.141216667,
    132.308876672, 133.475672323, 134.641616856, 135.806723171,
)


def _ranked(scores) -> np.ndarray:
    """Indices ordering scores descending, ties kept in input order."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def auc(scores, labels) -> Optional[float]:
    """Probability a random (positive, negative) pair is ordered correctly.

    Ties get half credit.  Returns None when either class is missing.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    # Mann-Whitney with midranks: identical to pairwise counting with
    # half credit for ties.
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(labels.size)
    sorted_scores = scores[order]
    i = 0
    while i < labels.size:
        j = i
        while j + 1 < labels.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    u_stat = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


def mrr(scores, labels) -> Optional[float]:
    """Mean reciprocal rank over the positives; None with no positive."""
    labels = np.asarray(labels)
    if not np.any(labels == 1):
        return None
    order = _ranked(scores)
    rr = [1.0 / (rank + 1) for rank, idx in enumerate(order) if labels[idx] == 1]
    return float(np.mean(rr))


def ndcg_at_k(scores, labels, k: int) -> Optional[float]:
    """Binary-relevance nDCG@k with stable tie handling."""
    labels = np.asarray(labels, dtype=np.float64)
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        return None
    order = _ranked(scores)
    gains = labels[order[:k]]
    discounts = 1.0 / np.log2(np.arange(2, gains.size + 2))
    dcg = float((gains * discounts).sum())
    ideal_hits = min(n_pos, k)
    idcg = float((1.0 / np.log2(np.arange(2, ideal_hits + 2))).sum())
    return dcg / idcg


@dataclass
class EvalReport:
    auc: float
    mrr: float
    ndcg5: float
    ndcg10: float
    n_impressions: int
    skipped: Dict[str, int] = field(default_factory=dict)
    rows: Optional[List[dict]] = None

    def as_dict(self):
        return {"auc": self.auc, "mrr": self.mrr,
                "ndcg5": self.ndcg5, "ndcg10": self.ndcg10}

    def to_csv(self) -> str:
        lines = ["metric,value,impressions,skipped"]
        for name in ("auc", "mrr", "ndcg5", "ndcg10"):
            lines.append(f"{name},{getattr(self, name):.6f},"
                         f"{self.n_impressions},{self.skipped.get(name, 0)}")
        return "\n".join(lines) + "\n"

    def format_table(self) -> str:
        head = f"{'metric':8s} {'value':>8s} {'skipped':>8s}"
        rows = [head, "-" * len(head)]
        for name in ("auc", "mrr", "ndcg5", "ndcg10"):
            rows.append(f"{name:8s} {getattr(self, name):8.4f} "
                        f"{self.skipped.get(name, 0):8d}")
        rows.append(f"impressions evaluated: {self.n_impressions}")
        return "\n".join(rows)


def evaluate(impressions: Sequence, score_fn: Callable[[int, object], np.ndarray],
             keep_rows: bool = False) -> EvalReport:
    """Macro-average metrics over impressions.

    ``score_fn(i, impression)`` returns one score per candidate.  Metrics
    undefined for an impression (missing positives or negatives) are
    skipped and counted.  Aggregation is a fixed-order sum, so the result
    does not depend on evaluation order.
    """
    if not impressions:
        raise ValueError("no impressions to evaluate")
    sums = {"auc": 0.0, "mrr": 0.0, "ndcg5": 0.0, "ndcg10": 0.0}
    counts = {k: 0 for k in sums}
    skipped = {k: 0 for k in sums}
    rows: Optional[List[dict]] = [] if keep_rows else None
    for i, imp in enumerate(impressions):
        labels = np.array([c.label for c in imp.candidates])
        scores = np.asarray(score_fn(i, imp), dtype=np.float64)
        vals = {"auc": auc(scores, labels), "mrr": mrr(scores, labels),
                "ndcg5": ndcg_at_k(scores, labels, 5),
                "ndcg10": ndcg_at_k(scores, labels, 10)}
        for k, v in vals.items():
            if v is None:
                skipped[k] += 1
            else:
                sums[k] += v
                counts[k] += 1
        if rows is not None:
            rows.append({"impression_id": imp.impression_id, **vals})
    if all(c == 0 for c in counts.values()):
        raise ValueError("no impression had a defined metric")
    means = {k: (sums[k] / counts[k] if counts[k] else float("nan")) for k in sums}
    return EvalReport(auc=means["auc"], mrr=means["mrr"], ndcg5=means["ndcg5"],
                      ndcg10=means["ndcg10"], n_impressions=len(impressions),
                      skipped=skipped, rows=rows)


@dataclass
class CtrTable:
    """clicks / displays per bucket."""
    clicks: Dict[int, int]
    displays: Dict[int, int]

    def ctr(self, bucket: int) -> float:
        return self.clicks[bucket] / self.displays[bucket]

    def buckets(self) -> List[int]:
        return sorted(self.displays)

    def to_csv(self, label: str) -> str:
        lines = [f"{label},displays,clicks,ctr"]
        for b in self.buckets():
            lines.append(f"{b},{self.displays[b]},{self.clicks[b]},{self.ctr(b):.6f}")
        return "\n".join(lines) + "\n"


def ctr_by_bucket(impressions: Sequence) -> Tuple[CtrTable, CtrTable]:
    """CTR per display position and per size category."""
    if not impressions:
        raise ValueError("empty impression log")
    by_pos = CtrTable({}, {})
    by_size = CtrTable({}, {})
    for imp in impressions:
        for c in imp.candidates:
            for table, key in ((by_pos, c.position), (by_size, c.size)):
                table.displays[key] = table.displays.get(key, 0) + 1
                table.clicks[key] = table.clicks.get(key, 0) + c.label
    return by_pos, by_size


@dataclass
class ContingencyTable:
    counts: np.ndarray  # (rows, cols) non-negative integers
    row_labels: List
    col_labels: List


def displays_contingency(impressions: Sequence, max_position: int = 10) -> ContingencyTable:
    """Display counts by size (rows) and position bucket (columns).

    Positions beyond ``max_position`` fold into the last bucket.
    """
    counts = np.zeros((4, max_position), dtype=np.int64)
    for imp in impressions:
        for c in imp.candidates:
            counts[c.size, min(c.position, max_position) - 1] += 1
    return ContingencyTable(counts=counts,
                            row_labels=["mini", "small", "medium", "large"],
                            col_labels=list(range(1, max_position + 1)))


@dataclass
class ChiSquareResult:
    statistic: float
    dof: int
    critical_value: float
    significant_at_001: bool


def chi_square(table: ContingencyTable) -> ChiSquareResult:
    """Pearson independence test; significance against alpha = 0.01.

    All-zero rows/columns are dropped before the test.
    """
    counts = np.asarray(table.counts, dtype=np.float64)
    counts = counts[counts.sum(axis=1) > 0][:, counts.sum(axis=0) > 0]
    r, c = counts.shape
    if r < 2 or c < 2:
        raise ValueError("contingency table needs at least 2 non-empty rows and columns")
    total = counts.sum()
    expected = np.outer(counts.sum(axis=1), counts.sum(axis=0)) / total
    stat = float(((counts - expected) ** 2 / expected).sum())
    dof = (r - 1) * (c - 1)
    if dof > len(CHI2_CRIT_001):
        raise ValueError(f"no tabulated critical value for dof {dof}")
    crit = CHI2_CRIT_001[dof - 1]
    return ChiSquareResult(statistic=stat, dof=dof, critical_value=crit,
                           significant_at_001=stat > crit)
