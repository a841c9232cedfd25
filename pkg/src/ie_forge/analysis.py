"""Metric/human-rating correlation and inter-annotator agreement.

Coefficients are hand-rolled on numpy so their single definition is the
one the oracle suites pin down: Pearson product-moment, Spearman as
Pearson over average ranks, Kendall tau-b with tie correction, and
Fleiss' kappa over an items x categories count matrix. Degenerate inputs
produce NaN (the undefined-marker), never a silent 0.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .metrics import InstanceEval

METHODS = ("pearson", "spearman", "kendall")

HEADER_RATING_VALUES = {"A": 3.0, "B": 2.0, "C": 1.0}
CONTENT_RATING_VALUES = {"A": 4.0, "B": 3.0, "C": 2.0, "D": 1.0}

_HEADER_METRICS = ("header_exact_f1", "header_soft_f1")
_CONTENT_METRICS = ("content_exact_f1", "content_semantic_f1", "content_rouge_l_f1")


class LengthMismatch(ValueError):
    """Paired series have different lengths."""


class UnevenRaterCount(ValueError):
    """Fleiss' kappa requires the same number of raters per item."""


class MissingRatings(ValueError):
    """Instances lack the human ratings needed for correlation."""

    def __init__(self, ids: Sequence[str]):
        self.ids = list(ids)
        super().__init__(f"no ratings for instances: {', '.join(self.ids)}")


@dataclass(frozen=True)
class HumanRating:
    """One annotator's header/content rating of one instance."""

    instance_id: str
    annotator_id: str
    header_rating: str
    content_rating: str

    def __post_init__(self) -> None:
        if self.header_rating not in HEADER_RATING_VALUES:
            raise ValueError(f"bad header rating {self.header_rating!r}")
        if self.content_rating not in CONTENT_RATING_VALUES:
            raise ValueError(f"bad content rating {self.content_rating!r}")


def average_ranks(x: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    arr = np.asarray(x, dtype=np.float64)
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(len(arr), dtype=np.float64)
    i = 0
    while i < len(arr):
        j = i
        while j + 1 < len(arr) and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        mean_rank = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = mean_rank
        i = j + 1
    return ranks


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        return math.nan
    return float(xc @ yc) / denom


def _kendall_tau_b(x: np.ndarray, y: np.ndarray) -> float:
    n = len(x)
    concordant = discordant = 0
    ties_x = ties_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i] - x[j]
            dy = y[i] - y[j]
            if dx == 0 and dy == 0:
                ties_x += 1
                ties_y += 1
            elif dx == 0:
                ties_x += 1
            elif dy == 0:
                ties_y += 1
            elif (dx > 0) == (dy > 0):
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) // 2
    denom = math.sqrt((n0 - ties_x) * (n0 - ties_y))
    if denom == 0.0:
        return math.nan
    return (concordant - discordant) / denom


def correlation(x: Sequence[float], y: Sequence[float], method: str) -> float:
    """Pearson / Spearman / Kendall tau-b coefficient of two paired series.

    Raises LengthMismatch on unequal lengths; constant series yield NaN.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if len(x) != len(y):
        raise LengthMismatch(f"{len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ValueError("need at least two points")
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if method == "pearson":
        return _pearson(xa, ya)
    if method == "spearman":
        return _pearson(average_ranks(xa), average_ranks(ya))
    return _kendall_tau_b(xa, ya)


def fleiss_kappa(counts) -> float:
    """Fleiss' kappa from an items x categories rating-count matrix.

    Every item must carry the same number of ratings (n >= 2). When the
    expected agreement is 1 (all mass in one category) the value is NaN.
    """
    m = np.asarray(counts, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError("counts must be a non-empty 2-D matrix")
    if (m < 0).any() or not np.all(m == np.round(m)):
        raise ValueError("counts must be non-negative integers")
    row_sums = m.sum(axis=1)
    n = row_sums[0]
    if n < 2 or not np.all(row_sums == n):
        raise UnevenRaterCount(
            "every item needs the same number of raters (>= 2)"
        )
    p_i = ((m * m).sum(axis=1) - n) / (n * (n - 1))
    p_bar = float(p_i.mean())
    p_j = m.sum(axis=0) / m.sum()
    p_e = float(p_j @ p_j)
    if p_e == 1.0:
        return math.nan
    return (p_bar - p_e) / (1.0 - p_e)


@dataclass
class CorrelationReport:
    """Pearson/Spearman/Kendall per metric, plus agreement kappas."""

    coefficients: dict[str, dict[str, float]]
    kappa_header: float
    kappa_content: float
    n_instances: int

    def to_dict(self) -> dict:
        def clean(v: float) -> float | None:
            return None if math.isnan(v) else v

        return {
            "coefficients": {
                metric: {m: clean(v) for m, v in row.items()}
                for metric, row in self.coefficients.items()
            },
            "kappa_header": clean(self.kappa_header),
            "kappa_content": clean(self.kappa_content),
            "n_instances": self.n_instances,
        }


def _mean_rating(
    ratings: Sequence[HumanRating], facet: str
) -> dict[str, float]:
    values = HEADER_RATING_VALUES if facet == "header" else CONTENT_RATING_VALUES
    field = "header_rating" if facet == "header" else "content_rating"
    per_instance: dict[str, list[float]] = defaultdict(list)
    for r in ratings:
        per_instance[r.instance_id].append(values[getattr(r, field)])
    return {k: float(np.mean(v)) for k, v in per_instance.items()}


def rating_count_matrix(
    ratings: Sequence[HumanRating], facet: str
) -> np.ndarray:
    """Items x categories count matrix for one rating facet."""
    scale = ("A", "B", "C") if facet == "header" else ("A", "B", "C", "D")
    field = "header_rating" if facet == "header" else "content_rating"
    by_item: dict[str, list[str]] = defaultdict(list)
    for r in ratings:
        by_item[r.instance_id].append(getattr(r, field))
    items = sorted(by_item)
    m = np.zeros((len(items), len(scale)), dtype=np.int64)
    for i, item in enumerate(items):
        for label in by_item[item]:
            m[i, scale.index(label)] += 1
    return m


def correlate_metrics(
    evals: Sequence[InstanceEval], ratings: Sequence[HumanRating]
) -> CorrelationReport:
    """Correlate each automatic metric with annotator-averaged ratings.

    Header metrics pair with header ratings, content metrics with content
    ratings; each instance's ratings are averaged across annotators first.
    """
    evals = list(evals)
    rated_ids = {r.instance_id for r in ratings}
    missing = [e.id for e in evals if e.id not in rated_ids]
    if missing:
        raise MissingRatings(missing)

    header_avg = _mean_rating(ratings, "header")
    content_avg = _mean_rating(ratings, "content")

    coefficients: dict[str, dict[str, float]] = {}
    for metric in InstanceEval.METRICS:
        human = header_avg if metric in _HEADER_METRICS else content_avg
        xs = [getattr(e, metric) for e in evals]
        ys = [human[e.id] for e in evals]
        coefficients[metric] = {
            m: correlation(xs, ys, m) for m in METHODS
        }

    return CorrelationReport(
        coefficients=coefficients,
        kappa_header=fleiss_kappa(rating_count_matrix(ratings, "header")),
        kappa_content=fleiss_kappa(rating_count_matrix(ratings, "content")),
        n_instances=len(evals),
    )
