"""Four-dimensional quality filtering of raw synthesized instances.

Filters run in a fixed order - validity, informativeness, consistency,
faithfulness - short-circuiting at the first rejection. Consistency and
faithfulness phrase natural-language-inference hypotheses ("extract H
from the text" / "The H is C") and accept an instance only when the mean
entailment score is strictly greater than the threshold, so a mean of
exactly 0.5 rejects.
"""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field, fields
from typing import Protocol, Sequence

from .tables import EmptyHeader, NoTableFound, Table, parse_table, table_shape

DIMENSIONS = ("validity", "informativeness", "consistency", "faithfulness")

_TOKEN_RE = re.compile(r"[0-9a-z]+")

# Template words of the two hypothesis patterns; never evidence on their own.
_HYPOTHESIS_STOPWORDS = frozenset({"extract", "from", "the", "text", "is"})


class ScorerUnavailable(RuntimeError):
    """The configured entailment scorer cannot be reached."""


class EntailmentScorer(Protocol):
    def score(self, premise: str, hypothesis: str) -> float: ...


@dataclass(frozen=True)
class FilterThresholds:
    """Informativeness bounds and entailment thresholds.

    Defaults follow the reference procedure: rows + columns must exceed 3,
    columns must exceed 1, "N/A" cells must stay under 4, and both
    entailment means must exceed 0.5.
    """

    min_rows_plus_cols_exclusive: int = 3
    min_cols_exclusive: int = 1
    max_na_exclusive: int = 4
    consistency_threshold: float = 0.5
    faithfulness_threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.min_rows_plus_cols_exclusive < 0 or self.min_cols_exclusive < 0:
            raise ValueError("shape bounds must be non-negative")
        if self.max_na_exclusive < 0:
            raise ValueError("max_na_exclusive must be non-negative")
        for t in (self.consistency_threshold, self.faithfulness_threshold):
            if not 0.0 <= t <= 1.0:
                raise ValueError("entailment thresholds must be in [0, 1]")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class FilterCounts:
    raw: int = 0
    rejected_validity: int = 0
    rejected_informativeness: int = 0
    rejected_consistency: int = 0
    rejected_faithfulness: int = 0
    survivors: int = 0

    def rejected_total(self) -> int:
        return (
            self.rejected_validity
            + self.rejected_informativeness
            + self.rejected_consistency
            + self.rejected_faithfulness
        )

    def check_identity(self) -> None:
        if self.raw != self.survivors + self.rejected_total():
            raise AssertionError("raw != survivors + rejections")

    def to_dict(self) -> dict:
        return {
            "raw": self.raw,
            "rejected_validity": self.rejected_validity,
            "rejected_informativeness": self.rejected_informativeness,
            "rejected_consistency": self.rejected_consistency,
            "rejected_faithfulness": self.rejected_faithfulness,
            "survivors": self.survivors,
        }


@dataclass
class FilterReport:
    """Per-dimension rejection tallies, overall and per variant."""

    total: FilterCounts = field(default_factory=FilterCounts)
    per_variant: dict[str, FilterCounts] = field(default_factory=dict)

    def counts_for(self, variant: str) -> FilterCounts:
        return self.per_variant.setdefault(variant, FilterCounts())

    def check_identity(self) -> None:
        self.total.check_identity()
        for counts in self.per_variant.values():
            counts.check_identity()

    def to_dict(self) -> dict:
        return {
            "total": self.total.to_dict(),
            "per_variant": {
                v: c.to_dict() for v, c in sorted(self.per_variant.items())
            },
        }


@dataclass
class RawPair:
    """One raw synthesized item heading into (or out of) the filters."""

    pair_id: str
    instruction: str
    domain: str
    text: str
    category: str
    variant: str
    raw_table_output: str
    style: str | None = None
    paraphrased: bool = False
    leak_warning: bool = False
    explanation: str | None = None

    def to_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "instruction": self.instruction,
            "domain": self.domain,
            "text": self.text,
            "category": self.category,
            "variant": self.variant,
            "raw_table_output": self.raw_table_output,
            "style": self.style,
            "paraphrased": self.paraphrased,
            "leak_warning": self.leak_warning,
            "explanation": self.explanation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RawPair":
        return cls(
            pair_id=d["pair_id"],
            instruction=d["instruction"],
            domain=d["domain"],
            text=d["text"],
            category=d["category"],
            variant=d["variant"],
            raw_table_output=d["raw_table_output"],
            style=d.get("style"),
            paraphrased=bool(d.get("paraphrased", False)),
            leak_warning=bool(d.get("leak_warning", False)),
            explanation=d.get("explanation"),
        )


def _tokens(s: str) -> list[str]:
    return _TOKEN_RE.findall(s.lower())


def lexical_entailment_fallback(premise: str, hypothesis: str) -> float:
    """Content-token containment score, the offline entailment stand-in.

    Fraction of the hypothesis' content-token multiset (template stopwords
    removed) that is covered by the premise's token multiset. Deterministic
    and bounded to [0, 1]; an all-stopword hypothesis scores 0.
    """
    hyp = [t for t in _tokens(hypothesis) if t not in _HYPOTHESIS_STOPWORDS]
    if not hyp:
        return 0.0
    prem = Counter(_tokens(premise))
    hyp_counts = Counter(hyp)
    matched = sum(min(n, prem[tok]) for tok, n in hyp_counts.items())
    return min(max(matched / len(hyp), 0.0), 1.0)


class LexicalScorer:
    """EntailmentScorer backed by lexical_entailment_fallback."""

    def score(self, premise: str, hypothesis: str) -> float:
        return lexical_entailment_fallback(premise, hypothesis)

    def score_many(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        return [self.score(p, h) for p, h in pairs]


def _score_pairs(
    scorer: EntailmentScorer, pairs: Sequence[tuple[str, str]]
) -> list[float]:
    batch = getattr(scorer, "score_many", None)
    if callable(batch):
        return [float(s) for s in batch(pairs)]
    return [float(scorer.score(p, h)) for p, h in pairs]


def check_validity(raw_output: str) -> Table | None:
    """Parse the raw output; None means a validity rejection."""
    try:
        return parse_table(raw_output)
    except (NoTableFound, EmptyHeader):
        return None


def check_informativeness(
    t: Table, thresholds: FilterThresholds | None = None
) -> bool:
    """Shape-only rule: rows+cols > 3, cols > 1, N/A cells < 4 (defaults)."""
    th = thresholds or FilterThresholds()
    shape = table_shape(t)
    return (
        shape.n_rows + shape.n_cols > th.min_rows_plus_cols_exclusive
        and shape.n_cols > th.min_cols_exclusive
        and shape.n_na < th.max_na_exclusive
    )


def consistency_score(
    instruction: str, headers: Sequence[str], scorer: EntailmentScorer
) -> float:
    """Mean entailment of "extract H from the text" against the instruction."""
    if not headers:
        return 0.0
    pairs = [(instruction, f"extract {h} from the text") for h in headers]
    scores = _score_pairs(scorer, pairs)
    return sum(scores) / len(scores)


def faithfulness_score(
    text: str, t: Table, scorer: EntailmentScorer
) -> float:
    """Mean entailment of "The H is C" against the text, over non-N/A cells.

    A table with no scoreable cell (every content cell "N/A", or no content
    rows) is defined to score 0.
    """
    pairs = []
    for row in t.rows:
        for header, cell in zip(t.header, row):
            if cell.strip().lower() == "n/a":
                continue
            pairs.append((text, f"The {header} is {cell}"))
    if not pairs:
        return 0.0
    scores = _score_pairs(scorer, pairs)
    return sum(scores) / len(scores)


@dataclass
class FilterOutcome:
    pair: RawPair
    rejected_by: str | None
    table: Table | None


def filter_one(
    pair: RawPair,
    scorer: EntailmentScorer,
    thresholds: FilterThresholds | None = None,
) -> FilterOutcome:
    """Run the four filters in order on one raw item, short-circuiting."""
    th = thresholds or FilterThresholds()
    table = check_validity(pair.raw_table_output)
    if table is None:
        return FilterOutcome(pair, "validity", None)
    if not check_informativeness(table, th):
        return FilterOutcome(pair, "informativeness", table)
    if pair.category == "fixed":
        mean = consistency_score(pair.instruction, table.header, scorer)
        if not mean > th.consistency_threshold:
            return FilterOutcome(pair, "consistency", table)
    mean = faithfulness_score(pair.text, table, scorer)
    if not mean > th.faithfulness_threshold:
        return FilterOutcome(pair, "faithfulness", table)
    return FilterOutcome(pair, None, table)


def apply_filters(
    raws: Sequence[RawPair],
    scorer: EntailmentScorer,
    thresholds: FilterThresholds | None = None,
) -> tuple[list[FilterOutcome], FilterReport]:
    """Filter a batch; returns surviving outcomes and the tally report.

    Consistency applies to fixed-category items only (open instructions
    name no headers to agree with). The report satisfies
    raw == survivors + sum(rejections), per variant and in total.
    """
    th = thresholds or FilterThresholds()
    report = FilterReport()
    survivors: list[FilterOutcome] = []
    for pair in raws:
        outcome = filter_one(pair, scorer, th)
        for counts in (report.total, report.counts_for(pair.variant)):
            counts.raw += 1
            if outcome.rejected_by is None:
                counts.survivors += 1
            else:
                attr = f"rejected_{outcome.rejected_by}"
                setattr(counts, attr, getattr(counts, attr) + 1)
        if outcome.rejected_by is None:
            survivors.append(outcome)
    report.check_identity()
    return survivors, report
