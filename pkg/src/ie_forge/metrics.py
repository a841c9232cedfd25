"""Table evaluation metrics: exact/soft header match, content metrics, grouping.

Predicted tables are scored against gold tables in two parts: the header
row (how well the instruction was understood) and the content cells (how
well the information was extracted). Soft matching embeds strings, builds
the cosine-similarity matrix, and takes the optimal one-to-one assignment.
"""
from __future__ import annotations

import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .kernels import lcs_tokens, max_weight_assignment
from .tables import Table

CELL_SEP = "<c>"
ROW_SEP = "<r>"


class EmptyInput(ValueError):
    """Aggregation over an empty evaluation list."""


class EmbedderUnavailable(RuntimeError):
    """The configured embedding backend cannot be reached."""


class Embedder(Protocol):
    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


def normalize_string(s: str) -> str:
    """Trim, case-fold, and collapse internal whitespace."""
    return " ".join(s.split()).lower()


class HashingEmbedder:
    """Deterministic character n-gram feature hashing to unit vectors.

    Offline stand-in for a sentence embedder: identical strings map to
    identical vectors, unrelated strings are near-orthogonal in
    expectation. Signed hashing (crc32 bucket + sign bit) keeps dot
    products centered.
    """

    def __init__(self, dim: int = 256, ngram_sizes: tuple[int, ...] = (2, 3)):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim
        self.ngram_sizes = ngram_sizes

    def _features(self, text: str):
        padded = f"#{text}#"
        for n in self.ngram_sizes:
            for i in range(max(len(padded) - n + 1, 0)):
                yield padded[i : i + n]

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for k, text in enumerate(texts):
            vec = out[k]
            for gram in self._features(text):
                h = zlib.crc32(gram.encode("utf-8"))
                sign = 1.0 if h & 0x80000000 == 0 else -1.0
                vec[(h & 0x7FFFFFFF) % self.dim] += sign
            norm = np.linalg.norm(vec)
            if norm == 0.0:
                vec[0] = 1.0
            else:
                vec /= norm
        return out


class EqualityEmbedder:
    """One-hot embedder: equal strings coincide, distinct ones are orthogonal.

    Under this embedder soft matching degenerates to exact matching, which
    the test suite exploits. Capacity is bounded by ``dim`` distinct strings.
    """

    def __init__(self, dim: int = 4096):
        self.dim = dim
        self._index: dict[str, int] = {}

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for k, text in enumerate(texts):
            idx = self._index.setdefault(text, len(self._index))
            if idx >= self.dim:
                raise ValueError("EqualityEmbedder capacity exceeded")
            out[k, idx] = 1.0
        return out


def exact_match_f1(pred: Sequence[str], gold: Sequence[str]) -> float:
    """Multiset-intersection F1 over two string lists.

    Callers are expected to pass normalized strings; both-empty is defined
    as 1.0, one-sided-empty as 0.0.
    """
    if not pred and not gold:
        return 1.0
    if not pred or not gold:
        return 0.0
    cp, cg = Counter(pred), Counter(gold)
    tp = sum(min(n, cg[k]) for k, n in cp.items())
    return 2.0 * tp / (len(pred) + len(gold))


def soft_match_f1(
    pred: Sequence[str], gold: Sequence[str], embedder: Embedder
) -> float:
    """Similarity-weighted F1 via optimal assignment on the cosine matrix.

    Soft true-positive mass is the sum of matched similarities, each
    clamped to [0, 1].
    """
    if not pred and not gold:
        return 1.0
    if not pred or not gold:
        return 0.0
    vp = np.asarray(embedder.embed(list(pred)), dtype=np.float64)
    vg = np.asarray(embedder.embed(list(gold)), dtype=np.float64)
    sim = vp @ vg.T
    _, pairs = max_weight_assignment(sim)
    soft_tp = float(sum(min(max(sim[r, c], 0.0), 1.0) for r, c in pairs))
    return 2.0 * soft_tp / (len(pred) + len(gold))


def rouge_l_f1(pred_tokens: Sequence[str], gold_tokens: Sequence[str]) -> float:
    """LCS-based F1 over two token sequences; both-empty is 1.0."""
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    lcs = lcs_tokens(pred_tokens, gold_tokens)
    precision = lcs / len(pred_tokens)
    recall = lcs / len(gold_tokens)
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def linearize_content(t: Table) -> list[str]:
    """Flatten content cells row-major into tokens.

    Cells within a row are joined by the cell separator token, rows by the
    row separator token, and the result is whitespace-tokenized; the header
    row is excluded.
    """
    if not t.rows:
        return []
    rows = (f" {CELL_SEP} ".join(row) for row in t.rows)
    return f" {ROW_SEP} ".join(rows).split()


@dataclass
class InstanceEval:
    """Per-instance metric scores plus the metadata used for grouping."""

    id: str
    header_exact_f1: float
    header_soft_f1: float
    content_exact_f1: float
    content_semantic_f1: float
    content_rouge_l_f1: float
    valid: bool = True
    category: str | None = None
    source_type: str | None = None
    difficulty: str | None = None

    METRICS = (
        "header_exact_f1",
        "header_soft_f1",
        "content_exact_f1",
        "content_semantic_f1",
        "content_rouge_l_f1",
    )

    def scores(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in self.METRICS}

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            **self.scores(),
            "valid": self.valid,
            "category": self.category,
            "source_type": self.source_type,
            "difficulty": self.difficulty,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InstanceEval":
        return cls(
            id=d["id"],
            header_exact_f1=float(d["header_exact_f1"]),
            header_soft_f1=float(d["header_soft_f1"]),
            content_exact_f1=float(d["content_exact_f1"]),
            content_semantic_f1=float(d["content_semantic_f1"]),
            content_rouge_l_f1=float(d["content_rouge_l_f1"]),
            valid=bool(d.get("valid", True)),
            category=d.get("category"),
            source_type=d.get("source_type"),
            difficulty=d.get("difficulty"),
        )


def _normalized(t: Table) -> Table:
    return Table(
        header=[normalize_string(h) for h in t.header],
        rows=[[normalize_string(c) for c in row] for row in t.rows],
    )


def _zero_eval(eval_id: str, meta: dict | None) -> InstanceEval:
    meta = meta or {}
    return InstanceEval(
        id=eval_id,
        header_exact_f1=0.0,
        header_soft_f1=0.0,
        content_exact_f1=0.0,
        content_semantic_f1=0.0,
        content_rouge_l_f1=0.0,
        valid=False,
        category=meta.get("category"),
        source_type=meta.get("source_type"),
        difficulty=meta.get("difficulty"),
    )


def evaluate_instance(
    pred: Table | None,
    gold: Table,
    meta: dict | None = None,
    embedder: Embedder | None = None,
) -> InstanceEval:
    """Score one prediction against its gold table.

    ``pred=None`` marks an unparseable prediction: every metric is 0 and
    the eval is flagged invalid. Content cells are aligned column-wise by
    the optimal header assignment and row-wise by index; cells left
    unaligned count against the denominators only.
    """
    meta = meta or {}
    eval_id = str(meta.get("id", ""))
    if pred is None:
        return _zero_eval(eval_id, meta)
    embedder = embedder or HashingEmbedder()

    p = _normalized(pred)
    g = _normalized(gold)

    header_exact = exact_match_f1(p.header, g.header)
    header_soft = soft_match_f1(p.header, g.header, embedder)

    vp = np.asarray(embedder.embed(p.header), dtype=np.float64)
    vg = np.asarray(embedder.embed(g.header), dtype=np.float64)
    _, col_pairs = max_weight_assignment(vp @ vg.T)

    aligned: list[tuple[str, str]] = []
    for pc, gc in col_pairs:
        for r in range(min(p.n_rows, g.n_rows)):
            aligned.append((p.rows[r][pc], g.rows[r][gc]))
    n_pred_cells = p.n_rows * p.n_cols
    n_gold_cells = g.n_rows * g.n_cols

    if n_pred_cells == 0 and n_gold_cells == 0:
        content_exact = content_semantic = 1.0
    elif not aligned:
        content_exact = content_semantic = 0.0
    else:
        tp = sum(1 for a, b in aligned if a == b)
        content_exact = 2.0 * tp / (n_pred_cells + n_gold_cells)
        va = np.asarray(embedder.embed([a for a, _ in aligned]))
        vb = np.asarray(embedder.embed([b for _, b in aligned]))
        sims = np.einsum("ij,ij->i", va, vb)
        soft_tp = float(np.clip(sims, 0.0, 1.0).sum())
        content_semantic = 2.0 * soft_tp / (n_pred_cells + n_gold_cells)

    rouge = rouge_l_f1(linearize_content(p), linearize_content(g))

    return InstanceEval(
        id=eval_id,
        header_exact_f1=header_exact,
        header_soft_f1=header_soft,
        content_exact_f1=content_exact,
        content_semantic_f1=content_semantic,
        content_rouge_l_f1=rouge,
        valid=True,
        category=meta.get("category"),
        source_type=meta.get("source_type"),
        difficulty=meta.get("difficulty"),
    )


def evaluate_prediction(
    raw_output: str,
    gold: Table,
    meta: dict | None = None,
    embedder: Embedder | None = None,
) -> InstanceEval:
    """Parse raw model output, then score it; unparseable output scores 0."""
    from .tables import EmptyHeader, NoTableFound, parse_table

    try:
        pred: Table | None = parse_table(raw_output)
    except (NoTableFound, EmptyHeader):
        pred = None
    return evaluate_instance(pred, gold, meta=meta, embedder=embedder)


GROUP_KEYS = {
    "difficulty": ("easy", "medium", "hard"),
    "category": ("fixed", "open"),
    "source_type": ("generate", "retrieve"),
}


@dataclass
class EvalReport:
    """Unweighted metric means, overall and per metadata group."""

    overall: dict[str, float]
    groups: dict[str, dict[str, dict[str, float]]]
    n_instances: int
    n_invalid: int
    group_sizes: dict[str, dict[str, int]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "groups": self.groups,
            "n_instances": self.n_instances,
            "n_invalid": self.n_invalid,
            "group_sizes": self.group_sizes,
        }


def _means(evals: list[InstanceEval]) -> dict[str, float]:
    return {
        m: float(np.mean([getattr(e, m) for e in evals]))
        for m in InstanceEval.METRICS
    }


def aggregate(evals: Sequence[InstanceEval]) -> EvalReport:
    """Group means by difficulty/category/source plus the overall mean."""
    evals = list(evals)
    if not evals:
        raise EmptyInput("no instance evaluations to aggregate")
    groups: dict[str, dict[str, dict[str, float]]] = {}
    sizes: dict[str, dict[str, int]] = {}
    for key, levels in GROUP_KEYS.items():
        groups[key] = {}
        sizes[key] = {}
        for level in levels:
            members = [e for e in evals if getattr(e, key) == level]
            sizes[key][level] = len(members)
            if members:
                groups[key][level] = _means(members)
    return EvalReport(
        overall=_means(evals),
        groups=groups,
        n_instances=len(evals),
        n_invalid=sum(1 for e in evals if not e.valid),
        group_sizes=sizes,
    )


_METRIC_LABELS = {
    "header_exact_f1": "[Header] Exact Match",
    "header_soft_f1": "[Header] Semantic Sim.",
    "content_exact_f1": "[Content] Exact Match",
    "content_semantic_f1": "[Content] Semantic Sim.",
    "content_rouge_l_f1": "[Content] ROUGE-L",
}


def render_report(report: EvalReport) -> str:
    """Text table with difficulty/category/source groups and overall columns."""
    columns = [
        ("difficulty", "easy", "Easy"),
        ("difficulty", "medium", "Medium"),
        ("difficulty", "hard", "Hard"),
        ("category", "fixed", "Fixed"),
        ("category", "open", "Open"),
        ("source_type", "generate", "Generate"),
        ("source_type", "retrieve", "Retrieve"),
    ]
    head = ["Metric"] + [c[2] for c in columns] + ["Overall"]
    lines = ["  ".join(f"{h:>24}" if i == 0 else f"{h:>9}" for i, h in enumerate(head))]
    for metric, label in _METRIC_LABELS.items():
        cells = [f"{label:>24}"]
        for key, level, _ in columns:
            val = report.groups.get(key, {}).get(level, {}).get(metric)
            cells.append(f"{100 * val:9.2f}" if val is not None else f"{'-':>9}")
        cells.append(f"{100 * report.overall[metric]:9.2f}")
        lines.append("  ".join(cells))
    lines.append(
        f"instances: {report.n_instances}  invalid predictions: {report.n_invalid}"
    )
    return "\n".join(lines)
