"""Line-delimited instance persistence and dataset statistics.

One JSON object per line, UTF-8, snake_case keys; the gold table travels
as its canonical markdown string so files stay human-diffable. Writes are
atomic (temp file + rename).
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .tables import EmptyHeader, NoTableFound, Table, parse_table, serialize_table

CATEGORIES = ("open", "fixed")
SOURCE_TYPES = ("retrieve", "generate")
DIFFICULTIES = ("easy", "medium", "hard")
VARIANTS = ("direct", "cot")

_FIELDS = (
    "id",
    "instruction",
    "text",
    "table",
    "domain",
    "category",
    "source_type",
    "difficulty",
    "variant",
    "explanation",
)


class SchemaError(ValueError):
    """A record violates the instance schema."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(
            f"line {line}: {message}" if line is not None else message
        )


class TableParseError(ValueError):
    """A stored gold table failed to parse."""

    def __init__(self, instance_id: str, cause: Exception):
        self.instance_id = instance_id
        super().__init__(f"instance {instance_id}: {cause}")


class EmptyDataset(ValueError):
    """Statistics requested over zero instances."""


@dataclass
class Instance:
    """One dataset record: instruction, background text, gold table, metadata."""

    id: str
    instruction: str
    text: str
    table: Table | None
    domain: str
    category: str
    source_type: str
    variant: str
    difficulty: str | None = None
    explanation: str | None = None

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not self.id:
            raise ValueError("id must be non-empty")
        if self.category not in CATEGORIES:
            raise ValueError(f"bad category {self.category!r}")
        if self.source_type not in SOURCE_TYPES:
            raise ValueError(f"bad source_type {self.source_type!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"bad variant {self.variant!r}")
        if self.difficulty is not None and self.difficulty not in DIFFICULTIES:
            raise ValueError(f"bad difficulty {self.difficulty!r}")
        if self.explanation is not None and self.variant != "cot":
            raise ValueError("explanation is only valid on the cot variant")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "instruction": self.instruction,
            "text": self.text,
            "table": serialize_table(self.table) if self.table else None,
            "domain": self.domain,
            "category": self.category,
            "source_type": self.source_type,
            "difficulty": self.difficulty,
            "variant": self.variant,
            "explanation": self.explanation,
        }


def _instance_from_record(rec: dict, line: int) -> Instance:
    unknown = set(rec) - set(_FIELDS)
    if unknown:
        raise SchemaError(f"unknown keys {sorted(unknown)}", line)
    for key in ("id", "instruction", "text", "domain", "category",
                "source_type", "variant"):
        if key not in rec:
            raise SchemaError(f"missing required field {key!r}", line)
        if not isinstance(rec[key], str):
            raise SchemaError(f"field {key!r} must be a string", line)
    for key in ("table", "difficulty", "explanation"):
        if rec.get(key) is not None and not isinstance(rec[key], str):
            raise SchemaError(f"field {key!r} must be a string or null", line)

    table = None
    if rec.get("table"):
        try:
            table = parse_table(rec["table"])
        except (NoTableFound, EmptyHeader) as exc:
            raise TableParseError(rec["id"], exc) from exc
    try:
        return Instance(
            id=rec["id"],
            instruction=rec["instruction"],
            text=rec["text"],
            table=table,
            domain=rec["domain"],
            category=rec["category"],
            source_type=rec["source_type"],
            difficulty=rec.get("difficulty"),
            variant=rec["variant"],
            explanation=rec.get("explanation"),
        )
    except ValueError as exc:
        raise SchemaError(str(exc), line) from exc


def load_instances(path: str | Path) -> list[Instance]:
    """Read a JSONL instance file; schema errors carry the 1-based line number."""
    out: list[Instance] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", line_no) from exc
            if not isinstance(rec, dict):
                raise SchemaError("record must be a JSON object", line_no)
            out.append(_instance_from_record(rec, line_no))
    return out


def write_jsonl(records: list[dict], path: str | Path) -> None:
    """Atomically write dict records as sorted-key JSONL."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(
        dir=path.parent or Path("."), prefix=f".{path.name}.", suffix=".tmp"
    )
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True))
                fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_instances(instances: list[Instance], path: str | Path) -> None:
    """Inverse of load_instances; atomic replace on the target path."""
    write_jsonl([inst.to_dict() for inst in instances], path)


@dataclass
class StatsReport:
    """Dataset-level counts and averages (instruction/text/table statistics)."""

    n_instructions: int
    n_open: int
    n_fixed: int
    n_texts: int
    n_retrieved: int
    n_generated: int
    n_domains: int
    avg_instruction_words: float
    avg_text_words: float
    avg_table_cells: float
    avg_table_rows: float
    avg_table_columns: float
    difficulty_counts: dict[str, int] = field(default_factory=dict)

    def validate(self) -> None:
        if self.n_open + self.n_fixed != self.n_instructions:
            raise ValueError("open + fixed must equal instruction count")
        if self.n_retrieved + self.n_generated != self.n_texts:
            raise ValueError("retrieved + generated must equal text count")

    def to_dict(self) -> dict:
        return {
            "n_instructions": self.n_instructions,
            "n_open": self.n_open,
            "n_fixed": self.n_fixed,
            "n_texts": self.n_texts,
            "n_retrieved": self.n_retrieved,
            "n_generated": self.n_generated,
            "n_domains": self.n_domains,
            "avg_instruction_words": self.avg_instruction_words,
            "avg_text_words": self.avg_text_words,
            "avg_table_cells": self.avg_table_cells,
            "avg_table_rows": self.avg_table_rows,
            "avg_table_columns": self.avg_table_columns,
            "difficulty_counts": self.difficulty_counts,
        }

    def render_text(self) -> str:
        lines = [
            f"# Instruction        {self.n_instructions}",
            f"  - # Open           {self.n_open}",
            f"  - # Fixed          {self.n_fixed}",
            f"# Text               {self.n_texts}",
            f"  - # Retrieved      {self.n_retrieved}",
            f"  - # Generated      {self.n_generated}",
            f"# Domain             {self.n_domains}",
            f"Ave. Instr. Len.     {self.avg_instruction_words:.1f}",
            f"Ave. Text Len.       {self.avg_text_words:.1f}",
            f"Ave. Table Cell      {self.avg_table_cells:.1f}",
            f"Ave. Table Row       {self.avg_table_rows:.1f}",
            f"Ave. Table Column    {self.avg_table_columns:.1f}",
        ]
        for level in DIFFICULTIES:
            if level in self.difficulty_counts:
                lines.append(
                    f"# {level.capitalize()} Level       "
                    f"{self.difficulty_counts[level]}"
                )
        return "\n".join(lines)


def _word_count(s: str) -> int:
    return len(s.split())


def dataset_statistics(instances: list[Instance]) -> StatsReport:
    """Counts and averages over a set of instances.

    Text counts and the text-length average run over *distinct* text
    strings (a text shared by several instructions counts once, attributed
    to the source_type of its first occurrence); table averages run over
    instances that carry a table.
    """
    if not instances:
        raise EmptyDataset("no instances")

    text_source: dict[str, str] = {}
    for inst in instances:
        text_source.setdefault(inst.text, inst.source_type)

    n_retrieved = sum(1 for s in text_source.values() if s == "retrieve")
    with_table = [inst for inst in instances if inst.table is not None]

    def avg(values: list[float]) -> float:
        return float(sum(values) / len(values)) if values else 0.0

    difficulty_counts = {
        level: sum(1 for i in instances if i.difficulty == level)
        for level in DIFFICULTIES
    }
    difficulty_counts = {k: v for k, v in difficulty_counts.items() if v}

    report = StatsReport(
        n_instructions=len(instances),
        n_open=sum(1 for i in instances if i.category == "open"),
        n_fixed=sum(1 for i in instances if i.category == "fixed"),
        n_texts=len(text_source),
        n_retrieved=n_retrieved,
        n_generated=len(text_source) - n_retrieved,
        n_domains=len({i.domain for i in instances}),
        avg_instruction_words=avg([_word_count(i.instruction) for i in instances]),
        avg_text_words=avg([_word_count(t) for t in text_source]),
        avg_table_cells=avg(
            [t.table.n_rows * t.table.n_cols for t in with_table]  # type: ignore[union-attr]
        ),
        avg_table_rows=avg([t.table.n_rows for t in with_table]),  # type: ignore[union-attr]
        avg_table_columns=avg([t.table.n_cols for t in with_table]),  # type: ignore[union-attr]
        difficulty_counts=difficulty_counts,
    )
    report.validate()
    return report
