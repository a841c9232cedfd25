"""Markdown pipe-table parsing, validation, and canonical serialization.

The dialect is the plain GFM pipe table: a header row, an optional
separator row of dashes/colons, then content rows. Parsing is lenient
(separator optional, ragged rows repaired, surrounding prose ignored);
serialization is strict and canonical, so serialize -> parse -> serialize
is a fixed point.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field


class NoTableFound(ValueError):
    """No line block in the text matches the pipe-table grammar."""


class EmptyHeader(ValueError):
    """The first pipe-table block has no non-empty header cell."""


NA_TOKEN = "N/A"

_SEPARATOR_CELL = re.compile(r":?-+:?")


@dataclass
class Table:
    """A parsed table: one header row plus zero or more content rows.

    Cell strings are stored trimmed and unescaped (a literal ``|`` is a
    plain ``|`` here; escaping is a serialization concern). ``source_text``
    keeps the raw block a parsed table came from and never participates in
    equality.
    """

    header: list[str]
    rows: list[list[str]] = field(default_factory=list)
    source_text: str | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not self.header:
            raise ValueError("table header must have at least one column")
        for h in self.header:
            if not isinstance(h, str) or not h.strip():
                raise ValueError("header cells must be non-empty strings")
        width = len(self.header)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise ValueError(
                    f"row {i} has {len(row)} cells, expected {width}"
                )
        for cell in self.header + [c for row in self.rows for c in row]:
            if "\n" in cell or "\r" in cell:
                raise ValueError("cells must not contain line breaks")
            if cell != cell.strip():
                raise ValueError("cells must be stored trimmed")

    @property
    def n_cols(self) -> int:
        return len(self.header)

    @property
    def n_rows(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class TableShape:
    """Content-row count, column count, and "N/A" cell count of a table."""

    n_rows: int
    n_cols: int
    n_na: int


def _split_row(line: str) -> list[str]:
    """Split a pipe row into trimmed cells, honoring ``\\|`` escapes."""
    s = line.strip()
    if s.startswith("|"):
        s = s[1:]
    cells: list[str] = []
    buf: list[str] = []
    i = 0
    while i < len(s):
        ch = s[i]
        if ch == "\\" and i + 1 < len(s) and s[i + 1] == "|":
            buf.append("|")
            i += 2
        elif ch == "|":
            cells.append("".join(buf))
            buf = []
            i += 1
        else:
            buf.append(ch)
            i += 1
    tail = "".join(buf)
    # A trailing border pipe leaves an empty tail fragment; drop only that.
    if tail.strip() or not cells:
        cells.append(tail)
    return [c.strip() for c in cells]


def _is_separator(cells: list[str]) -> bool:
    return bool(cells) and all(
        c and _SEPARATOR_CELL.fullmatch(c) for c in cells
    )


def parse_table(text: str) -> Table:
    """Extract the first pipe table from arbitrary model output.

    Surrounding prose (e.g. a chain-of-thought paragraph) is skipped; the
    block starts at the first line containing a ``|`` and ends at the first
    subsequent line without one. Rows shorter than the header are padded
    with empty cells, longer ones truncated. Columns with an empty header
    cell are dropped.

    Raises NoTableFound when no line contains a pipe, EmptyHeader when the
    header row has no non-empty cell.
    """
    lines = text.splitlines()
    start = next((i for i, ln in enumerate(lines) if "|" in ln), None)
    if start is None:
        raise NoTableFound("no pipe-table block in text")

    header_cells = _split_row(lines[start])
    keep = [j for j, h in enumerate(header_cells) if h]
    if not keep:
        raise EmptyHeader("header row has no non-empty cells")
    width = len(header_cells)

    block = [lines[start]]
    rows: list[list[str]] = []
    i = start + 1
    if i < len(lines) and "|" in lines[i] and _is_separator(_split_row(lines[i])):
        block.append(lines[i])
        i += 1
    while i < len(lines) and "|" in lines[i]:
        block.append(lines[i])
        cells = _split_row(lines[i])
        if len(cells) < width:
            cells = cells + [""] * (width - len(cells))
        elif len(cells) > width:
            cells = cells[:width]
        rows.append([cells[j] for j in keep])
        i += 1

    return Table(
        header=[header_cells[j] for j in keep],
        rows=rows,
        source_text="\n".join(block),
    )


def _escape(cell: str) -> str:
    return cell.replace("|", "\\|")


def serialize_table(t: Table) -> str:
    """Render a table in canonical form: header, dash separator, rows."""
    t.validate()
    out = ["| " + " | ".join(_escape(h) for h in t.header) + " |"]
    out.append("| " + " | ".join("---" for _ in t.header) + " |")
    for row in t.rows:
        out.append("| " + " | ".join(_escape(c) for c in row) + " |")
    return "\n".join(out)


def table_shape(t: Table) -> TableShape:
    """Content-row/column/"N/A" counts; the N/A match is case-insensitive."""
    n_na = sum(
        1 for row in t.rows for c in row if c.strip().lower() == "n/a"
    )
    return TableShape(n_rows=len(t.rows), n_cols=len(t.header), n_na=n_na)
