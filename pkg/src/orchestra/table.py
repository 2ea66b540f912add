"""Immutable text table: ingestion, markdown rendering, delimited output.

Tables are the unit of exchange between agents and tools. Cells are kept
as text; any numeric interpretation happens downstream (SQL engine, answer
normalization), never at rest.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass
from typing import IO, Iterable, Union

from .errors import FormatError, RaggedRowError

DEFAULT_TABLE_NAME = "DF"

Source = Union[bytes, str, IO]


@dataclass(frozen=True)
class RenderOptions:
    """Controls how a table is rendered into prompt text."""

    max_rows: int = 30
    include_row_count_footer: bool = True

    def __post_init__(self):
        if self.max_rows < 1:
            raise ValueError("max_rows must be >= 1")


@dataclass(frozen=True)
class Table:
    """A rectangular grid of text cells with a header row.

    Invariants enforced at construction: every row has exactly
    ``len(columns)`` cells; column names are non-blank and unique
    (duplicates suffixed ``_2``, ``_3``, ..., blanks become ``col{i}``).
    """

    columns: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...] = ()
    name: str = DEFAULT_TABLE_NAME

    def __post_init__(self):
        object.__setattr__(self, "columns", repair_columns(self.columns))
        rows = tuple(tuple(str(c) for c in row) for row in self.rows)
        for i, row in enumerate(rows):
            if len(row) != len(self.columns):
                raise RaggedRowError(i, len(self.columns), len(row))
        object.__setattr__(self, "rows", rows)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_cols(self) -> int:
        return len(self.columns)


def repair_columns(raw: Iterable[str]) -> tuple[str, ...]:
    """Trim, fill blanks with ``col{i}``, and deduplicate deterministically."""
    repaired: list[str] = []
    used: set[str] = set()
    for i, name in enumerate(raw, start=1):
        base = str(name).strip()
        if not base:
            base = f"col{i}"
        candidate = base
        n = 2
        while candidate in used:
            candidate = f"{base}_{n}"
            n += 1
        repaired.append(candidate)
        used.add(candidate)
    return tuple(repaired)


def _as_text(source: Source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    if isinstance(data, bytes):
        return data.decode("utf-8")
    return data


def load_table(source: Source, format: str, name: str = DEFAULT_TABLE_NAME) -> Table:
    """Parse a byte stream / text in the declared format into a ``Table``.

    Supported formats: ``csv`` (RFC 4180), ``tsv`` (tab separated, no
    quoting), ``json-records`` (array of flat objects), ``markdown``
    (GitHub pipe table). Row and column order is preserved.
    """
    text = _as_text(source)
    if format == "csv":
        return _load_delimited(text, name, delimiter=",", quoted=True)
    if format == "tsv":
        return _load_delimited(text, name, delimiter="\t", quoted=False)
    if format == "json-records":
        return _load_json_records(text, name)
    if format == "markdown":
        return _load_markdown(text, name)
    raise FormatError(f"unknown table format: {format!r}")


def _load_delimited(text: str, name: str, delimiter: str, quoted: bool) -> Table:
    if not text.strip():
        raise FormatError("empty input")
    reader = csv.reader(
        io.StringIO(text),
        delimiter=delimiter,
        quoting=csv.QUOTE_MINIMAL if quoted else csv.QUOTE_NONE,
    )
    try:
        records = [row for row in reader if row != []]
    except csv.Error as exc:
        raise FormatError(f"malformed delimited input: {exc}") from exc
    if not records:
        raise FormatError("no header row")
    header, body = records[0], records[1:]
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise RaggedRowError(i, len(header), len(row))
    return Table(columns=tuple(header), rows=tuple(tuple(r) for r in body), name=name)


def _json_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (dict, list)):
        raise FormatError("json-records must contain flat objects")
    return str(value)


def _load_json_records(text: str, name: str) -> Table:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc}") from exc
    if not isinstance(data, list) or not data:
        raise FormatError("expected a non-empty array of objects")
    if not all(isinstance(rec, dict) for rec in data):
        raise FormatError("expected an array of objects")
    columns = list(data[0].keys())
    rows = []
    for i, rec in enumerate(data):
        extra = set(rec) - set(columns)
        if extra:
            raise FormatError(f"record {i} has keys not in first record: {sorted(extra)}")
        rows.append(tuple(_json_cell(rec.get(col, "")) for col in columns))
    return Table(columns=tuple(columns), rows=tuple(rows), name=name)


_MD_SEPARATOR = re.compile(r"^\s*\|?\s*:?-{3,}:?\s*(\|\s*:?-{3,}:?\s*)*\|?\s*$")
# Split on pipes not preceded by a backslash.
_MD_PIPE = re.compile(r"(?<!\\)\|")


def _md_cells(line: str) -> list[str]:
    stripped = line.strip()
    if stripped.startswith("|"):
        stripped = stripped[1:]
    if stripped.endswith("|") and not stripped.endswith(r"\|"):
        stripped = stripped[:-1]
    return [c.strip().replace(r"\|", "|") for c in _MD_PIPE.split(stripped)]


def _load_markdown(text: str, name: str) -> Table:
    lines = [ln for ln in text.splitlines()]
    pipe_lines: list[str] = []
    started = False
    for ln in lines:
        if ln.strip().startswith("|"):
            pipe_lines.append(ln)
            started = True
        elif started:
            break  # footer / sentinel / prose ends the table
    if len(pipe_lines) < 2:
        raise FormatError("markdown table needs a header and separator row")
    if not _MD_SEPARATOR.match(pipe_lines[1]):
        raise FormatError("second markdown line is not a separator row")
    header = _md_cells(pipe_lines[0])
    body = []
    for i, ln in enumerate(pipe_lines[2:]):
        cells = _md_cells(ln)
        if len(cells) != len(header):
            raise RaggedRowError(i, len(header), len(cells))
        body.append(tuple(cells))
    return Table(columns=tuple(header), rows=tuple(body), name=name)


EMPTY_RESULT_LINE = "(empty result, 0 rows)"


def _md_escape(cell: str) -> str:
    return cell.replace("|", r"\|").replace("\n", " ")


def render_markdown(t: Table, opts: RenderOptions = RenderOptions()) -> str:
    """Render as a GitHub pipe table, truncated to ``opts.max_rows`` rows.

    A truncated table gets a ``... ({N} rows total)`` footer when enabled;
    a table with no rows gets the fixed ``(empty result, 0 rows)`` line.
    """
    lines = [
        "| " + " | ".join(_md_escape(c) for c in t.columns) + " |",
        "| " + " | ".join("---" for _ in t.columns) + " |",
    ]
    for row in t.rows[: opts.max_rows]:
        lines.append("| " + " | ".join(_md_escape(c) for c in row) + " |")
    if not t.rows:
        lines.append(EMPTY_RESULT_LINE)
    elif len(t.rows) > opts.max_rows and opts.include_row_count_footer:
        lines.append(f"... ({len(t.rows)} rows total)")
    return "\n".join(lines)


def table_to_delimited(t: Table, format: str = "csv") -> bytes:
    """Serialize to csv (RFC 4180 quoting) or tsv (no quoting) bytes.

    CSV output round-trips losslessly through ``load_table``.
    """
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
        writer.writerow(t.columns)
        writer.writerows(t.rows)
        return buf.getvalue().rstrip("\n").encode("utf-8")
    if format == "tsv":
        lines = ["\t".join(t.columns)]
        lines.extend("\t".join(row) for row in t.rows)
        return "\n".join(lines).encode("utf-8")
    raise FormatError(f"unknown delimited format: {format!r}")
