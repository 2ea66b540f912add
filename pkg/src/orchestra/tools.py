"""Program execution against the current working table.

SQL runs in-process against an in-memory SQLite database with the table
registered under the fixed name ``DF``; scripts run out of process via
the sandbox runner's JSON-over-stdio contract. Failures never raise: they
become error observations so the next round can self-correct.
"""

from __future__ import annotations

import json
import re
import sqlite3
import subprocess
from dataclasses import dataclass
from typing import Union

from .agents import SCRIPT, SQL, ToolProgram
from .errors import FormatError, SandboxUnavailableError
from .table import Table, load_table, table_to_delimited

REGISTERED_NAME = "DF"
DEFAULT_SANDBOX_COMMAND = ("orchestra-sandbox",)


@dataclass(frozen=True)
class TableResult:
    table: Table


@dataclass(frozen=True)
class ScalarResult:
    text: str


@dataclass(frozen=True)
class Failure:
    message: str

    def __post_init__(self):
        if not self.message:
            raise ValueError("failure message must be non-empty")


ToolResult = Union[TableResult, ScalarResult, Failure]


@dataclass
class ToolContext:
    """Per-episode tool state: the working table and sandbox wiring."""

    current_table: Table
    registered_name: str = REGISTERED_NAME
    sandbox_timeout: float = 10.0
    sandbox_command: tuple[str, ...] = DEFAULT_SANDBOX_COMMAND


@dataclass(frozen=True)
class ToolSettings:
    """Episode-independent tool wiring; stamps out one context per episode."""

    sandbox_timeout: float = 10.0
    sandbox_command: tuple[str, ...] = DEFAULT_SANDBOX_COMMAND

    def context(self, table: Table) -> ToolContext:
        return ToolContext(
            current_table=table,
            sandbox_timeout=self.sandbox_timeout,
            sandbox_command=tuple(self.sandbox_command),
        )


_INT_RE = re.compile(r"^[+-]?\d+$")
_FLOAT_RE = re.compile(r"^[+-]?(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?$")


def cell_value(cell: str) -> Union[int, float, str]:
    """Dynamic typing rule: cells that look like numbers become numbers.

    Strict whole-cell match after trimming; everything else stays text.
    """
    s = cell.strip()
    if _INT_RE.match(s):
        try:
            return int(s)
        except ValueError:
            return cell
    if _FLOAT_RE.match(s):
        return float(s)
    return cell


def format_value(value) -> str:
    """Render an engine value back into a text cell. NULL becomes ''."""
    if value is None:
        return ""
    return str(value)


def _quote_ident(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


_SELECT_RE = re.compile(r"^\s*select\b", re.IGNORECASE)


def execute_sql(ctx: ToolContext, code: str) -> ToolResult:
    """Run one SELECT statement against the working table registered as DF.

    Engine errors come back as ``Failure`` with the engine's message; a
    non-SELECT statement is refused outright.
    """
    statement = code.strip().rstrip(";").strip()
    if not _SELECT_RE.match(statement):
        return Failure("statement not allowed: only a single SELECT may run")
    table = ctx.current_table
    conn = sqlite3.connect(":memory:")
    try:
        cols = ", ".join(_quote_ident(c) for c in table.columns)
        conn.execute(f"CREATE TABLE {_quote_ident(ctx.registered_name)} ({cols})")
        placeholders = ", ".join("?" for _ in table.columns)
        conn.executemany(
            f"INSERT INTO {_quote_ident(ctx.registered_name)} VALUES ({placeholders})",
            [tuple(cell_value(c) for c in row) for row in table.rows],
        )
        cursor = conn.execute(statement)
        names = [d[0] for d in cursor.description]
        rows = [tuple(format_value(v) for v in row) for row in cursor.fetchall()]
    except (sqlite3.Error, sqlite3.Warning) as exc:
        return Failure(str(exc))
    finally:
        conn.close()
    return TableResult(Table(columns=tuple(names), rows=tuple(rows), name="result"))


def execute_script(ctx: ToolContext, code: str) -> ToolResult:
    """Run a script in the external sandbox over the working table.

    One process per invocation; the request goes to the child's stdin as a
    single JSON object and the reply comes back on stdout. The child is
    killed once ``sandbox_timeout`` elapses.
    """
    request = json.dumps(
        {
            "table_csv": table_to_delimited(ctx.current_table, "csv").decode("utf-8"),
            "code": code,
            "timeout_s": ctx.sandbox_timeout,
        }
    ).encode("utf-8")
    try:
        proc = subprocess.run(
            list(ctx.sandbox_command),
            input=request,
            capture_output=True,
            timeout=ctx.sandbox_timeout,
        )
    except FileNotFoundError as exc:
        raise SandboxUnavailableError(
            f"sandbox runner not found: {ctx.sandbox_command!r}"
        ) from exc
    except subprocess.TimeoutExpired:
        return Failure("sandbox timeout")

    stdout = proc.stdout.decode("utf-8", errors="replace").strip()
    stderr = proc.stderr.decode("utf-8", errors="replace").strip()
    if not stdout:
        return Failure(stderr or f"sandbox produced no reply (exit {proc.returncode})")
    try:
        reply = json.loads(stdout)
    except json.JSONDecodeError:
        return Failure(stderr or f"sandbox reply was not JSON: {stdout[:200]}")

    status = reply.get("status")
    if status == "error":
        return Failure(str(reply.get("message") or "sandbox error"))
    if status == "ok" and reply.get("kind") == "table":
        try:
            table = load_table(reply.get("payload_csv", ""), "csv", name="result")
        except FormatError as exc:
            return Failure(f"sandbox table payload unreadable: {exc}")
        return TableResult(table)
    if status == "ok" and reply.get("kind") == "scalar":
        return ScalarResult(str(reply.get("payload", "")))
    return Failure(f"sandbox reply malformed: {stdout[:200]}")


def dispatch_program(ctx: ToolContext, program: ToolProgram) -> ToolResult:
    if program.kind == SQL:
        return execute_sql(ctx, program.code)
    if program.kind == SCRIPT:
        return execute_script(ctx, program.code)
    return Failure(f"unknown program kind: {program.kind}")


def result_to_observation(result: ToolResult) -> tuple[Table, bool]:
    """Convert any result into an observation table the agents can read.

    Failures become a one-column ``error`` table so the error text itself
    is the next observation; scalars become a 1x1 ``result`` table.
    """
    if isinstance(result, TableResult):
        return result.table, True
    if isinstance(result, ScalarResult):
        return Table(columns=("result",), rows=((result.text,),), name="result"), True
    return Table(columns=("error",), rows=((result.message,),), name="error"), False


def run_program(ctx: ToolContext, program: ToolProgram) -> tuple[Table, bool]:
    """Execute a parsed program; total over parsed programs, never raises
    for program-level faults (sandbox misconfiguration still raises)."""
    return result_to_observation(dispatch_program(ctx, program))
