"""One-shot script runner speaking JSON over stdio.

Protocol: the parent writes a single request object to stdin and closes it:

    {"table_csv": "<csv>", "code": "<script>", "timeout_s": <number>}

The runner loads the CSV into a pandas DataFrame (all cells as text), binds
it as ``df`` and ``DF``, executes the script, and writes exactly one reply
object to stdout:

    {"status": "ok", "kind": "table", "payload_csv": "<csv>"}
    {"status": "ok", "kind": "scalar", "payload": "<text>"}
    {"status": "error", "message": "<text>"}

Output resolution: a variable named ``result`` wins; otherwise a rebound
``df``, then a rebound ``DF``, then the original dataframe. DataFrames and
Series become table payloads (header kept, index dropped); anything else
is rendered as a scalar string.

Sandboxing is best effort: user code runs with a trimmed builtin set (no
``open``), an import allowlist covering the dataframe / regex / standard
numeric libraries, stdout redirected to stderr, the working directory
moved to a throwaway temp dir, and a SIGALRM self-limit at ``timeout_s``.
The parent additionally enforces the hard timeout by killing the process.
"""

from __future__ import annotations

import builtins
import contextlib
import io
import json
import math
import os
import re
import shutil
import signal
import sys
import tempfile
from dataclasses import dataclass

import pandas as pd

ALLOWED_IMPORT_ROOTS = frozenset(
    {
        "pandas",
        "numpy",
        "re",
        "math",
        "cmath",
        "statistics",
        "decimal",
        "fractions",
        "random",
        "datetime",
        "calendar",
        "json",
        "itertools",
        "functools",
        "collections",
        "operator",
        "string",
        "textwrap",
        "unicodedata",
        "bisect",
        "heapq",
    }
)

_SAFE_BUILTIN_NAMES = (
    "abs", "all", "any", "ascii", "bin", "bool", "bytearray", "bytes",
    "callable", "chr", "complex", "dict", "divmod", "enumerate", "filter",
    "float", "format", "frozenset", "getattr", "hasattr", "hash", "hex",
    "id", "int", "isinstance", "issubclass", "iter", "len", "list", "map",
    "max", "min", "next", "object", "oct", "ord", "pow", "print", "range",
    "repr", "reversed", "round", "set", "setattr", "slice", "sorted", "str",
    "sum", "tuple", "type", "zip",
    "ArithmeticError", "AssertionError", "AttributeError", "BaseException",
    "Exception", "IndexError", "KeyError", "LookupError", "NameError",
    "NotImplementedError", "OverflowError", "RuntimeError", "StopIteration",
    "TypeError", "ValueError", "ZeroDivisionError",
    "True", "False", "None", "NotImplemented", "Ellipsis",
)


class ScriptTimeout(Exception):
    pass


def _guarded_import(name, globals=None, locals=None, fromlist=(), level=0):
    root = name.split(".")[0]
    if level != 0 or root not in ALLOWED_IMPORT_ROOTS:
        raise ImportError(f"import of {name!r} is not allowed in the sandbox")
    return builtins.__import__(name, globals, locals, fromlist, level)


def _safe_builtins() -> dict:
    table = {name: getattr(builtins, name) for name in _SAFE_BUILTIN_NAMES}
    table["__import__"] = _guarded_import
    return table


@dataclass(frozen=True)
class SandboxRequest:
    table_csv: str
    code: str
    timeout_s: float

    @classmethod
    def from_json(cls, obj: dict) -> "SandboxRequest":
        timeout_s = float(obj["timeout_s"])
        if timeout_s <= 0:
            raise ValueError("timeout_s must be positive")
        return cls(table_csv=str(obj["table_csv"]), code=str(obj["code"]), timeout_s=timeout_s)


@dataclass(frozen=True)
class SandboxResponse:
    status: str  # ok | error
    kind: str = ""  # table | scalar, when ok
    payload: str = ""
    message: str = ""

    def to_json(self) -> dict:
        if self.status == "error":
            return {"status": "error", "message": self.message}
        if self.kind == "table":
            return {"status": "ok", "kind": "table", "payload_csv": self.payload}
        return {"status": "ok", "kind": "scalar", "payload": self.payload}


def _load_frame(table_csv: str) -> pd.DataFrame:
    # all cells stay text; empty cells stay empty strings, never NaN
    return pd.read_csv(io.StringIO(table_csv), dtype=str, keep_default_na=False)


def _frame_to_csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, lineterminator="\n")


def _resolve_output(namespace: dict, original: pd.DataFrame):
    if "result" in namespace:
        return namespace["result"]
    df = namespace.get("df")
    if df is not None and df is not original:
        return df
    DF = namespace.get("DF")
    if DF is not None and DF is not original:
        return DF
    return original


def _on_alarm(signum, frame):
    raise ScriptTimeout()


def run_sandbox(request: SandboxRequest) -> SandboxResponse:
    """Execute one script over the request's table and shape the reply."""
    try:
        frame = _load_frame(request.table_csv)
    except Exception as exc:
        return SandboxResponse(status="error", message=f"{type(exc).__name__}: {exc}")

    namespace = {
        "__builtins__": _safe_builtins(),
        "df": frame,
        "DF": frame,
        "pd": pd,
        "re": re,
        "math": math,
    }

    old_handler = signal.signal(signal.SIGALRM, _on_alarm)
    signal.setitimer(signal.ITIMER_REAL, request.timeout_s)
    workdir = tempfile.mkdtemp(prefix="orchestra-sandbox-")
    old_cwd = os.getcwd()
    os.chdir(workdir)
    try:
        # user prints become diagnostics, never protocol output
        with contextlib.redirect_stdout(sys.stderr):
            exec(request.code, namespace)  # noqa: S102 - the runner's purpose
        output = _resolve_output(namespace, frame)
    except ScriptTimeout:
        return SandboxResponse(
            status="error", message=f"script timed out after {request.timeout_s}s"
        )
    except BaseException as exc:  # noqa: BLE001 - report every failure mode
        return SandboxResponse(status="error", message=f"{type(exc).__name__}: {exc}")
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0.0)
        signal.signal(signal.SIGALRM, old_handler)
        os.chdir(old_cwd)
        shutil.rmtree(workdir, ignore_errors=True)

    try:
        if isinstance(output, pd.Series):
            output = output.to_frame()
        if isinstance(output, pd.DataFrame):
            return SandboxResponse(status="ok", kind="table", payload=_frame_to_csv(output))
        return SandboxResponse(status="ok", kind="scalar", payload=str(output))
    except Exception as exc:
        return SandboxResponse(status="error", message=f"{type(exc).__name__}: {exc}")


def main() -> int:
    raw = sys.stdin.read()
    try:
        request = SandboxRequest.from_json(json.loads(raw))
    except Exception as exc:
        reply = SandboxResponse(status="error", message=f"bad request: {exc}")
    else:
        reply = run_sandbox(request)
    sys.stdout.write(json.dumps(reply.to_json()) + "\n")
    sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
