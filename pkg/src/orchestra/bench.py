"""Benchmark harness: dataset loading, exact-match scoring, baselines,
and the bounded-concurrency benchmark runner with cost reporting."""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

from .agents import (
    ExemplarSet,
    ToolProgram,
    extract_answer,
    parse_decision_output,
    parse_tool_program,
)
from .config import RunConfig
from .errors import FormatError, ParseError
from .llm import (
    Backend,
    ChatMessage,
    ChatRequest,
    RetryPolicy,
    UsageLedger,
    UsageStats,
    complete_chat,
)
from .orchestrator import (
    EpisodeConfig,
    FORCED_ANSWER_PROMPT,
    TraceWriter,
    normalize_answer,
    run_orchestra,
)
from .table import RenderOptions, Table, load_table, render_markdown
from .tools import TableResult, ToolSettings, dispatch_program, result_to_observation

TABFACT_HINT = 'Answer with exactly "yes" or "no".'
WIKITQ_HINT = "Give a short, factual answer with no explanation."


@dataclass(frozen=True)
class TQATask:
    id: str
    table: Table
    question: str
    gold_answers: tuple[str, ...] = ()
    answer_format_hint: str = ""

    def __post_init__(self):
        if not self.question:
            raise ValueError("question must be non-empty")
        object.__setattr__(self, "gold_answers", tuple(self.gold_answers))


@dataclass(frozen=True)
class CostReport:
    mean_time_s: float = 0.0
    mean_requests: float = 0.0
    mean_input_tokens: float = 0.0
    mean_output_tokens: float = 0.0


@dataclass(frozen=True)
class TaskRecord:
    id: str
    prediction: str
    correct: bool


@dataclass(frozen=True)
class RunReport:
    accuracy: float
    per_task: tuple[TaskRecord, ...]
    cost: CostReport
    mode: str = ""
    trace_path: str = ""

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "accuracy": self.accuracy,
            "cost": {
                "mean_time_s": self.cost.mean_time_s,
                "mean_requests": self.cost.mean_requests,
                "mean_input_tokens": self.cost.mean_input_tokens,
                "mean_output_tokens": self.cost.mean_output_tokens,
            },
            "per_task": [
                {"id": r.id, "prediction": r.prediction, "correct": r.correct}
                for r in self.per_task
            ],
            "trace_path": self.trace_path,
        }


def evaluate_exact_match(prediction: str, gold_answers: Sequence[str]) -> bool:
    """True iff the normalized prediction equals any normalized gold answer."""
    norm = normalize_answer(prediction)
    return any(norm == normalize_answer(g) for g in gold_answers)


# --- dataset loading ----------------------------------------------------------


def task_to_json(task: TQATask) -> dict:
    return {
        "id": task.id,
        "question": task.question,
        "gold": list(task.gold_answers),
        "table": {"columns": list(task.table.columns), "rows": [list(r) for r in task.table.rows]},
        "hint": task.answer_format_hint,
    }


def _task_from_json(obj: dict, line_no: int) -> TQATask:
    try:
        table = Table(
            columns=tuple(obj["table"]["columns"]),
            rows=tuple(tuple(str(c) for c in row) for row in obj["table"]["rows"]),
        )
        return TQATask(
            id=str(obj["id"]),
            table=table,
            question=str(obj["question"]),
            gold_answers=tuple(str(g) for g in obj["gold"]),
            answer_format_hint=str(obj.get("hint", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"line {line_no}: {exc}") from exc


def load_unified_jsonl(path) -> list[TQATask]:
    tasks = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"line {line_no}: invalid JSON: {exc}") from exc
            tasks.append(_task_from_json(obj, line_no))
    return tasks


def write_unified_jsonl(tasks: Sequence[TQATask], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for task in tasks:
            fh.write(json.dumps(task_to_json(task), ensure_ascii=False) + "\n")


def load_wikitq(path) -> list[TQATask]:
    """Adapter for the question TSV (id, utterance, context, targetValue)
    with table CSV files resolved relative to the TSV's directory.
    Multi-part gold answers are ``|``-separated in targetValue."""
    path = Path(path)
    root = path.parent
    tasks = []
    with open(path, encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        for i, row in enumerate(reader, start=2):
            try:
                table = load_table((root / row["context"]).read_bytes(), "csv")
                tasks.append(
                    TQATask(
                        id=row["id"],
                        table=table,
                        question=row["utterance"],
                        gold_answers=(row["targetValue"],),
                        answer_format_hint=WIKITQ_HINT,
                    )
                )
            except (KeyError, OSError, FormatError, ValueError) as exc:
                raise FormatError(f"line {i}: {exc}") from exc
    return tasks


def load_tabfact(path) -> list[TQATask]:
    """Adapter for the collected-statements JSON: table_id -> [statements,
    labels, caption], with '#'-delimited table files under ``all_csv/``.
    Label 1 means the statement holds (gold "yes"), 0 means it does not."""
    path = Path(path)
    root = path.parent
    with open(path, encoding="utf-8") as fh:
        try:
            collected = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON: {exc}") from exc
    tasks = []
    for table_id, entry in collected.items():
        try:
            statements, labels = entry[0], entry[1]
            raw = (root / "all_csv" / table_id).read_text(encoding="utf-8")
            rows = [line.split("#") for line in raw.splitlines() if line]
            table = Table(columns=tuple(rows[0]), rows=tuple(tuple(r) for r in rows[1:]))
            for j, (statement, label) in enumerate(zip(statements, labels)):
                tasks.append(
                    TQATask(
                        id=f"{table_id}#{j}",
                        table=table,
                        question=statement,
                        gold_answers=("yes" if int(label) == 1 else "no",),
                        answer_format_hint=TABFACT_HINT,
                    )
                )
        except (IndexError, OSError, ValueError) as exc:
            raise FormatError(f"table {table_id}: {exc}") from exc
    return tasks


def load_tablebench(path) -> list[TQATask]:
    """Adapter for the JSONL release: one object per line with ``question``,
    ``answer``, and a ``table`` holding columns and data rows."""
    tasks = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                raw_table = obj["table"]
                if isinstance(raw_table, str):
                    raw_table = json.loads(raw_table)
                table = Table(
                    columns=tuple(str(c) for c in raw_table["columns"]),
                    rows=tuple(
                        tuple(str(c) for c in row)
                        for row in raw_table.get("data", raw_table.get("rows", []))
                    ),
                )
                tasks.append(
                    TQATask(
                        id=str(obj.get("id", line_no)),
                        table=table,
                        question=str(obj["question"]),
                        gold_answers=(str(obj["answer"]),),
                        answer_format_hint=WIKITQ_HINT,
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"line {line_no}: {exc}") from exc
    return tasks


DATASET_KINDS = ("unified-jsonl", "wikitq", "tabfact", "tablebench")


def load_dataset(path, kind: str = "unified-jsonl") -> list[TQATask]:
    if kind == "unified-jsonl":
        return load_unified_jsonl(path)
    if kind == "wikitq":
        return load_wikitq(path)
    if kind == "tabfact":
        return load_tabfact(path)
    if kind == "tablebench":
        return load_tablebench(path)
    raise FormatError(f"unknown dataset kind: {kind!r}")


# --- baselines ----------------------------------------------------------------

COT_ROLE_CARD = """\
You answer questions about tables. Think through the problem step by step, \
then finish with one line:
ANSWER: <the final answer>"""

REACT_ROLE_CARD = """\
You answer questions about a table by writing programs against it, one step \
at a time. The table is registered as DF (dataframe alias df). In each turn, \
reply with a short thought followed by exactly one program, either:
SQL: a single SELECT statement over DF, enclosed in ``` delimiters
Python: a short script over df, enclosed in ``` delimiters
After each program you will be shown the resulting table. Once you can \
answer, reply with one line: ANSWER: <the final answer>"""


def _full_render(table: Table) -> str:
    return render_markdown(
        table, RenderOptions(max_rows=max(1, table.n_rows), include_row_count_footer=False)
    )


def baseline_cot(
    task: TQATask,
    cfg: EpisodeConfig,
    backend: Backend,
    *,
    ledger: Optional[UsageLedger] = None,
    retry: Optional[RetryPolicy] = None,
) -> str:
    """Single step-by-step completion over the full table; no tool calls."""
    system = COT_ROLE_CARD
    if task.answer_format_hint:
        system += f"\n{task.answer_format_hint}"
    user = f"TABLE:\n{_full_render(task.table)}\n\nQUESTION: {task.question}"
    req = ChatRequest(
        model=cfg.model,
        messages=(ChatMessage("system", system), ChatMessage("user", user)),
        temperature=cfg.temperature,
        max_tokens=cfg.max_tokens,
        seed=cfg.seed_base,
    )
    raw = complete_chat(backend, req, ledger=ledger, retry=retry).content
    try:
        return parse_decision_output(raw)
    except ParseError:
        return ""


def baseline_react(
    task: TQATask,
    cfg: EpisodeConfig,
    backend: Backend,
    tool_settings: ToolSettings = ToolSettings(),
    *,
    ledger: Optional[UsageLedger] = None,
    retry: Optional[RetryPolicy] = None,
) -> str:
    """Single-agent loop whose one memory accumulates code and observations
    together; same round cap and forced-answer fallback as the main engine."""
    system = REACT_ROLE_CARD
    if task.answer_format_hint:
        system += f"\n{task.answer_format_hint}"
    ctx = tool_settings.context(task.table)
    transcript = f"TABLE:\n{render_markdown(task.table, cfg.render)}\n\nQUESTION: {task.question}"

    def complete(extra: str = "") -> str:
        messages = [ChatMessage("system", system), ChatMessage("user", transcript + extra)]
        req = ChatRequest(
            model=cfg.model,
            messages=tuple(messages),
            temperature=cfg.temperature,
            max_tokens=cfg.max_tokens,
            seed=cfg.seed_base,
        )
        return complete_chat(backend, req, ledger=ledger, retry=retry).content

    for _ in range(cfg.max_rounds):
        raw = complete()
        answer = extract_answer(raw)
        if answer is not None:
            return answer
        program = _extract_program(raw)
        if program is None:
            transcript += f"\n\n{raw}\nOBSERVATION:\n(no runnable code found)"
            continue
        result = dispatch_program(ctx, program)
        observation, ok = result_to_observation(result)
        if ok and isinstance(result, TableResult):
            ctx.current_table = result.table
        transcript += f"\n\n{raw}\nOBSERVATION:\n{render_markdown(observation, cfg.render)}"
    return complete(f"\n\n{FORCED_ANSWER_PROMPT}")


def _extract_program(raw: str) -> Optional[ToolProgram]:
    try:
        return parse_tool_program(raw)
    except ParseError:
        return None


# --- benchmark runner -----------------------------------------------------------

BENCH_MODES = ("orchestra", "two-agent", "cot", "react")


def run_benchmark(
    tasks: Sequence[TQATask],
    mode: str,
    cfg: RunConfig,
    backend: Backend,
    concurrency: int = 1,
    trace_path: Optional[str] = None,
) -> RunReport:
    """Run one pipeline over all tasks with bounded concurrency.

    Per-task failures count as incorrect and never abort the run. Request
    and token means are ledger totals divided by the task count.
    """
    if not tasks:
        raise ValueError("tasks must be non-empty")
    if mode not in BENCH_MODES:
        raise ValueError(f"unknown mode: {mode!r}")
    if concurrency < 1:
        raise ValueError("concurrency must be >= 1")

    episode = cfg.episode()
    if mode == "two-agent":
        episode = replace(episode, decision_agent_enabled=False)
    tool_settings = cfg.tool_settings()
    exemplars = cfg.exemplars() if mode in ("orchestra", "two-agent") else None
    retry = cfg.retry()
    run_ledger = UsageLedger()
    writer = TraceWriter(trace_path) if trace_path else None

    def run_task(task: TQATask) -> tuple[str, UsageStats, float]:
        started = time.monotonic()
        ledger = UsageLedger()
        if mode in ("orchestra", "two-agent"):
            final, _traces, usage = run_orchestra(
                task, episode, backend, tool_settings, exemplars,
                trace_writer=writer, retry=retry,
            )
            prediction = final.text
            ledger.add(usage)
        elif mode == "cot":
            prediction = baseline_cot(task, episode, backend, ledger=ledger, retry=retry)
        else:
            prediction = baseline_react(
                task, episode, backend, tool_settings, ledger=ledger, retry=retry
            )
        return prediction, ledger.total(), time.monotonic() - started

    records: dict[str, TaskRecord] = {}
    times: dict[str, float] = {}

    def worker(task: TQATask) -> None:
        try:
            prediction, usage, elapsed = run_task(task)
        except Exception:
            prediction, usage, elapsed = "", UsageStats(), 0.0
        run_ledger.add(usage)
        records[task.id] = TaskRecord(
            id=task.id,
            prediction=prediction,
            correct=evaluate_exact_match(prediction, task.gold_answers),
        )
        times[task.id] = elapsed

    if concurrency == 1:
        for task in tasks:
            worker(task)
    else:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            list(pool.map(worker, tasks))
    if writer is not None:
        writer.close()

    per_task = tuple(records[t.id] for t in tasks)
    n = len(tasks)
    total = run_ledger.total()
    cost = CostReport(
        mean_time_s=sum(times.values()) / n,
        mean_requests=total.requests / n,
        mean_input_tokens=total.input_tokens / n,
        mean_output_tokens=total.output_tokens / n,
    )
    correct = sum(1 for r in per_task if r.correct)
    return RunReport(
        accuracy=correct / n,
        per_task=per_task,
        cost=cost,
        mode=mode,
        trace_path=trace_path or "",
    )
