"""The control loop: sampled two-agent episodes, answer refinement, and
majority-vote aggregation over the sampled reasoning paths.

One episode alternates reasoning and code-writing turns against the
working table, capped at ``max_rounds`` with a forced direct answer at the
cap. Each of the ``m_samples`` independent episodes yields one candidate
answer (through the answering agent unless disabled); the most frequent
normalized candidate wins, ties going to the lowest sample index.
"""

from __future__ import annotations

import json
import re
import threading
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

from .agents import (
    AgentMemory,
    ExemplarSet,
    FORMAT_REMINDER,
    LogicAnswer,
    LogicContinue,
    RoundArtifacts,
    ToolProgram,
    build_decision_prompt,
    build_logic_prompt,
    build_query_prompt,
    parse_decision_output,
    parse_logic_output,
    parse_tool_program,
    update_memory,
)
from .errors import BackendError, EmptyAnswerError, ParseError
from .llm import (
    Backend,
    ChatMessage,
    ChatRequest,
    RetryPolicy,
    UsageLedger,
    UsageStats,
    complete_chat,
)
from .table import RenderOptions, Table, render_markdown
from .tools import TableResult, ToolSettings, dispatch_program, result_to_observation

FORCED_ANSWER_PROMPT = "Please provide an answer directly"

TERMINATED_BY_ANSWER = "answer"
TERMINATED_BY_FORCED = "forced"
TERMINATED_BY_PARSE_FAILURE = "parse_failure"


@dataclass(frozen=True)
class EpisodeConfig:
    """All knobs of one orchestrated run."""

    max_rounds: int = 5
    temperature: float = 0.7
    m_samples: int = 5
    decision_agent_enabled: bool = True
    seed_base: Optional[int] = None
    decision_draws: int = 1
    model: str = "default"
    max_tokens: int = 1024
    render: RenderOptions = RenderOptions()

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.m_samples < 1:
            raise ValueError("m_samples must be >= 1")
        if self.decision_draws < 1:
            raise ValueError("decision_draws must be >= 1")


@dataclass(frozen=True)
class Round:
    reasoning: str
    instruction: str
    program: Optional[ToolProgram]
    observation: Table
    observation_text: str
    ok: bool


@dataclass
class EpisodeTrace:
    rounds: list[Round] = field(default_factory=list)
    preliminary_answer: Optional[str] = None
    terminated_by: str = TERMINATED_BY_PARSE_FAILURE

    def __post_init__(self):
        if self.terminated_by == TERMINATED_BY_ANSWER and self.preliminary_answer is None:
            raise ValueError("answer termination requires a preliminary answer")


@dataclass(frozen=True)
class RefinedRound:
    reasoning: str
    instruction: str
    observation_text: str


@dataclass(frozen=True)
class RefinedContext:
    question: str
    initial_table: Table
    rounds: tuple[RefinedRound, ...]
    answer_format_hint: str = ""


@dataclass(frozen=True)
class CandidateAnswer:
    text: str
    normalized: str
    sample_index: int


@dataclass(frozen=True)
class FinalAnswer:
    text: str
    vote_counts: dict
    winner_count: int


def normalize_answer(raw: str) -> str:
    """Canonical answer form used for voting and exact-match scoring.

    Lowercased, whitespace collapsed, one trailing ``.``/``!`` and paired
    quotes stripped, numbers rendered canonically (thousands separators
    and percent signs dropped, no trailing zeros, integer form when
    integral). ``|``-separated parts are normalized element-wise. The
    whole pass runs to a fixed point, so the function is idempotent.
    """
    return "|".join(_normalize_part(p) for p in raw.split("|"))


_INT_TEXT = re.compile(r"^[+-]?\d+$")
_FLOAT_TEXT = re.compile(r"^[+-]?(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?$")


def _normalize_part(part: str) -> str:
    prev = None
    for _ in range(100):
        if part == prev:
            break
        prev = part
        part = re.sub(r"\s+", " ", part.strip()).lower()
        if part and part[-1] in ".!":
            part = part[:-1]
        if len(part) >= 2 and part[0] == part[-1] and part[0] in "\"'":
            part = part[1:-1]
        part = _canonical_number(part)
    return part


def _canonical_number(text: str) -> str:
    bare = text.replace(",", "").replace("%", "")
    stripped = bare.strip()
    if _INT_TEXT.match(stripped):
        return str(int(stripped))
    if _FLOAT_TEXT.match(stripped):
        value = float(stripped)
        if value.is_integer() and abs(value) < 1e15:
            return str(int(value))
        return repr(value)
    return text


class EpisodeAgent:
    """Runs one sampled episode against a backend and tool context."""

    def __init__(
        self,
        task,
        cfg: EpisodeConfig,
        backend: Backend,
        tool_settings: ToolSettings,
        exemplars: ExemplarSet,
        ledger: Optional[UsageLedger] = None,
        seed: Optional[int] = None,
        retry: Optional[RetryPolicy] = None,
    ):
        self.task = task
        self.cfg = cfg
        self.backend = backend
        self.exemplars = exemplars
        self.ledger = ledger
        self.seed = seed
        self.retry = retry
        self.ctx = tool_settings.context(task.table)
        t0_text = render_markdown(task.table, cfg.render)
        self.logic_memory = AgentMemory.initial(task.question, t0_text)
        self.query_memory = AgentMemory.initial(task.question, t0_text)

    def _complete(self, messages: Sequence[ChatMessage]) -> str:
        req = ChatRequest(
            model=self.cfg.model,
            messages=tuple(messages),
            temperature=self.cfg.temperature,
            max_tokens=self.cfg.max_tokens,
            seed=self.seed,
        )
        return complete_chat(
            self.backend, req, ledger=self.ledger, retry=self.retry
        ).content

    def _complete_parsed(self, messages, parser):
        """One completion with a single format-reminder retry on ParseError."""
        raw = self._complete(messages)
        try:
            return parser(raw)
        except ParseError:
            retry = list(messages) + [
                ChatMessage("assistant", raw or "(empty reply)"),
                ChatMessage("user", FORMAT_REMINDER),
            ]
            return parser(self._complete(retry))

    def run(self) -> EpisodeTrace:
        trace = EpisodeTrace(terminated_by=TERMINATED_BY_FORCED)
        for _ in range(self.cfg.max_rounds):
            try:
                logic_out = self._complete_parsed(
                    build_logic_prompt(self.exemplars.logic, self.logic_memory),
                    parse_logic_output,
                )
            except ParseError:
                trace.terminated_by = TERMINATED_BY_PARSE_FAILURE
                return trace
            if isinstance(logic_out, LogicAnswer):
                trace.preliminary_answer = logic_out.answer
                trace.terminated_by = TERMINATED_BY_ANSWER
                return trace
            trace.rounds.append(self._query_round(logic_out))
        # Round cap reached: force a direct answer, taken verbatim.
        forced = build_logic_prompt(self.exemplars.logic, self.logic_memory) + [
            ChatMessage("user", FORCED_ANSWER_PROMPT)
        ]
        trace.preliminary_answer = self._complete(forced)
        trace.terminated_by = TERMINATED_BY_FORCED
        return trace

    def _query_round(self, logic_out: LogicContinue) -> Round:
        try:
            program = self._complete_parsed(
                build_query_prompt(
                    self.exemplars.query, self.query_memory, logic_out.instruction
                ),
                parse_tool_program,
            )
        except ParseError:
            program = None
        if program is None:
            result = None
            observation = Table(
                columns=("error",),
                rows=(("query agent produced no executable code",),),
                name="error",
            )
            ok = False
        else:
            result = dispatch_program(self.ctx, program)
            observation, ok = result_to_observation(result)
            if ok and isinstance(result, TableResult):
                self.ctx.current_table = result.table
        obs_text = render_markdown(observation, self.cfg.render)
        update_memory(
            self.logic_memory,
            RoundArtifacts(
                reasoning=logic_out.reasoning,
                instruction=logic_out.instruction,
                observation=obs_text,
            ),
            role="logic",
        )
        update_memory(
            self.query_memory,
            RoundArtifacts(
                instruction=logic_out.instruction,
                program=program,
                observation=obs_text,
            ),
            role="query",
        )
        return Round(
            reasoning=logic_out.reasoning,
            instruction=logic_out.instruction,
            program=program,
            observation=observation,
            observation_text=obs_text,
            ok=ok,
        )


def run_episode(
    task,
    cfg: EpisodeConfig,
    backend: Backend,
    tool_settings: ToolSettings,
    exemplars: Optional[ExemplarSet] = None,
    *,
    ledger: Optional[UsageLedger] = None,
    seed: Optional[int] = None,
    retry: Optional[RetryPolicy] = None,
) -> EpisodeTrace:
    """Run one two-agent episode; backend failures propagate to the caller."""
    if exemplars is None:
        exemplars = ExemplarSet.load()
    agent = EpisodeAgent(task, cfg, backend, tool_settings, exemplars, ledger, seed, retry)
    return agent.run()


def refine_trace(trace: EpisodeTrace, task) -> RefinedContext:
    """Strip the trace down to the reasoning context the answering agent may
    see: question, initial table, and the per-round reasoning /
    instruction / observation triples. No code, no few-shot material."""
    return RefinedContext(
        question=task.question,
        initial_table=task.table,
        rounds=tuple(
            RefinedRound(r.reasoning, r.instruction, r.observation_text)
            for r in trace.rounds
        ),
        answer_format_hint=getattr(task, "answer_format_hint", ""),
    )


def decide(
    trace: EpisodeTrace,
    task,
    cfg: EpisodeConfig,
    backend: Backend,
    *,
    sample_index: int = 0,
    ledger: Optional[UsageLedger] = None,
    seed: Optional[int] = None,
    retry: Optional[RetryPolicy] = None,
) -> CandidateAnswer:
    """Produce this path's candidate answer.

    With the answering agent disabled, the episode's own preliminary
    answer is the candidate. Blank outputs fall back to the preliminary
    answer, then to an empty candidate (scored as wrong).
    """

    def candidate(text: str) -> CandidateAnswer:
        return CandidateAnswer(text=text, normalized=normalize_answer(text), sample_index=sample_index)

    if not cfg.decision_agent_enabled:
        return candidate(trace.preliminary_answer or "")

    refined = refine_trace(trace, task)
    prompt = build_decision_prompt(
        refined,
        question=refined.question,
        initial_table=refined.initial_table,
        answer_format_hint=refined.answer_format_hint,
        render=cfg.render,
    )
    draws: list[str] = []
    for i in range(cfg.decision_draws):
        req = ChatRequest(
            model=cfg.model,
            messages=tuple(prompt),
            temperature=cfg.temperature,
            max_tokens=cfg.max_tokens,
            seed=None if seed is None else seed + i,
        )
        raw = complete_chat(backend, req, ledger=ledger, retry=retry).content
        try:
            draws.append(parse_decision_output(raw))
        except EmptyAnswerError:
            continue
    if not draws:
        return candidate(trace.preliminary_answer or "")
    if len(draws) == 1:
        return candidate(draws[0])
    # Per-path plurality across draws; ties go to the earliest draw.
    counts = Counter(normalize_answer(d) for d in draws)
    best = max(counts.items(), key=lambda kv: (kv[1], -_first_index(draws, kv[0])))
    return candidate(next(d for d in draws if normalize_answer(d) == best[0]))


def _first_index(draws: Sequence[str], normalized: str) -> int:
    for i, d in enumerate(draws):
        if normalize_answer(d) == normalized:
            return i
    return len(draws)


def aggregate_majority(candidates: Sequence[CandidateAnswer]) -> FinalAnswer:
    """Majority vote over normalized candidates.

    Ties break to the normalized form whose earliest candidate has the
    lowest sample index; the reported text is that earliest raw candidate.
    """
    if not candidates:
        raise ValueError("candidates must be non-empty")
    counts: Counter = Counter(c.normalized for c in candidates)
    earliest: dict[str, CandidateAnswer] = {}
    for c in sorted(candidates, key=lambda c: c.sample_index):
        earliest.setdefault(c.normalized, c)
    winner = min(
        counts,
        key=lambda form: (-counts[form], earliest[form].sample_index),
    )
    return FinalAnswer(
        text=earliest[winner].text,
        vote_counts=dict(counts),
        winner_count=counts[winner],
    )


def run_orchestra(
    task,
    cfg: EpisodeConfig,
    backend: Backend,
    tool_settings: ToolSettings = ToolSettings(),
    exemplars: Optional[ExemplarSet] = None,
    *,
    trace_writer: Optional["TraceWriter"] = None,
    retry: Optional[RetryPolicy] = None,
) -> tuple[FinalAnswer, list[EpisodeTrace], UsageStats]:
    """Sample ``m_samples`` independent episodes, decide each, majority-vote.

    Samples run sequentially with fresh memories (seeds ``seed_base + i``
    when set). A sample whose backend fails contributes an empty candidate;
    usage covers every request of every sample including decision calls.
    """
    if exemplars is None:
        exemplars = ExemplarSet.load()
    ledger = UsageLedger()
    candidates: list[CandidateAnswer] = []
    traces: list[EpisodeTrace] = []
    for i in range(cfg.m_samples):
        seed = None if cfg.seed_base is None else cfg.seed_base + i
        before = ledger.total()
        try:
            trace = run_episode(
                task, cfg, backend, tool_settings, exemplars,
                ledger=ledger, seed=seed, retry=retry,
            )
            cand = decide(
                trace, task, cfg, backend,
                sample_index=i, ledger=ledger, seed=seed, retry=retry,
            )
        except BackendError:
            trace = EpisodeTrace(terminated_by=TERMINATED_BY_PARSE_FAILURE)
            cand = CandidateAnswer(text="", normalized="", sample_index=i)
        traces.append(trace)
        candidates.append(cand)
        if trace_writer is not None:
            trace_writer.write(
                task_id=getattr(task, "id", ""),
                sample_index=i,
                trace=trace,
                candidate=cand,
                usage=ledger.total() - before,
            )
    return aggregate_majority(candidates), traces, ledger.total()


# --- trace persistence --------------------------------------------------------


def table_to_json(table: Table) -> dict:
    return {"name": table.name, "columns": list(table.columns), "rows": [list(r) for r in table.rows]}


def trace_to_json(trace: EpisodeTrace) -> dict:
    return {
        "terminated_by": trace.terminated_by,
        "preliminary_answer": trace.preliminary_answer,
        "rounds": [
            {
                "reasoning": r.reasoning,
                "instruction": r.instruction,
                "program": None if r.program is None else asdict(r.program),
                "observation": table_to_json(r.observation),
                "ok": r.ok,
            }
            for r in trace.rounds
        ],
    }


class TraceWriter:
    """Append-only JSON-lines audit trail: one full record per sample."""

    def __init__(self, path):
        self.path = str(path)
        self._lock = threading.Lock()
        self._fh = open(self.path, "w", encoding="utf-8")

    def write(self, task_id: str, sample_index: int, trace: EpisodeTrace,
              candidate: CandidateAnswer, usage: UsageStats) -> None:
        record = {
            "task_id": task_id,
            "sample_index": sample_index,
            "trace": trace_to_json(trace),
            "candidate": {
                "text": candidate.text,
                "normalized": candidate.normalized,
                "sample_index": candidate.sample_index,
            },
            "usage": asdict(usage),
        }
        line = json.dumps(record, ensure_ascii=False)
        with self._lock:
            self._fh.write(line + "\n")
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
