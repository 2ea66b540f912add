"""The three model-backed roles: prompt construction, parsing, memory.

The reasoning role sees question, observations, and its own notes, never
code. The code-writing role sees instructions, prior code, and
observations. The answering role sees a refined context with no few-shot
material at all. Keeping those surfaces disjoint is the core contract of
this module, and the tests enforce it by substring checks.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

from .errors import EmptyAnswerError, ParseError
from .llm import ChatMessage
from .table import RenderOptions, Table, render_markdown

MEMORY_KINDS = ("question", "table_obs", "reasoning", "instruction", "program", "note")

FORMAT_REMINDER = (
    "Your previous reply did not follow the required format. Reply again, "
    "following the format exactly."
)


@dataclass(frozen=True)
class MemoryEntry:
    kind: str
    text: str

    def __post_init__(self):
        if self.kind not in MEMORY_KINDS:
            raise ValueError(f"bad memory entry kind: {self.kind!r}")


@dataclass
class AgentMemory:
    """Append-only per-episode conversation memory for one agent role."""

    entries: list[MemoryEntry] = field(default_factory=list)

    @classmethod
    def initial(cls, question: str, table_text: str) -> "AgentMemory":
        return cls(
            entries=[
                MemoryEntry("question", question),
                MemoryEntry("table_obs", table_text),
            ]
        )

    def _append(self, kind: str, text: str) -> None:
        self.entries.append(MemoryEntry(kind, text))

    @property
    def question(self) -> str:
        return self.entries[0].text

    @property
    def initial_table(self) -> str:
        return self.entries[1].text


@dataclass(frozen=True)
class LogicContinue:
    reasoning: str
    instruction: str


@dataclass(frozen=True)
class LogicAnswer:
    answer: str


LogicOutput = Union[LogicContinue, LogicAnswer]

SQL = "sql"
SCRIPT = "script"


@dataclass(frozen=True)
class ToolProgram:
    kind: str  # SQL or SCRIPT
    code: str

    def __post_init__(self):
        if self.kind not in (SQL, SCRIPT):
            raise ValueError(f"bad program kind: {self.kind!r}")
        if not self.code.strip():
            raise ValueError("empty program")


@dataclass(frozen=True)
class RoundArtifacts:
    """What one round produced, for the memory update of either role."""

    instruction: str
    observation: str
    reasoning: Optional[str] = None
    program: Optional[ToolProgram] = None


def update_memory(memory: AgentMemory, artifacts: RoundArtifacts, role: str) -> AgentMemory:
    """Append one round's artifacts to ``memory`` for the given role.

    The reasoning role records (reasoning, instruction, observation) and
    must never receive program code; the code-writing role records
    (instruction, program, observation).
    """
    if role == "logic":
        if artifacts.program is not None:
            raise ValueError("program code must not enter the logic memory")
        if artifacts.reasoning is None:
            raise ValueError("logic update requires reasoning")
        memory._append("reasoning", artifacts.reasoning)
        memory._append("instruction", artifacts.instruction)
        memory._append("table_obs", artifacts.observation)
    elif role == "query":
        memory._append("instruction", artifacts.instruction)
        if artifacts.program is not None:
            memory._append("program", artifacts.program.code)
        memory._append("table_obs", artifacts.observation)
    else:
        raise ValueError(f"bad role: {role!r}")
    return memory


# --- few-shot exemplars -----------------------------------------------------

SENTINEL_PREFIX = "[EXS:"


@dataclass(frozen=True)
class FewShotExemplar:
    role: str  # logic | query | decision
    turns: tuple  # alternating user/assistant ChatMessage tuples, ends assistant
    exemplar_id: str = ""

    @property
    def sentinel(self) -> str:
        return f"{SENTINEL_PREFIX}{self.exemplar_id}]"


def _parse_exemplar_file(text: str, role: str) -> list[FewShotExemplar]:
    exemplars = []
    blocks = re.split(r"(?m)^#EXEMPLAR\s+", text)
    for block in blocks:
        if not block.strip():
            continue
        header, _, body = block.partition("\n")
        m = re.search(r"id=(\S+)", header)
        if not m:
            raise ParseError(f"exemplar header missing id=: {header!r}")
        exemplar_id = m.group(1)
        turns = []
        for part in re.split(r"(?m)^#(USER|ASSISTANT)\s*$", body)[1:]:
            turns.append(part)
        messages = []
        for marker, content in zip(turns[::2], turns[1::2]):
            messages.append(
                ChatMessage("user" if marker == "USER" else "assistant", content.strip())
            )
        if not messages or messages[-1].role != "assistant":
            raise ParseError(f"exemplar {exemplar_id} must end with an assistant turn")
        for a, b in zip(messages, messages[1:]):
            if a.role == b.role:
                raise ParseError(f"exemplar {exemplar_id} turns must alternate")
        ex = FewShotExemplar(role=role, turns=tuple(messages), exemplar_id=exemplar_id)
        if not any(ex.sentinel in m.content for m in messages):
            raise ParseError(f"exemplar {exemplar_id} lacks its sentinel line")
        exemplars.append(ex)
    return exemplars


PROMPT_FAMILIES = ("wikitq", "tabfact")


def resolve_family(family: str) -> str:
    """Map a benchmark family onto the exemplar set it uses."""
    family = family.lower()
    if family in ("tablebench", "unified", "unified-jsonl"):
        return "wikitq"
    if family in PROMPT_FAMILIES:
        return family
    return "wikitq"


def load_exemplars(
    role: str, family: str = "wikitq", prompts_dir: Optional[str] = None
) -> list[FewShotExemplar]:
    """Load the few-shot exemplars for one role, from ``prompts_dir`` if set,
    else from the versioned files shipped with the package."""
    family = resolve_family(family)
    if prompts_dir is not None:
        path = Path(prompts_dir) / family / f"{role}.txt"
        text = path.read_text(encoding="utf-8")
    else:
        text = (
            resources.files("orchestra")
            .joinpath(f"prompts/{family}/{role}.txt")
            .read_text(encoding="utf-8")
        )
    return _parse_exemplar_file(text, role)


@dataclass(frozen=True)
class ExemplarSet:
    logic: tuple
    query: tuple

    @classmethod
    def load(cls, family: str = "wikitq", prompts_dir: Optional[str] = None) -> "ExemplarSet":
        return cls(
            logic=tuple(load_exemplars("logic", family, prompts_dir)),
            query=tuple(load_exemplars("query", family, prompts_dir)),
        )

    def sentinels(self) -> list[str]:
        return [e.sentinel for e in self.logic + self.query]


# --- prompt construction ----------------------------------------------------

LOGIC_ROLE_CARD = """\
You are the reasoning specialist of a table analysis team. You are given a \
question, a table, and observations gathered so far. In each turn, either:
- request one more piece of evidence by replying with two lines:
REASONING: <what you can conclude so far and what is still missing>
INSTRUCTION: <one concrete table operation, in plain words, no code>
- or, once the evidence is sufficient, reply with a single line:
ANSWER: <the final answer>
Never write SQL or code. Keep each instruction to a single step."""

QUERY_ROLE_CARD = """\
You turn a plain-language instruction into one executable program over the \
current working table, which is registered as DF. Reply with exactly one \
fenced code block: ```sql for a single SELECT statement over DF, or \
```python for a short script over the dataframe bound as df (alias DF). \
In python, assign the output to a variable named result, or leave it as \
the final value of df / DF. Failed steps leave the working table unchanged."""

DECISION_ROLE_CARD = """\
You answer a question about a table. You are given the table, the question, \
and reasoning notes with the observations they produced. Rely only on this \
context. Finish your reply with one line:
ANSWER: <the final answer>"""


def _exemplar_messages(exemplars: Sequence[FewShotExemplar]) -> list:
    messages = []
    for ex in exemplars:
        messages.extend(ex.turns)
    return messages


def serialize_logic_memory(memory: AgentMemory) -> str:
    """Linear transcript of the reasoning memory: question, table, then one
    REASONING / INSTRUCTION / OBSERVATION triple per round. Never code."""
    parts = [f"QUESTION: {memory.question}", "TABLE:", memory.initial_table]
    for entry in memory.entries[2:]:
        if entry.kind == "reasoning":
            parts.append("")
            parts.append(f"REASONING: {entry.text}")
        elif entry.kind == "instruction":
            parts.append(f"INSTRUCTION: {entry.text}")
        elif entry.kind == "table_obs":
            parts.append("OBSERVATION:")
            parts.append(entry.text)
        elif entry.kind == "program":
            raise ValueError("program entry found in logic memory")
    return "\n".join(parts)


def build_logic_prompt(
    exemplars: Sequence[FewShotExemplar], memory: AgentMemory
) -> list:
    messages = [ChatMessage("system", LOGIC_ROLE_CARD)]
    messages.extend(_exemplar_messages(exemplars))
    messages.append(ChatMessage("user", serialize_logic_memory(memory)))
    return messages


def serialize_query_memory(memory: AgentMemory, instruction: str) -> str:
    parts = ["TABLE:", memory.initial_table]
    for entry in memory.entries[2:]:
        if entry.kind == "instruction":
            parts.append("")
            parts.append(f"INSTRUCTION: {entry.text}")
        elif entry.kind == "program":
            parts.append("CODE:")
            parts.append(entry.text)
        elif entry.kind == "table_obs":
            parts.append("OBSERVATION:")
            parts.append(entry.text)
    parts.append("")
    parts.append(f"INSTRUCTION: {instruction}")
    return "\n".join(parts)


def build_query_prompt(
    exemplars: Sequence[FewShotExemplar], memory: AgentMemory, instruction: str
) -> list:
    if not instruction.strip():
        raise ValueError("instruction must be non-empty")
    messages = [ChatMessage("system", QUERY_ROLE_CARD)]
    messages.extend(_exemplar_messages(exemplars))
    messages.append(ChatMessage("user", serialize_query_memory(memory, instruction)))
    return messages


def build_decision_prompt(
    trace,
    question: str,
    initial_table: Table,
    answer_format_hint: str = "",
    render: RenderOptions = RenderOptions(),
) -> list:
    """Exemplar-free prompt over the refined reasoning context.

    ``trace`` only needs ``rounds`` with reasoning / instruction /
    observation fields; code and few-shot material never enter here.
    """
    system = DECISION_ROLE_CARD
    if answer_format_hint:
        system += f"\n{answer_format_hint}"
    parts = ["TABLE:", render_markdown(initial_table, render), "", f"QUESTION: {question}"]
    for rnd in trace.rounds:
        parts.append("")
        parts.append(f"REASONING: {rnd.reasoning}")
        parts.append(f"INSTRUCTION: {rnd.instruction}")
        parts.append("OBSERVATION:")
        parts.append(rnd.observation_text)
    return [ChatMessage("system", system), ChatMessage("user", "\n".join(parts))]


# --- output parsing ---------------------------------------------------------

_MARKER = re.compile(r"(?im)^[ \t]*(ANSWER|REASONING|INSTRUCTION)[ \t]*:", re.MULTILINE)


def _segments(raw: str) -> dict[str, str]:
    """First text segment per marker; a segment runs to the next marker."""
    found: dict[str, str] = {}
    matches = list(_MARKER.finditer(raw))
    for i, m in enumerate(matches):
        key = m.group(1).upper()
        end = matches[i + 1].start() if i + 1 < len(matches) else len(raw)
        if key not in found:
            found[key] = raw[m.end():end].strip()
    return found


def parse_logic_output(raw: str) -> LogicOutput:
    """Recognize ``ANSWER:`` or a ``REASONING:`` + ``INSTRUCTION:`` pair."""
    seg = _segments(raw)
    if "ANSWER" in seg:
        if not seg["ANSWER"]:
            raise ParseError("empty answer")
        return LogicAnswer(seg["ANSWER"])
    if "REASONING" in seg and "INSTRUCTION" in seg:
        if not seg["REASONING"] or not seg["INSTRUCTION"]:
            raise ParseError("blank reasoning or instruction")
        return LogicContinue(seg["REASONING"], seg["INSTRUCTION"])
    raise ParseError("expected ANSWER: or REASONING:/INSTRUCTION: markers")


def render_logic_output(out: LogicOutput) -> str:
    """Transcript form of a logic output; re-parses to an equal value."""
    if isinstance(out, LogicAnswer):
        return f"ANSWER: {out.answer}"
    return f"REASONING: {out.reasoning}\nINSTRUCTION: {out.instruction}"


_FENCE = re.compile(r"```[ \t]*([A-Za-z0-9_+-]*)[ \t]*\n(.*?)```", re.DOTALL)
_PREFIX = re.compile(r"(?im)^[ \t]*(SQL|PYTHON)[ \t]*:[ \t]*(.*)$")


def parse_tool_program(raw: str) -> ToolProgram:
    """Extract the first fenced code block, falling back to ``SQL:`` /
    ``Python:`` prefix lines."""
    for m in _FENCE.finditer(raw):
        label, code = m.group(1).lower(), m.group(2).strip()
        if not code:
            continue
        if label == "sql":
            return ToolProgram(SQL, code)
        if label in ("python", "py"):
            return ToolProgram(SCRIPT, code)
        if not label:
            kind = SQL if code.lstrip().lower().startswith("select") else SCRIPT
            return ToolProgram(kind, code)
    m = _PREFIX.search(raw)
    if m:
        kind = SQL if m.group(1).upper() == "SQL" else SCRIPT
        first = m.group(2).strip()
        rest = raw[m.end():]
        tail = []
        for line in rest.splitlines():
            if _PREFIX.match(line) or line.strip().startswith("```"):
                break
            tail.append(line)
        code = "\n".join(([first] if first else []) + tail).strip().strip("`").strip()
        if code:
            return ToolProgram(kind, code)
    raise ParseError("no code found in query agent output")


# Unlike the logic markers this one may appear mid-line.
_ANSWER_MARKER = re.compile(r"(?i)ANSWER[ \t]*:")


def extract_answer(raw: str) -> Optional[str]:
    """Text after the last ``ANSWER:`` marker, or None if absent."""
    matches = list(_ANSWER_MARKER.finditer(raw))
    if not matches:
        return None
    return raw[matches[-1].end():].strip()


def parse_decision_output(raw: str) -> str:
    """Content after the last ``ANSWER:`` marker, else the last non-empty line."""
    answer = extract_answer(raw)
    if answer is not None:
        if answer:
            return answer
        raise EmptyAnswerError("blank answer after marker")
    lines = [ln.strip() for ln in raw.splitlines() if ln.strip()]
    if not lines:
        raise EmptyAnswerError("blank decision output")
    return lines[-1]
