import sys
from pathlib import Path

import pytest

from orchestra.bench import TQATask
from orchestra.llm import Backend, ChatResponse, UsageStats, synthetic_tokens
from orchestra.table import Table
from orchestra.tools import ToolSettings

TESTS_DIR = Path(__file__).parent

STUB_SANDBOX = (sys.executable, str(TESTS_DIR / "stub_sandbox.py"))


@pytest.fixture
def ship_table() -> Table:
    return Table(
        columns=("name", "port", "propulsion", "date"),
        rows=(
            ("HMNZS Endeavour", "Auckland", "320 bhp diesel, 10 knots (19 km/h)", "1962"),
            ("HMNZS Manawanui", "Auckland", "710 bhp diesel, 12.5 knots (23 km/h)", "1979"),
            ("HMNZS Canterbury", "Lyttelton", "30,000 shp steam, 29 knots (54 km/h)", "1971"),
            ("HMNZS Wellington", "Wellington", "3,540 bhp diesel, 21 knots (39 km/h)", "1969"),
        ),
    )


@pytest.fixture
def ship_task(ship_table) -> TQATask:
    return TQATask(
        id="ships-1",
        table=ship_table,
        question="what is the name of the fastest ship based at auckland?",
        gold_answers=("HMNZS Manawanui",),
    )


@pytest.fixture
def stub_tools() -> ToolSettings:
    return ToolSettings(sandbox_command=STUB_SANDBOX, sandbox_timeout=10.0)


class RecordingBackend(Backend):
    """Wraps any backend, capturing all traffic for invariant checks."""

    def __init__(self, inner: Backend):
        super().__init__()
        self.inner = inner
        self.requests = []
        self.responses = []

    def complete(self, req):
        self.requests.append(req)
        resp = self.inner.complete(req)
        self.responses.append(resp)
        return resp

    def prompts_by_role(self, role_card_prefix: str) -> list[str]:
        return [
            r.text()
            for r in self.requests
            if r.messages[0].role == "system"
            and r.messages[0].content.startswith(role_card_prefix)
        ]


class ConstantBackend(Backend):
    """Always replies with the same content; useful for counting tests."""

    def __init__(self, reply: str):
        super().__init__()
        self.reply = reply

    def complete(self, req):
        return ChatResponse(
            content=self.reply,
            usage=UsageStats(
                input_tokens=synthetic_tokens(req.text()),
                output_tokens=synthetic_tokens(self.reply),
            ),
        )


class RoleRoutingBackend(Backend):
    """Routes by prompt role: content-keyed, safe under interleaving."""

    def __init__(self, logic_reply, query_reply="```sql\nSELECT count(*) AS n FROM DF\n```",
                 forced_reply="forced answer", decision_reply="ANSWER: routed"):
        super().__init__()
        self.logic_reply = logic_reply
        self.query_reply = query_reply
        self.forced_reply = forced_reply
        self.decision_reply = decision_reply

    def route(self, req) -> str:
        from orchestra.agents import DECISION_ROLE_CARD, QUERY_ROLE_CARD
        from orchestra.orchestrator import FORCED_ANSWER_PROMPT

        if req.messages[-1].content == FORCED_ANSWER_PROMPT:
            return self.forced_reply
        system = req.messages[0].content
        if system.startswith(QUERY_ROLE_CARD[:40]):
            return self.query_reply
        if system.startswith(DECISION_ROLE_CARD[:40]):
            return self.decision_reply
        reply = self.logic_reply
        return reply(req) if callable(reply) else reply

    def complete(self, req):
        reply = self.route(req)
        return ChatResponse(
            content=reply,
            usage=UsageStats(
                input_tokens=synthetic_tokens(req.text()),
                output_tokens=synthetic_tokens(reply),
            ),
        )
