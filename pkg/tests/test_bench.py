import json
import random

import pytest

from orchestra.bench import (
    CostReport,
    TQATask,
    baseline_cot,
    baseline_react,
    evaluate_exact_match,
    load_dataset,
    run_benchmark,
    write_unified_jsonl,
)
from orchestra.config import RunConfig
from orchestra.errors import FormatError, TransportError
from orchestra.llm import (
    Backend,
    ChatResponse,
    UsageLedger,
    UsageStats,
    scripted_backend,
    synthetic_tokens,
)
from orchestra.orchestrator import EpisodeConfig, FORCED_ANSWER_PROMPT
from orchestra.table import Table

from .conftest import STUB_SANDBOX, RecordingBackend, RoleRoutingBackend


class KeyedBackend(Backend):
    """Stateless content-routed replies; deterministic under concurrency."""

    def __init__(self, routes):
        super().__init__()
        self.routes = routes

    def complete(self, req):
        text = req.text()
        for needle, reply in self.routes:
            if needle in text:
                if isinstance(reply, Exception):
                    raise reply
                return ChatResponse(
                    content=reply,
                    usage=UsageStats(
                        input_tokens=synthetic_tokens(text),
                        output_tokens=synthetic_tokens(reply),
                    ),
                )
        raise AssertionError(f"no route for request: {text[:120]}")


def simple_task(i, question, gold):
    return TQATask(
        id=f"t{i}",
        table=Table(columns=("a",), rows=(("1",), ("2",))),
        question=question,
        gold_answers=(gold,),
    )


def run_config(**kw):
    defaults = dict(
        m_samples=1, max_rounds=3, sandbox_command=STUB_SANDBOX, retry_attempts=1
    )
    defaults.update(kw)
    return RunConfig(**defaults)


# --- exact match -------------------------------------------------------------


@pytest.mark.parametrize(
    "prediction,gold,expected",
    [
        ("Yes.", ["yes"], True),
        ("2,000", ["2000"], True),
        ("paris", ["London"], False),
        ("A | 2000", ["a|2,000"], True),
        ("2000|a", ["a|2000"], False),  # order matters for multi-part answers
        ("7", ["seven", "7"], True),
    ],
)
def test_evaluate_exact_match(prediction, gold, expected):
    assert evaluate_exact_match(prediction, gold) is expected


# --- dataset loading ------------------------------------------------------------


def test_load_unified_jsonl(tmp_path):
    path = tmp_path / "tasks.jsonl"
    path.write_text(
        '{"id":"t1","question":"q","gold":["7"],"table":{"columns":["a"],"rows":[["7"]]}}\n'
    )
    tasks = load_dataset(path, "unified-jsonl")
    assert len(tasks) == 1
    assert tasks[0].table.rows == (("7",),)
    assert tasks[0].gold_answers == ("7",)


def test_load_unified_jsonl_reports_line_number(tmp_path):
    path = tmp_path / "tasks.jsonl"
    path.write_text(
        '{"id":"t1","question":"q","gold":["1"],"table":{"columns":["a"],"rows":[]}}\n'
        '{"id":"t2","question":"q","gold":["1"],"table":{"columns":["a"],"rows":[]}}\n'
        "{broken}\n"
    )
    with pytest.raises(FormatError, match="line 3"):
        load_dataset(path, "unified-jsonl")


def test_unified_round_trip(tmp_path):
    tasks = [simple_task(1, "q1", "a"), simple_task(2, "q2", "b")]
    path = tmp_path / "out.jsonl"
    write_unified_jsonl(tasks, path)
    assert load_dataset(path, "unified-jsonl") == tasks


def test_wikitq_adapter(tmp_path):
    (tmp_path / "csv").mkdir()
    (tmp_path / "csv" / "204.csv").write_text("name,wins\nax,3\nbee,5\n")
    tsv = tmp_path / "questions.tsv"
    tsv.write_text(
        "id\tutterance\tcontext\ttargetValue\n"
        "nt-1\twho won the most?\tcsv/204.csv\tbee\n"
        "nt-2\tlist everyone\tcsv/204.csv\tax|bee\n"
    )
    tasks = load_dataset(tsv, "wikitq")
    assert [t.id for t in tasks] == ["nt-1", "nt-2"]
    assert tasks[0].table.columns == ("name", "wins")
    assert tasks[1].gold_answers == ("ax|bee",)


def test_tabfact_adapter(tmp_path):
    (tmp_path / "all_csv").mkdir()
    (tmp_path / "all_csv" / "2-100.html.csv").write_text(
        "team#wins\nalpha#12\nbeta#15\n"
    )
    collected = tmp_path / "collected.json"
    collected.write_text(
        json.dumps(
            {"2-100.html.csv": [["alpha won more", "beta won more"], [0, 1], "caption"]}
        )
    )
    tasks = load_dataset(collected, "tabfact")
    assert len(tasks) == 2
    assert tasks[0].gold_answers == ("no",)
    assert tasks[1].gold_answers == ("yes",)
    assert all('"yes" or "no"' in t.answer_format_hint for t in tasks)
    assert tasks[0].table.columns == ("team", "wins")


def test_tablebench_adapter(tmp_path):
    path = tmp_path / "tb.jsonl"
    table_payload = json.dumps({"columns": ["a", "b"], "data": [["1", "x"]]})
    path.write_text(
        json.dumps({"id": "tb-1", "question": "q?", "answer": "x", "table": table_payload})
        + "\n"
    )
    tasks = load_dataset(path, "tablebench")
    assert tasks[0].table.columns == ("a", "b")
    assert tasks[0].gold_answers == ("x",)


# --- baselines --------------------------------------------------------------------


def test_baseline_cot(ship_task):
    backend = scripted_backend([("", "first filter, then sort... ANSWER: 4")])
    ledger = UsageLedger()
    prediction = baseline_cot(ship_task, EpisodeConfig(), backend, ledger=ledger)
    assert prediction == "4"
    assert ledger.total().requests == 1


def test_baseline_cot_tabfact_hint_in_prompt():
    task = TQATask(
        id="tf",
        table=Table(columns=("a",), rows=(("1",),)),
        question="statement",
        gold_answers=("yes",),
        answer_format_hint='Answer with exactly "yes" or "no".',
    )
    backend = RecordingBackend(scripted_backend([("", "ANSWER: yes")]))
    baseline_cot(task, EpisodeConfig(), backend)
    assert '"yes" or "no"' in backend.requests[0].messages[0].content


def test_baseline_cot_renders_full_table():
    rows = tuple((str(i),) for i in range(60))
    task = TQATask(id="big", table=Table(columns=("n",), rows=rows), question="q?")
    backend = RecordingBackend(scripted_backend([("", "ANSWER: 59")]))
    baseline_cot(task, EpisodeConfig(), backend)
    prompt = backend.requests[0].text()
    assert "| 59 |" in prompt  # all rows present, no truncation


def test_baseline_react_two_rounds(ship_task, stub_tools):
    backend = RecordingBackend(
        scripted_backend(
            [
                ("QUESTION:", "look at ports\n```sql\nSELECT name FROM DF WHERE port='Auckland'\n```"),
                ("HMNZS Endeavour", "that settles it\nANSWER: x"),
            ]
        )
    )
    prediction = baseline_react(ship_task, EpisodeConfig(), backend, stub_tools)
    assert prediction == "x"
    # the single react memory accumulates the round-1 code verbatim
    round2_prompt = backend.requests[1].text()
    assert "SELECT name FROM DF WHERE port='Auckland'" in round2_prompt


def test_baseline_react_forced_after_cap(ship_task, stub_tools):
    class NeverAnswers(Backend):
        def complete(self, req):
            if req.messages[-1].content.endswith(FORCED_ANSWER_PROMPT):
                reply = "42"
            else:
                reply = "just musing, no code"
            return ChatResponse(content=reply, usage=UsageStats(requests=0))

    backend = NeverAnswers()
    cfg = EpisodeConfig(max_rounds=3)
    prediction = baseline_react(ship_task, cfg, backend, stub_tools)
    assert prediction == "42"


# --- run_benchmark -------------------------------------------------------------------


def four_tasks():
    return [
        simple_task(1, "alpha question", "a"),
        simple_task(2, "bravo question", "b"),
        simple_task(3, "charlie question", "c"),
        simple_task(4, "delta question", "d"),
    ]


def cot_routes():
    # three right, one wrong
    return [
        ("alpha question", "ANSWER: a"),
        ("bravo question", "ANSWER: b"),
        ("charlie question", "ANSWER: c"),
        ("delta question", "ANSWER: wrong"),
    ]


def test_run_benchmark_accuracy():
    report = run_benchmark(four_tasks(), "cot", run_config(), KeyedBackend(cot_routes()))
    assert report.accuracy == 0.75
    assert [r.correct for r in report.per_task] == [True, True, True, False]


def test_run_benchmark_cot_mean_requests_is_one():
    report = run_benchmark(four_tasks(), "cot", run_config(), KeyedBackend(cot_routes()))
    assert report.cost.mean_requests == 1.0


def test_run_benchmark_accuracy_invariant_under_order_and_concurrency():
    outputs = []
    for concurrency in (1, 4):
        for seed in (0, 1):
            tasks = four_tasks()
            random.Random(seed).shuffle(tasks)
            report = run_benchmark(
                tasks, "cot", run_config(), KeyedBackend(cot_routes()), concurrency=concurrency
            )
            outputs.append(report.accuracy)
    assert set(outputs) == {0.75}


def test_run_benchmark_task_failure_counts_wrong_and_continues():
    routes = cot_routes()[:3] + [("delta question", TransportError("down"))]
    report = run_benchmark(four_tasks(), "cot", run_config(), KeyedBackend(routes))
    assert report.accuracy == 0.75
    assert report.per_task[3].prediction == ""
    assert report.per_task[3].correct is False


def test_run_benchmark_retries_transient_failures():
    class FlakyOnce(Backend):
        def __init__(self):
            super().__init__()
            self.calls = 0

        def complete(self, req):
            self.calls += 1
            if self.calls == 1:
                raise TransportError("blip")
            return ChatResponse(content="ANSWER: a", usage=UsageStats())

    backend = FlakyOnce()
    tasks = [simple_task(1, "alpha question", "a")]
    cfg = run_config(retry_attempts=3, retry_backoff=())
    report = run_benchmark(tasks, "cot", cfg, backend)
    assert report.accuracy == 1.0  # transient blip retried, not counted wrong
    assert backend.ledger.total().requests == 2


def test_run_benchmark_two_agent_skips_decision():
    backend = RecordingBackend(RoleRoutingBackend("ANSWER: a"))
    tasks = [simple_task(1, "alpha question", "a")]
    report = run_benchmark(tasks, "two-agent", run_config(m_samples=2), backend)
    assert report.accuracy == 1.0
    from orchestra.agents import DECISION_ROLE_CARD

    assert backend.prompts_by_role(DECISION_ROLE_CARD[:40]) == []


def test_run_benchmark_orchestra_exact_request_count(tmp_path):
    # fixed schedule: each sample runs 2 rounds then answers; decision on.
    # per sample: 3 logic + 2 query + 1 decision = 6; m=5 -> 30 requests.
    import itertools

    logic_cycle = itertools.cycle(
        [
            "REASONING: r1\nINSTRUCTION: count the rows",
            "REASONING: r2\nINSTRUCTION: count the rows again",
            "ANSWER: 2",
        ]
    )
    backend = RoleRoutingBackend(
        lambda req: next(logic_cycle), decision_reply="ANSWER: 2"
    )
    tasks = [simple_task(1, "alpha question", "2")]
    trace_path = tmp_path / "traces.jsonl"
    report = run_benchmark(
        tasks,
        "orchestra",
        run_config(m_samples=5),
        backend,
        trace_path=str(trace_path),
    )
    assert report.cost.mean_requests == 30.0
    assert report.accuracy == 1.0
    assert len(trace_path.read_text().splitlines()) == 5  # one record per sample


def test_run_benchmark_cost_means_match_ledger_both_ways():
    tasks = four_tasks()
    backend = KeyedBackend(cot_routes())
    report = run_benchmark(tasks, "cot", run_config(), backend)
    total = backend.ledger.total()
    n = len(tasks)
    assert report.cost.mean_requests == total.requests / n
    assert report.cost.mean_input_tokens == total.input_tokens / n
    assert report.cost.mean_output_tokens == total.output_tokens / n
    assert total.requests == report.cost.mean_requests * n


def test_run_benchmark_rejects_bad_args():
    with pytest.raises(ValueError):
        run_benchmark([], "cot", run_config(), KeyedBackend([]))
    with pytest.raises(ValueError):
        run_benchmark(four_tasks(), "nope", run_config(), KeyedBackend([]))


def test_report_json_shape():
    report = run_benchmark(four_tasks(), "cot", run_config(), KeyedBackend(cot_routes()))
    payload = report.to_json()
    assert payload["accuracy"] == 0.75
    assert len(payload["per_task"]) == 4
    assert set(payload["cost"]) == {
        "mean_time_s",
        "mean_requests",
        "mean_input_tokens",
        "mean_output_tokens",
    }
