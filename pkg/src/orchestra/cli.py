"""Command-line entry points: run one question, benchmark a dataset,
convert benchmark releases into the unified JSONL format, or ask
questions interactively."""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from .bench import (
    BENCH_MODES,
    TQATask,
    baseline_cot,
    baseline_react,
    load_dataset,
    run_benchmark,
    write_unified_jsonl,
)
from .config import RunConfig, load_config
from .errors import OrchestraError
from .llm import HttpBackend
from .orchestrator import TraceWriter, run_orchestra
from .table import Table, load_table

TABLE_FORMATS = {".csv": "csv", ".tsv": "tsv", ".json": "json-records", ".md": "markdown"}


def _load_table_file(path: str, fmt: str | None) -> Table:
    suffix = Path(path).suffix.lower()
    fmt = fmt or TABLE_FORMATS.get(suffix)
    if fmt is None:
        raise SystemExit(f"cannot infer table format from {path!r}; pass --format")
    with open(path, "rb") as fh:
        return load_table(fh, fmt)


def _apply_flags(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    updates = {}
    for flag, name in (
        ("m", "m_samples"),
        ("max_rounds", "max_rounds"),
        ("temperature", "temperature"),
        ("endpoint", "api_base"),
        ("model", "model"),
        ("concurrency", "concurrency"),
        ("prompt_family", "prompt_family"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            updates[name] = value
    return replace(cfg, **updates)


def _base_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config, cfg)
    return _apply_flags(cfg, args)


def _trace_path(cfg: RunConfig) -> str:
    out = Path(cfg.trace_dir)
    out.mkdir(parents=True, exist_ok=True)
    return str(out / f"run-{int(time.time())}.jsonl")


def _answer_one(task: TQATask, mode: str, cfg: RunConfig, backend, trace_path: str) -> str:
    if mode in ("orchestra", "two-agent"):
        episode = cfg.episode()
        if mode == "two-agent":
            episode = replace(episode, decision_agent_enabled=False)
        with TraceWriter(trace_path) as writer:
            final, _traces, _usage = run_orchestra(
                task, episode, backend, cfg.tool_settings(), cfg.exemplars(),
                trace_writer=writer,
            )
        return final.text
    if mode == "cot":
        return baseline_cot(task, cfg.episode(), backend)
    return baseline_react(task, cfg.episode(), backend, cfg.tool_settings())


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _base_config(args)
    table = _load_table_file(args.table, args.format)
    task = TQATask(id="cli", table=table, question=args.question)
    backend = HttpBackend(base_url=cfg.api_base, api_key=cfg.api_key)
    trace_path = _trace_path(cfg)
    answer = _answer_one(task, args.mode, cfg, backend, trace_path)
    print(answer)
    print(f"trace: {trace_path}", file=sys.stderr)
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _base_config(args)
    tasks = load_dataset(args.dataset, args.kind)
    if args.limit:
        tasks = tasks[: args.limit]
    backend = HttpBackend(base_url=cfg.api_base, api_key=cfg.api_key)
    trace_path = _trace_path(cfg)
    report = run_benchmark(
        tasks, args.mode, cfg, backend,
        concurrency=args.concurrency or cfg.concurrency,
        trace_path=trace_path,
    )
    payload = json.dumps(report.to_json(), indent=2, ensure_ascii=False)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
    print(f"mode={report.mode} accuracy={report.accuracy:.3f} "
          f"mean_requests={report.cost.mean_requests:.1f} "
          f"mean_time_s={report.cost.mean_time_s:.1f}")
    print(f"trace: {trace_path}", file=sys.stderr)
    return 0


def cmd_convert(args: argparse.Namespace) -> int:
    tasks = load_dataset(args.in_path, args.kind)
    write_unified_jsonl(tasks, args.out)
    print(f"wrote {len(tasks)} tasks to {args.out}")
    return 0


def cmd_repl(args: argparse.Namespace) -> int:
    cfg = _base_config(args)
    table = _load_table_file(args.table, args.format)
    backend = HttpBackend(base_url=cfg.api_base, api_key=cfg.api_key)
    trace_path = _trace_path(cfg)
    print(f"table {table.name}: {table.n_rows} rows x {table.n_cols} cols; "
          "empty line to exit")
    while True:
        try:
            question = input("? ").strip()
        except EOFError:
            break
        if not question:
            break
        task = TQATask(id="repl", table=table, question=question)
        print(_answer_one(task, args.mode, cfg, backend, trace_path))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orchestra")
    parser.add_argument("--config", help="config file (INI sections, key = value)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--m", type=int, dest="m")
        p.add_argument("--max-rounds", type=int, dest="max_rounds")
        p.add_argument("--temperature", type=float)
        p.add_argument("--mode", choices=BENCH_MODES, default="orchestra")
        p.add_argument("--endpoint", help="OpenAI-compatible base URL")
        p.add_argument("--model")
        p.add_argument("--prompt-family", dest="prompt_family")

    run_p = sub.add_parser("run", help="answer one question about one table")
    run_p.add_argument("--table", required=True)
    run_p.add_argument("--question", required=True)
    run_p.add_argument("--format", choices=sorted(TABLE_FORMATS.values()))
    common(run_p)
    run_p.set_defaults(func=cmd_run)

    bench_p = sub.add_parser("bench", help="run a benchmark dataset")
    bench_p.add_argument("--dataset", required=True)
    bench_p.add_argument("--kind", default="unified-jsonl",
                         choices=["unified-jsonl", "wikitq", "tabfact", "tablebench"])
    bench_p.add_argument("--concurrency", type=int)
    bench_p.add_argument("--limit", type=int)
    bench_p.add_argument("--out", help="write the full report JSON here")
    common(bench_p)
    bench_p.set_defaults(func=cmd_bench)

    conv_p = sub.add_parser("convert", help="convert a benchmark release to unified JSONL")
    conv_p.add_argument("--kind", required=True, choices=["wikitq", "tabfact", "tablebench"])
    conv_p.add_argument("--in", dest="in_path", required=True)
    conv_p.add_argument("--out", required=True)
    conv_p.set_defaults(func=cmd_convert)

    repl_p = sub.add_parser("repl", help="interactive question loop over one table")
    repl_p.add_argument("--table", required=True)
    repl_p.add_argument("--format", choices=sorted(TABLE_FORMATS.values()))
    common(repl_p)
    repl_p.set_defaults(func=cmd_repl)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OrchestraError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
