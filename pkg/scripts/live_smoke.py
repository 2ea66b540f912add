#!/usr/bin/env python3
"""Live smoke run: the 20 bundled tasks through all four pipelines against
any OpenAI-compatible endpoint. Checks for crashes and report shape only;
no accuracy threshold.

Run:
    python scripts/live_smoke.py --endpoint http://localhost:8000 \
        --model qwen2.5-7b-instruct
"""

import argparse
from pathlib import Path

from orchestra.bench import load_dataset, run_benchmark
from orchestra.config import RunConfig
from orchestra.llm import HttpBackend

BUNDLED = Path(__file__).parent.parent / "data" / "smoke_tasks.jsonl"


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--endpoint", required=True)
    parser.add_argument("--model", required=True)
    parser.add_argument("--dataset", default=str(BUNDLED))
    parser.add_argument("--m", type=int, default=3)
    parser.add_argument("--concurrency", type=int, default=2)
    args = parser.parse_args()

    tasks = load_dataset(args.dataset)
    cfg = RunConfig(model=args.model, api_base=args.endpoint, m_samples=args.m)
    for mode in ("orchestra", "two-agent", "cot", "react"):
        backend = HttpBackend(base_url=cfg.api_base, api_key=cfg.api_key)
        report = run_benchmark(tasks, mode, cfg, backend, concurrency=args.concurrency)
        print(
            f"{mode:10s} accuracy={report.accuracy:.3f} "
            f"requests/q={report.cost.mean_requests:.1f} "
            f"in_tok/q={report.cost.mean_input_tokens:.0f} "
            f"out_tok/q={report.cost.mean_output_tokens:.0f} "
            f"time/q={report.cost.mean_time_s:.1f}s"
        )


if __name__ == "__main__":
    main()
