#!/usr/bin/env python3
"""Ablation sweeps against a live OpenAI-compatible endpoint:

  - pipeline ablation: cot vs react vs two-agent vs full orchestra
  - sample-count sweep: m in 2..5
  - round-cap sweep: max_rounds in 1..5

Run:
    python scripts/ablation_sweeps.py --dataset data/smoke_tasks.jsonl \
        --endpoint http://localhost:8000 --model qwen2.5-7b-instruct \
        --out runs/ablations.json
"""

import argparse
import json
from dataclasses import replace
from pathlib import Path

from orchestra.bench import load_dataset, run_benchmark
from orchestra.config import RunConfig
from orchestra.llm import HttpBackend


def sweep(tasks, cfg, concurrency):
    results = {"modes": {}, "m_sweep": {}, "round_cap_sweep": {}}

    for mode in ("cot", "react", "two-agent", "orchestra"):
        report = run_benchmark(tasks, mode, cfg, HttpBackend(base_url=cfg.api_base, api_key=cfg.api_key), concurrency=concurrency)
        results["modes"][mode] = report.to_json()
        print(f"mode={mode:10s} accuracy={report.accuracy:.3f} "
              f"requests/q={report.cost.mean_requests:.1f}")

    for m in (2, 3, 4, 5):
        report = run_benchmark(
            tasks, "orchestra", replace(cfg, m_samples=m),
            HttpBackend(base_url=cfg.api_base, api_key=cfg.api_key), concurrency=concurrency,
        )
        results["m_sweep"][m] = report.to_json()
        print(f"m={m} accuracy={report.accuracy:.3f}")

    for cap in (1, 2, 3, 4, 5):
        report = run_benchmark(
            tasks, "orchestra", replace(cfg, max_rounds=cap),
            HttpBackend(base_url=cfg.api_base, api_key=cfg.api_key), concurrency=concurrency,
        )
        results["round_cap_sweep"][cap] = report.to_json()
        print(f"max_rounds={cap} accuracy={report.accuracy:.3f}")

    return results


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dataset", default="data/smoke_tasks.jsonl")
    parser.add_argument("--kind", default="unified-jsonl")
    parser.add_argument("--endpoint", required=True)
    parser.add_argument("--model", required=True)
    parser.add_argument("--limit", type=int, default=0)
    parser.add_argument("--concurrency", type=int, default=2)
    parser.add_argument("--out", default="runs/ablations.json")
    args = parser.parse_args()

    tasks = load_dataset(args.dataset, args.kind)
    if args.limit:
        tasks = tasks[: args.limit]
    cfg = RunConfig(model=args.model, api_base=args.endpoint)
    results = sweep(tasks, cfg, args.concurrency)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(results, indent=2))
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
