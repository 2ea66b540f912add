"""Run configuration: one dataclass holding every knob, loadable from an
INI-style config file (``section.key`` names) and overridable by CLI flags."""

from __future__ import annotations

import configparser
import shlex
from dataclasses import dataclass, replace
from typing import Optional

from .agents import ExemplarSet
from .llm import HttpBackend, RetryPolicy
from .orchestrator import EpisodeConfig
from .table import RenderOptions
from .tools import DEFAULT_SANDBOX_COMMAND, ToolSettings


@dataclass(frozen=True)
class RunConfig:
    model: str = "default"
    api_base: Optional[str] = None
    api_key: Optional[str] = None
    temperature: float = 0.7
    m_samples: int = 5
    max_rounds: int = 5
    max_tokens: int = 1024
    decision_agent_enabled: bool = True
    decision_draws: int = 1
    seed_base: Optional[int] = None
    prompt_family: str = "wikitq"
    prompts_dir: Optional[str] = None
    sandbox_command: tuple[str, ...] = DEFAULT_SANDBOX_COMMAND
    sandbox_timeout: float = 10.0
    max_render_rows: int = 30
    concurrency: int = 1
    trace_dir: str = "runs"
    retry_attempts: int = 3
    retry_backoff: tuple[float, ...] = (0.5, 1.0, 2.0)

    def episode(self) -> EpisodeConfig:
        return EpisodeConfig(
            max_rounds=self.max_rounds,
            temperature=self.temperature,
            m_samples=self.m_samples,
            decision_agent_enabled=self.decision_agent_enabled,
            seed_base=self.seed_base,
            decision_draws=self.decision_draws,
            model=self.model,
            max_tokens=self.max_tokens,
            render=RenderOptions(max_rows=self.max_render_rows),
        )

    def tool_settings(self) -> ToolSettings:
        return ToolSettings(
            sandbox_timeout=self.sandbox_timeout,
            sandbox_command=self.sandbox_command,
        )

    def exemplars(self) -> ExemplarSet:
        return ExemplarSet.load(self.prompt_family, self.prompts_dir)

    def backend(self) -> HttpBackend:
        return HttpBackend(base_url=self.api_base, api_key=self.api_key)

    def retry(self) -> RetryPolicy:
        return RetryPolicy(max_attempts=self.retry_attempts, backoff=self.retry_backoff)


def load_config(path: str, base: Optional[RunConfig] = None) -> RunConfig:
    """Read a ``[section]\\nkey = value`` config file over ``base`` defaults."""
    parser = configparser.ConfigParser()
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    cfg = base or RunConfig()
    updates: dict = {}

    def take(section: str, key: str, cast, name: str):
        if parser.has_option(section, key):
            updates[name] = cast(parser.get(section, key))

    take("endpoint", "base", str, "api_base")
    take("endpoint", "key", str, "api_key")
    take("endpoint", "model", str, "model")
    take("run", "temperature", float, "temperature")
    take("run", "m", int, "m_samples")
    take("run", "max_rounds", int, "max_rounds")
    take("run", "max_tokens", int, "max_tokens")
    take("run", "decision_agent", lambda v: v.lower() in ("1", "true", "yes"), "decision_agent_enabled")
    take("run", "decision_draws", int, "decision_draws")
    take("run", "seed_base", int, "seed_base")
    take("run", "max_render_rows", int, "max_render_rows")
    take("run", "concurrency", int, "concurrency")
    take("run", "retry_attempts", int, "retry_attempts")
    take("run", "trace_dir", str, "trace_dir")
    take("prompts", "dir", str, "prompts_dir")
    take("prompts", "family", str, "prompt_family")
    take("sandbox", "command", lambda v: tuple(shlex.split(v)), "sandbox_command")
    take("sandbox", "timeout", float, "sandbox_timeout")
    return replace(cfg, **updates)
