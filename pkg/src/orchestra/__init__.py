"""Multi-agent table question answering: a reasoning agent and a
code-writing agent interact over external tools, an answering agent reads
the refined trace, and sampled paths are aggregated by majority vote."""

from .table import RenderOptions, Table, load_table, render_markdown, table_to_delimited
from .llm import (
    Backend,
    ChatMessage,
    ChatRequest,
    ChatResponse,
    HttpBackend,
    RetryPolicy,
    ScriptedBackend,
    UsageLedger,
    UsageStats,
    complete_chat,
    scripted_backend,
    with_retries,
)
from .agents import (
    AgentMemory,
    ExemplarSet,
    FewShotExemplar,
    LogicAnswer,
    LogicContinue,
    ToolProgram,
    build_decision_prompt,
    build_logic_prompt,
    build_query_prompt,
    load_exemplars,
    parse_decision_output,
    parse_logic_output,
    parse_tool_program,
    update_memory,
)
from .tools import (
    Failure,
    ScalarResult,
    TableResult,
    ToolContext,
    ToolSettings,
    execute_script,
    execute_sql,
    run_program,
)
from .orchestrator import (
    CandidateAnswer,
    EpisodeConfig,
    EpisodeTrace,
    FinalAnswer,
    TraceWriter,
    aggregate_majority,
    decide,
    normalize_answer,
    refine_trace,
    run_episode,
    run_orchestra,
)
from .bench import (
    CostReport,
    RunReport,
    TQATask,
    baseline_cot,
    baseline_react,
    evaluate_exact_match,
    load_dataset,
    run_benchmark,
)
from .config import RunConfig, load_config

__version__ = "0.1.0"
