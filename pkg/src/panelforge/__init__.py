"""panelforge: multi-turn dialogue synthesis with a reviewing agent panel.

A chairman agent asks, a candidate agent answers, and a panel of reviewer
agents critiques each answer; the chairman folds the critiques into the next
question. Repeating the cycle grows single-turn seed instructions into
multi-turn training dialogues. An analysis suite measures per-round tag
novelty and instruction difficulty of the resulting datasets.
"""

from .actions import ActionKind, ActionSet, ParseWarning, parse_actions, render_actions, strip_think
from .agents import (
    PromptTemplate,
    RoleTemplate,
    TemplateLibrary,
    build_candidate_messages,
    build_chairman_messages,
    build_reviewer_messages,
    extract_action,
    load_templates,
)
from .dataset_io import (
    DialogueRecord,
    conversation_to_sharegpt,
    export_conversations,
    load_conversations,
    load_seeds,
    write_manifest,
)
from .errors import (
    BackendError,
    ConfigError,
    DialogueFailed,
    FormatError,
    PanelForgeError,
    ParseError,
    ValidationError,
)
from .gateway import (
    Backend,
    BackendLimits,
    CallContext,
    CallLog,
    CallOutcome,
    CallRecord,
    ChatMessage,
    CompletionRequest,
    Gateway,
    HttpBackend,
    RetryPolicy,
    RoleKind,
    ScriptedBackend,
    load_script_file,
    script_mock,
)
from .metrics import (
    AnalysisReport,
    Difficulty,
    DifficultyJudge,
    DifficultyRecord,
    Direction,
    DirectionJudge,
    InstructionTagger,
    TagSet,
    analyze_dataset,
    compare_reports,
    difficulty_by_round,
    diversity_by_round,
)
from .orchestrator import BatchSummary, run_batch, run_dialogue, run_dialogue_detailed
from .types import (
    AgentProfile,
    Conversation,
    ConversationStatus,
    Critique,
    ReviewSet,
    RunConfig,
    SeedInstruction,
    Turn,
    TurnOrigin,
    validate_seed,
    validate_seed_batch,
)

__version__ = "0.1.0"

__all__ = [
    "ActionKind",
    "ActionSet",
    "AgentProfile",
    "AnalysisReport",
    "Backend",
    "BackendError",
    "BackendLimits",
    "BatchSummary",
    "CallContext",
    "CallLog",
    "CallOutcome",
    "CallRecord",
    "ChatMessage",
    "CompletionRequest",
    "ConfigError",
    "Conversation",
    "ConversationStatus",
    "Critique",
    "DialogueFailed",
    "DialogueRecord",
    "Difficulty",
    "DifficultyJudge",
    "DifficultyRecord",
    "Direction",
    "DirectionJudge",
    "FormatError",
    "Gateway",
    "HttpBackend",
    "InstructionTagger",
    "PanelForgeError",
    "ParseError",
    "ParseWarning",
    "PromptTemplate",
    "ReviewSet",
    "RetryPolicy",
    "RoleKind",
    "RoleTemplate",
    "RunConfig",
    "ScriptedBackend",
    "SeedInstruction",
    "TagSet",
    "TemplateLibrary",
    "Turn",
    "TurnOrigin",
    "ValidationError",
    "analyze_dataset",
    "build_candidate_messages",
    "build_chairman_messages",
    "build_reviewer_messages",
    "compare_reports",
    "conversation_to_sharegpt",
    "difficulty_by_round",
    "diversity_by_round",
    "export_conversations",
    "extract_action",
    "load_conversations",
    "load_script_file",
    "load_seeds",
    "load_templates",
    "parse_actions",
    "render_actions",
    "run_batch",
    "run_dialogue",
    "run_dialogue_detailed",
    "script_mock",
    "strip_think",
    "validate_seed",
    "validate_seed_batch",
    "write_manifest",
]
