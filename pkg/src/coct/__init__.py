"""Concept-tagged conversation generation and evaluation toolkit."""

from .backend import (
    BackendError,
    BackendHandle,
    ChatMessage,
    ChatRequest,
    Completion,
    MockScript,
    RetryPolicy,
    Usage,
    complete,
    estimate_tokens,
    fingerprint,
    fingerprint_messages,
    truncate_history,
)
from .concepts import (
    ANGLE,
    BUILTIN_SET_IDS,
    Concept,
    ConceptKind,
    ConceptSet,
    DEFAULT_ALIASES,
    Segment,
    SetMode,
    TAG_STYLES,
    TagStyle,
    TaggedUtterance,
    UnclosedTagError,
    UnknownConceptError,
    builtin_set,
    load_concept_set,
    parse_tagged,
    render,
    strip_tags,
    tag_style,
    validate,
)
from .judge import PairwiseResult, Verdict, build_judge_prompt, parse_verdict, run_pairwise
from .metrics import (
    MetricConfig,
    MetricReport,
    bleu2,
    cider,
    distinct2,
    evaluate_run,
    rouge_l,
    tokenize,
)
from .retrieval import EmbeddingConfig, RetrieverIndex, retrieve, retrieve_with_info
from .strategies import (
    GenParams,
    GenerationError,
    StrategyKind,
    StrategyOutcome,
    build_coct_prompt,
    expected_call_count,
    generate,
    history_to_messages,
)

__version__ = "0.1.0"
