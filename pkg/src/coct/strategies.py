"""Prompting strategies: concept-tagged generation plus every baseline.

Each strategy is a pure orchestration over a backend handle. It executes a
fixed call plan, returns the final utterance plus the complete trace, and
never mutates its inputs, so distinct histories can be generated
concurrently. Call arities with default parameters:

    direct 1, direct-refine 1, self-refine 3, ecot 1, sot 1+k,
    tot 2*b*d, plan-and-solve 2, rag 1, csim 2*s+1, coct 1, coct-free 1

where k is the number of skeleton points the model produced, b/d are the
tree breadth/depth, and s the number of simulated future exchanges.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Protocol, Sequence

from .backend import (
    BackendError,
    BackendHandle,
    ChatMessage,
    ChatRequest,
    ROLE_ASSISTANT,
    ROLE_SYSTEM,
    ROLE_USER,
    complete,
    truncate_history,
)
from .concepts import (
    ANGLE,
    ConceptSet,
    SetMode,
    TaggedUtterance,
    TagStyle,
    parse_tagged,
)
from .retrieval import RetrieverIndex, retrieve_with_info


class StrategyKind(str, Enum):
    DIRECT = "direct"
    DIRECT_REFINE = "direct-refine"
    SELF_REFINE = "self-refine"
    ECOT = "ecot"
    SOT = "sot"
    TOT = "tot"
    PLAN_AND_SOLVE = "plan-and-solve"
    RAG = "rag"
    CSIM = "csim"
    COCT = "coct"
    COCT_FREE = "coct-free"


class StrategyConfigError(ValueError):
    pass


class GenerationError(BackendError):
    """A backend failure mid-plan; carries the trace completed so far."""

    def __init__(self, message: str, trace: tuple[tuple[ChatRequest, str], ...]):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class GenParams:
    model: str = "default"
    temperature: float = 0.0
    max_tokens: int = 512
    seed: int | None = None
    tot_breadth: int = 3
    tot_depth: int = 2
    csim_exchanges: int = 2
    rag_top_k: int = 3

    def __post_init__(self):
        if self.tot_breadth < 1 or self.tot_depth < 1:
            raise ValueError("tree breadth and depth must be >= 1")
        if self.csim_exchanges < 1:
            raise ValueError("csim_exchanges must be >= 1")
        if self.rag_top_k < 1:
            raise ValueError("rag_top_k must be >= 1")


@dataclass(frozen=True)
class StrategyOutcome:
    final: TaggedUtterance
    final_text: str
    trace: tuple[tuple[ChatRequest, str], ...]
    call_count: int
    strategy: StrategyKind
    elapsed_s: float
    extraction_fallback: bool = False
    notes: tuple[str, ...] = ()


class Turn(Protocol):
    speaker: str
    text: str


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return (resources.files("coct") / "templates" / name).read_text(encoding="utf-8").strip()


def build_coct_prompt(concept_set: ConceptSet | None, style: TagStyle = ANGLE) -> str:
    """System text for tagged generation: the concept list line, the
    tagging instruction, and the chain instruction, with the delimiters of
    the chosen style substituted in. Without a concept set (free-concept
    generation), the list line is omitted."""
    if concept_set is None or not concept_set.concepts:
        return load_template("coct_free.txt").format(
            tag_open=style.open_delim, tag_close=style.close_delim
        )
    return load_template("coct.txt").format(
        possible_concepts=", ".join(concept_set.names()),
        tag_open=style.open_delim,
        tag_close=style.close_delim,
    )


def history_to_messages(history: Sequence[Turn]) -> list[ChatMessage]:
    """Map dialogue turns to chat messages: seeker -> user, supporter ->
    assistant. Raw turn text is used verbatim, no speaker prefixes."""
    role_map = {"seeker": ROLE_USER, "supporter": ROLE_ASSISTANT}
    out = []
    for turn in history:
        try:
            role = role_map[turn.speaker]
        except KeyError:
            raise ValueError(f"unknown speaker {turn.speaker!r}") from None
        out.append(ChatMessage(role, turn.text))
    return out


def _swap_roles(messages: Sequence[ChatMessage]) -> list[ChatMessage]:
    flip = {ROLE_USER: ROLE_ASSISTANT, ROLE_ASSISTANT: ROLE_USER}
    return [ChatMessage(flip[m.role], m.content) for m in messages if m.role != ROLE_SYSTEM]


class _Session:
    """Mutable per-generate state: the trace and the call helpers."""

    def __init__(self, backend: BackendHandle, params: GenParams):
        self.backend = backend
        self.params = params
        self.trace: list[tuple[ChatRequest, str]] = []

    def _request(self, messages: Sequence[ChatMessage]) -> ChatRequest:
        return ChatRequest(
            model=self.params.model,
            messages=tuple(messages),
            temperature=self.params.temperature,
            max_tokens=self.params.max_tokens,
            seed=self.params.seed,
        )

    def call(self, messages: Sequence[ChatMessage]) -> str:
        request = self._request(messages)
        try:
            completion = complete(self.backend, request)
        except BackendError as exc:
            raise GenerationError(str(exc), tuple(self.trace)) from exc
        self.trace.append((request, completion.content))
        return completion.content

    def call_many(self, message_lists: Sequence[Sequence[ChatMessage]]) -> list[str]:
        """Bounded-parallel fan-out. The trace records the calls in input
        order regardless of completion order."""
        requests = [self._request(m) for m in message_lists]
        workers = min(len(requests), self.backend.max_in_flight)
        if workers <= 1:
            return [self.call(m) for m in message_lists]
        from concurrent.futures import ThreadPoolExecutor

        def one(request: ChatRequest):
            try:
                return complete(self.backend, request).content, None
            except BackendError as exc:
                return None, exc

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, requests))
        contents: list[str] = []
        for request, (content, error) in zip(requests, results):
            if error is not None:
                raise GenerationError(str(error), tuple(self.trace)) from error
            self.trace.append((request, content))
            contents.append(content)
        return contents


_REVISION_MARKER = re.compile(r"(?i)revised\s+response\s*:")
_RESPONSE_SECTION = re.compile(r"(?i)\bresponse\s*:")
_SKELETON_POINT = re.compile(r"(?m)^\s*\d+[.)]\s+(.*\S)")
_RATING = re.compile(r"\b(10|[1-9])\b")


def _after_last(pattern: re.Pattern, text: str) -> str | None:
    last = None
    for match in pattern.finditer(text):
        last = match
    if last is None:
        return None
    return text[last.end():].strip()


def _run_direct(session: _Session, hist: list[ChatMessage], **_) -> tuple[str, bool]:
    return session.call(hist), False


def _run_direct_refine(session: _Session, hist, **_):
    system = ChatMessage(ROLE_SYSTEM, load_template("direct_refine.txt"))
    response = session.call([system] + hist)
    revised = _after_last(_REVISION_MARKER, response)
    if revised:
        return revised, False
    return response, True


def _run_self_refine(session: _Session, hist, **_):
    initial = session.call(hist)
    thread = hist + [ChatMessage(ROLE_ASSISTANT, initial),
                     ChatMessage(ROLE_USER, load_template("self_refine_feedback.txt"))]
    feedback = session.call(thread)
    thread = thread + [ChatMessage(ROLE_ASSISTANT, feedback),
                       ChatMessage(ROLE_USER, load_template("self_refine_revise.txt"))]
    return session.call(thread), False


def _run_ecot(session: _Session, hist, **_):
    system = ChatMessage(ROLE_SYSTEM, load_template("ecot.txt"))
    response = session.call([system] + hist)
    extracted = _after_last(_RESPONSE_SECTION, response)
    if extracted:
        return extracted, False
    return response, True


def _run_sot(session: _Session, hist, **_):
    skeleton = session.call([ChatMessage(ROLE_SYSTEM, load_template("sot_skeleton.txt"))] + hist)
    points = _SKELETON_POINT.findall(skeleton)
    if not points:
        return skeleton, True
    message_lists = []
    for i, point in enumerate(points, start=1):
        instruction = load_template("sot_expand.txt").format(
            skeleton=skeleton, index=i, point=point
        )
        message_lists.append(hist + [ChatMessage(ROLE_USER, instruction)])
    expansions = session.call_many(message_lists)
    return " ".join(expansions), False


def _run_tot(session: _Session, hist, **_):
    params = session.params
    draft = ""
    for depth in range(1, params.tot_depth + 1):
        candidates = []
        for i in range(1, params.tot_breadth + 1):
            prompt = load_template("tot_propose.txt").format(
                index=i, depth=depth, draft=draft or "(empty)"
            )
            candidates.append(session.call([ChatMessage(ROLE_SYSTEM, prompt)] + hist))
        scores = []
        for cand in candidates:
            prompt = load_template("tot_score.txt").format(candidate=cand)
            rating = session.call([ChatMessage(ROLE_SYSTEM, prompt)] + hist)
            match = _RATING.search(rating)
            scores.append(int(match.group(1)) if match else 0)
        best = max(range(len(candidates)), key=lambda idx: (scores[idx], -idx))
        draft = candidates[best]
    return draft, False


def _run_plan_and_solve(session: _Session, hist, **_):
    plan = session.call([ChatMessage(ROLE_SYSTEM, load_template("plan_and_solve_plan.txt"))] + hist)
    solve = load_template("plan_and_solve_solve.txt").format(plan=plan)
    return session.call([ChatMessage(ROLE_SYSTEM, solve)] + hist), False


def _run_rag(session: _Session, hist, *, concept_set, retriever, notes, **_):
    index = retriever or RetrieverIndex.from_concept_set(concept_set)
    k = min(session.params.rag_top_k, len(index))
    query = next(m.content for m in reversed(hist) if m.role == ROLE_USER)
    ranked, info = retrieve_with_info(index, query, k)
    if info["fallback"]:
        notes.append("embedding retrieval failed; ranked with BM25")
    by_name = dict(index.documents)
    retrieved = "\n".join(f"{name}: {by_name[name]}" for name, _ in ranked)
    system = ChatMessage(ROLE_SYSTEM, load_template("rag.txt").format(retrieved=retrieved))
    return session.call([system] + hist), False


def _run_csim(session: _Session, hist, **_):
    sim: list[ChatMessage] = list(hist)
    for _ in range(session.params.csim_exchanges):
        draft = session.call(sim)
        sim.append(ChatMessage(ROLE_ASSISTANT, draft))
        seeker_system = ChatMessage(ROLE_SYSTEM, load_template("csim_seeker.txt"))
        reply = session.call([seeker_system] + _swap_roles(sim))
        sim.append(ChatMessage(ROLE_USER, reply))
    lookahead = "\n".join(
        f"{'assistant' if m.role == ROLE_ASSISTANT else 'user'}: {m.content}"
        for m in sim[len(hist):]
    )
    system = ChatMessage(ROLE_SYSTEM, load_template("csim_final.txt").format(lookahead=lookahead))
    return session.call([system] + hist), False


def _run_coct(session: _Session, hist, *, concept_set, style, **_):
    system = ChatMessage(ROLE_SYSTEM, build_coct_prompt(concept_set, style))
    return session.call([system] + hist), False


_RUNNERS = {
    StrategyKind.DIRECT: _run_direct,
    StrategyKind.DIRECT_REFINE: _run_direct_refine,
    StrategyKind.SELF_REFINE: _run_self_refine,
    StrategyKind.ECOT: _run_ecot,
    StrategyKind.SOT: _run_sot,
    StrategyKind.TOT: _run_tot,
    StrategyKind.PLAN_AND_SOLVE: _run_plan_and_solve,
    StrategyKind.RAG: _run_rag,
    StrategyKind.CSIM: _run_csim,
    StrategyKind.COCT: _run_coct,
    StrategyKind.COCT_FREE: _run_coct,
}

_FREE_SET = ConceptSet("free", (), SetMode.OPEN)


def _check_requirements(kind: StrategyKind, concept_set: ConceptSet | None,
                        retriever: RetrieverIndex | None) -> None:
    if kind is StrategyKind.COCT:
        if concept_set is None or not concept_set.concepts:
            raise StrategyConfigError("coct requires a non-empty concept set")
    elif kind is StrategyKind.COCT_FREE:
        if concept_set is not None:
            raise StrategyConfigError("coct-free must run without a concept set")
    elif kind is StrategyKind.RAG:
        if retriever is None:
            if concept_set is None:
                raise StrategyConfigError("rag requires a retriever index or a concept set")
            if not any(c.description for c in concept_set.concepts):
                raise StrategyConfigError(
                    "rag requires concept descriptions to build its index"
                )


def generate(kind: StrategyKind, history: Sequence[Turn],
             concept_set: ConceptSet | None = None,
             backend: BackendHandle | None = None,
             params: GenParams | None = None, *,
             style: TagStyle = ANGLE,
             retriever: RetrieverIndex | None = None) -> StrategyOutcome:
    """Run one strategy over a conversation history and return the outcome.

    ``history`` must end with a seeker turn. The rendered history is
    truncated once to the backend's token budget; every request of the
    call plan carries it. Final-text extraction is strategy specific (see
    the module docstring); when a structured extraction fails the whole
    response is used and the outcome is flagged.
    """
    if backend is None:
        raise ValueError("a backend handle is required")
    params = params or GenParams()
    if not history:
        raise ValueError("history must be non-empty")
    if history[-1].speaker == "supporter":
        raise ValueError("history must end with a non-agent (seeker) turn")
    _check_requirements(kind, concept_set, retriever)

    hist = truncate_history(history_to_messages(history), backend.token_budget)
    session = _Session(backend, params)
    notes: list[str] = []
    started = time.perf_counter()
    text, fallback = _RUNNERS[kind](
        session, hist, concept_set=concept_set, style=style,
        retriever=retriever, notes=notes,
    )
    elapsed = time.perf_counter() - started

    if kind is StrategyKind.COCT:
        parse_set = concept_set
    elif kind is StrategyKind.COCT_FREE:
        parse_set = _FREE_SET
    else:
        parse_set = None
    final = parse_tagged(text, style, parse_set, lenient=True)
    return StrategyOutcome(
        final=final,
        final_text=text,
        trace=tuple(session.trace),
        call_count=len(session.trace),
        strategy=kind,
        elapsed_s=elapsed,
        extraction_fallback=fallback,
        notes=tuple(notes),
    )


def expected_call_count(kind: StrategyKind, params: GenParams | None = None,
                        skeleton_points: int | None = None) -> int:
    """The arity of a strategy's call plan under the given parameters.
    For sot, pass the number of skeleton points the model produced."""
    params = params or GenParams()
    if kind in (StrategyKind.DIRECT, StrategyKind.DIRECT_REFINE, StrategyKind.ECOT,
                StrategyKind.RAG, StrategyKind.COCT, StrategyKind.COCT_FREE):
        return 1
    if kind is StrategyKind.SELF_REFINE:
        return 3
    if kind is StrategyKind.PLAN_AND_SOLVE:
        return 2
    if kind is StrategyKind.SOT:
        if skeleton_points is None:
            raise ValueError("sot arity depends on the skeleton point count")
        return 1 + skeleton_points
    if kind is StrategyKind.TOT:
        return 2 * params.tot_breadth * params.tot_depth
    if kind is StrategyKind.CSIM:
        return 2 * params.csim_exchanges + 1
    raise ValueError(f"unknown strategy {kind}")
