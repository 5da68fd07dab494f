"""Dialogue corpora: canonical JSONL loading, eval-pair extraction, and
the self-chat simulation that reports dialogue rounds and utterance length.

Canonical corpus line:
    {"id": str, "topic": str?, "turns": [{"speaker": "seeker"|"supporter",
     "text": str, "emotion": str?, "strategy": str?}]}
Speaker aliases "user"/"assistant" are accepted on load.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .backend import BackendError, BackendHandle, ChatMessage, ROLE_ASSISTANT, ROLE_SYSTEM, ROLE_USER, complete, ChatRequest
from .concepts import ANGLE, ConceptSet, TagStyle, strip_tags
from .strategies import GenParams, GenerationError, StrategyKind, generate, load_template

SPEAKER_SEEKER = "seeker"
SPEAKER_SUPPORTER = "supporter"
_SPEAKER_ALIASES = {
    "seeker": SPEAKER_SEEKER,
    "user": SPEAKER_SEEKER,
    "supporter": SPEAKER_SUPPORTER,
    "assistant": SPEAKER_SUPPORTER,
}

SIM_KICKOFF = "(Start the conversation with your first message.)"


class CorpusError(Exception):
    pass


@dataclass(frozen=True)
class DialogueTurn:
    speaker: str
    text: str
    emotion: str | None = None
    strategy: str | None = None

    def __post_init__(self):
        if self.speaker not in (SPEAKER_SEEKER, SPEAKER_SUPPORTER):
            raise ValueError(f"speaker must be seeker or supporter, got {self.speaker!r}")
        if not self.text or not self.text.strip():
            raise ValueError("turn text must be non-empty")


@dataclass(frozen=True)
class Dialogue:
    id: str
    turns: tuple[DialogueTurn, ...]
    topic: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(self.turns))


@dataclass(frozen=True)
class EvalPair:
    """One evaluation point: the dialogue history before a supporter turn
    and that turn's text as the reference."""

    dialogue_id: str
    turn_index: int
    history: tuple[DialogueTurn, ...]
    reference: str
    emotion: str | None = None
    strategy: str | None = None


@dataclass(frozen=True)
class LineError:
    line_no: int
    message: str


@dataclass
class CorpusLoadResult:
    dialogues: list[Dialogue]
    errors: list[LineError] = field(default_factory=list)


def dialogue_from_dict(data: dict) -> Dialogue:
    if not isinstance(data, dict):
        raise ValueError("dialogue line must be a JSON object")
    try:
        dialogue_id = data["id"]
        raw_turns = data["turns"]
    except KeyError as exc:
        raise ValueError(f"missing required field {exc.args[0]!r}") from None
    if not isinstance(dialogue_id, str) or not dialogue_id:
        raise ValueError("'id' must be a non-empty string")
    if not isinstance(raw_turns, list) or len(raw_turns) < 2:
        raise ValueError("'turns' must be a list with at least two turns")
    turns = []
    for i, rt in enumerate(raw_turns):
        try:
            speaker = _SPEAKER_ALIASES[str(rt["speaker"]).lower()]
        except KeyError:
            raise ValueError(f"turn {i}: unknown or missing speaker") from None
        try:
            turns.append(DialogueTurn(
                speaker=speaker,
                text=rt["text"],
                emotion=rt.get("emotion"),
                strategy=rt.get("strategy"),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"turn {i}: {exc}") from None
    return Dialogue(dialogue_id, tuple(turns), topic=data.get("topic"))


def dialogue_to_dict(d: Dialogue) -> dict:
    out: dict = {"id": d.id}
    if d.topic is not None:
        out["topic"] = d.topic
    out["turns"] = []
    for t in d.turns:
        turn: dict = {"speaker": t.speaker, "text": t.text}
        if t.emotion is not None:
            turn["emotion"] = t.emotion
        if t.strategy is not None:
            turn["strategy"] = t.strategy
        out["turns"].append(turn)
    return out


def load_jsonl(path: str | Path) -> CorpusLoadResult:
    """Load a canonical corpus file, collecting per-line schema errors.

    Lines failing schema validation (including duplicate ids) are skipped
    and reported with their line numbers; the load aborts with CorpusError
    only when no line is valid.
    """
    path = Path(path)
    try:
        raw_lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc}") from exc

    dialogues: list[Dialogue] = []
    errors: list[LineError] = []
    seen_ids: set[str] = set()
    n_nonblank = 0
    for line_no, line in enumerate(raw_lines, start=1):
        if not line.strip():
            continue
        n_nonblank += 1
        try:
            data = json.loads(line)
            dialogue = dialogue_from_dict(data)
        except (json.JSONDecodeError, ValueError) as exc:
            errors.append(LineError(line_no, str(exc)))
            continue
        if dialogue.id in seen_ids:
            errors.append(LineError(line_no, f"duplicate dialogue id {dialogue.id!r}"))
            continue
        seen_ids.add(dialogue.id)
        dialogues.append(dialogue)
    if n_nonblank and not dialogues:
        raise CorpusError(
            f"no valid dialogue in {path}: first error at line "
            f"{errors[0].line_no}: {errors[0].message}"
        )
    return CorpusLoadResult(dialogues, errors)


def save_jsonl(dialogues: Iterable[Dialogue], path: str | Path) -> None:
    lines = [json.dumps(dialogue_to_dict(d), ensure_ascii=False, sort_keys=True)
             for d in dialogues]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


SAMPLING_ALL = "all"
SAMPLING_LAST_ONLY = "last-only"
SAMPLING_EVERY_KTH = "every-kth"


def extract_pairs(dialogues: Sequence[Dialogue], target: str = SPEAKER_SUPPORTER,
                  sampling: str = SAMPLING_ALL, k: int | None = None) -> list[EvalPair]:
    """Evaluation pairs in deterministic order (dialogue order, then turn
    order). A turn qualifies when the target speaker holds it and at least
    one turn precedes it."""
    if sampling not in (SAMPLING_ALL, SAMPLING_LAST_ONLY, SAMPLING_EVERY_KTH):
        raise ValueError(f"unknown sampling mode {sampling!r}")
    if sampling == SAMPLING_EVERY_KTH:
        if k is None or k < 1:
            raise ValueError("every-kth sampling requires k >= 1")

    pairs: list[EvalPair] = []
    for dialogue in dialogues:
        qualifying = [
            EvalPair(
                dialogue_id=dialogue.id,
                turn_index=i,
                history=dialogue.turns[:i],
                reference=turn.text,
                emotion=turn.emotion,
                strategy=turn.strategy,
            )
            for i, turn in enumerate(dialogue.turns)
            if turn.speaker == target and i >= 1
        ]
        if not qualifying:
            continue
        if sampling == SAMPLING_LAST_ONLY:
            pairs.append(qualifying[-1])
        elif sampling == SAMPLING_EVERY_KTH:
            pairs.extend(qualifying[::k])
        else:
            pairs.extend(qualifying)
    return pairs


@dataclass(frozen=True)
class SimConfig:
    max_rounds: int = 10
    stop_markers: tuple[str, ...] = ("[END]", "goodbye")
    user_persona: str = ""
    agent_strategy: StrategyKind = StrategyKind.DIRECT
    topic: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "stop_markers", tuple(self.stop_markers))
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if not self.stop_markers:
            raise ValueError("at least one stop marker is required")


@dataclass
class SimRecord:
    rounds: int
    avg_len: float
    transcript: Dialogue
    error: str | None = None

    def to_dict(self) -> dict:
        out = {
            "rounds": self.rounds,
            "avg_len": self.avg_len,
            "transcript": dialogue_to_dict(self.transcript),
        }
        if self.error is not None:
            out["error"] = self.error
        return out


def default_persona(topic: str | None) -> str:
    topic_line = f" The topic you care about: {topic}." if topic else ""
    return load_template("sim_user_persona.txt").format(topic_line=topic_line)


def build_user_sim_messages(config: SimConfig, turns: Sequence[DialogueTurn]) -> list[ChatMessage]:
    """Messages for the user-simulator backend: the persona as system text
    and the transcript with roles flipped (the simulator 'is' the seeker)."""
    persona = config.user_persona or default_persona(config.topic)
    messages = [ChatMessage(ROLE_SYSTEM, persona), ChatMessage(ROLE_USER, SIM_KICKOFF)]
    for t in turns:
        role = ROLE_ASSISTANT if t.speaker == SPEAKER_SEEKER else ROLE_USER
        messages.append(ChatMessage(role, t.text))
    return messages


def _hit_stop(text: str, markers: Sequence[str]) -> bool:
    lowered = text.lower()
    return any(m.lower() in lowered for m in markers)


def simulate(config: SimConfig, agent_backend: BackendHandle,
             user_backend: BackendHandle, concept_set: ConceptSet | None = None,
             params: GenParams | None = None, *, style: TagStyle = ANGLE,
             episode_id: str = "sim-0") -> SimRecord:
    """Run one simulated episode: the user simulator and the agent
    alternate, starting from the user.

    A round is one user utterance plus the agent's reply. The episode ends
    after the reply to a user utterance containing a stop marker
    (case-insensitive), or when max_rounds agent turns have been produced.
    rounds counts agent turns; avg_len is the mean whitespace-token length
    of agent utterances after tag stripping. A backend failure ends the
    episode early, keeping the rounds finished so far and an error note.
    """
    params = params or GenParams()
    turns: list[DialogueTurn] = []
    agent_lengths: list[int] = []
    rounds = 0
    error: str | None = None
    try:
        for _ in range(config.max_rounds):
            request = ChatRequest(
                model=params.model,
                messages=tuple(build_user_sim_messages(config, turns)),
                temperature=params.temperature,
                max_tokens=params.max_tokens,
                seed=params.seed,
            )
            user_text = complete(user_backend, request).content
            turns.append(DialogueTurn(SPEAKER_SEEKER, user_text))
            outcome = generate(
                config.agent_strategy, turns, concept_set, agent_backend,
                params, style=style,
            )
            turns.append(DialogueTurn(SPEAKER_SUPPORTER, outcome.final_text,
                                      strategy=next(iter(outcome.final.concept_chain()), None)))
            rounds += 1
            agent_lengths.append(len(strip_tags(outcome.final).split()))
            if _hit_stop(user_text, config.stop_markers):
                break
    except (BackendError, GenerationError) as exc:
        error = str(exc)

    avg_len = sum(agent_lengths) / len(agent_lengths) if agent_lengths else 0.0
    transcript = Dialogue(episode_id, tuple(turns), topic=config.topic)
    return SimRecord(rounds=rounds, avg_len=avg_len, transcript=transcript, error=error)
