"""Concept inventories and the grammar of concept-tagged utterances.

A concept is an emotion, a conversational strategy, or a topic. A tagged
utterance interleaves concept tags (e.g. ``<Question>``) with the text
grounded in that concept. This module defines the tag styles, the builtin
concept inventories, and pure functions to parse, render, strip and
validate tagged text.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping


class ConceptKind(str, Enum):
    EMOTION = "Emotion"
    STRATEGY = "Strategy"
    TOPIC = "Topic"
    CUSTOM = "Custom"


class SetMode(str, Enum):
    CLOSED = "closed"
    OPEN = "open"


STAGES = ("I", "II", "III")

# Every delimiter character used by any supported tag style. Concept names
# must avoid all of them so a name renders cleanly under every style.
TAG_DELIMITER_CHARS = frozenset("<>^#@[]&")


@dataclass(frozen=True)
class TagStyle:
    """Delimiter convention wrapping concept names, e.g. ``<Question>``."""

    style_id: str
    open_delim: str
    close_delim: str

    def __post_init__(self):
        if (self.style_id, self.open_delim, self.close_delim) not in _STYLE_TRIPLES:
            raise ValueError(
                f"unsupported tag style {self.style_id!r}; "
                f"supported: {', '.join(sorted(TAG_STYLES))}"
            )

    def wrap(self, name: str) -> str:
        return f"{self.open_delim}{name}{self.close_delim}"


_STYLE_TRIPLES = {
    ("angle", "<", ">"),
    ("caret", "^", "^"),
    ("hash", "#", "#"),
    ("at", "@", "@"),
    ("square", "[", "]"),
    ("ampersand", "&", "&"),
}

ANGLE = TagStyle("angle", "<", ">")
CARET = TagStyle("caret", "^", "^")
HASH = TagStyle("hash", "#", "#")
AT = TagStyle("at", "@", "@")
SQUARE = TagStyle("square", "[", "]")
AMPERSAND = TagStyle("ampersand", "&", "&")

TAG_STYLES: dict[str, TagStyle] = {
    s.style_id: s for s in (ANGLE, CARET, HASH, AT, SQUARE, AMPERSAND)
}
DEFAULT_STYLE = ANGLE


def tag_style(style_id: str) -> TagStyle:
    try:
        return TAG_STYLES[style_id.lower()]
    except KeyError:
        raise ValueError(
            f"unknown tag style {style_id!r}; valid: {', '.join(sorted(TAG_STYLES))}"
        ) from None


@dataclass(frozen=True)
class Concept:
    """A single named concept. ``stage`` orders strategies along the
    support procedure (exploration I, comforting II, action III)."""

    name: str
    kind: ConceptKind = ConceptKind.CUSTOM
    description: str | None = None
    stage: str | None = None

    def __post_init__(self):
        if not self.name or not self.name.strip():
            raise ValueError("concept name must be non-empty")
        bad = TAG_DELIMITER_CHARS.intersection(self.name)
        if bad:
            raise ValueError(
                f"concept name {self.name!r} contains tag delimiter(s): "
                f"{''.join(sorted(bad))}"
            )
        if self.stage is not None:
            if self.kind is not ConceptKind.STRATEGY:
                raise ValueError("stage labels apply only to Strategy concepts")
            if self.stage not in STAGES:
                raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")


@dataclass(frozen=True)
class ConceptSet:
    """An ordered, case-insensitively unique inventory of concepts.

    Closed sets reject unknown tags at parse time (strict mode); open sets
    accept and carry them as Custom concepts, which is what the
    free-concept generation variant relies on.
    """

    id: str
    concepts: tuple[Concept, ...]
    mode: SetMode = SetMode.CLOSED

    def __post_init__(self):
        object.__setattr__(self, "concepts", tuple(self.concepts))
        by_name: dict[str, Concept] = {}
        for c in self.concepts:
            key = c.name.strip().lower()
            if key in by_name:
                raise ValueError(f"duplicate concept name (case-insensitive): {c.name!r}")
            by_name[key] = c
        object.__setattr__(self, "_by_name", by_name)

    def lookup(self, name: str) -> Concept | None:
        return self._by_name.get(name.strip().lower())

    def names(self) -> list[str]:
        return [c.name for c in self.concepts]

    def extended(self, extra: Iterable[Concept], mode: SetMode | None = None) -> ConceptSet:
        """A new set with ``extra`` concepts appended (existing names kept)."""
        merged = list(self.concepts)
        for c in extra:
            if self.lookup(c.name) is None:
                merged.append(c)
        return ConceptSet(self.id, tuple(merged), mode or self.mode)

    def __len__(self) -> int:
        return len(self.concepts)


@dataclass(frozen=True)
class Segment:
    """One (concept, text) span. ``concept is None`` marks untagged text,
    legal only as the leading segment of an utterance."""

    concept: str | None
    text: str


@dataclass(frozen=True)
class TaggedUtterance:
    segments: tuple[Segment, ...]
    style: TagStyle = ANGLE

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))

    def concept_chain(self) -> list[str]:
        """Concept names of tagged segments, in order."""
        return [s.concept for s in self.segments if s.concept is not None]


class TagParseError(Exception):
    """Base for strict-mode parse failures."""


class UnclosedTagError(TagParseError):
    def __init__(self, position: int, style: TagStyle):
        self.position = position
        super().__init__(
            f"tag opened with {style.open_delim!r} at offset {position} is never closed"
        )


class UnknownConceptError(TagParseError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown concept tag {name!r} (closed concept set, strict mode)")


# Alias table for tag spellings that drift across generations. Off unless
# explicitly passed to parse_tagged.
DEFAULT_ALIASES: dict[str, str] = {
    "questioning": "Question",
    "reassurance": "Affirmation and Reassurance",
}


def _resolve(raw_name: str, concept_set: ConceptSet | None,
             aliases: Mapping[str, str] | None) -> str | None:
    """Canonical name for a tag, or None when the set does not know it."""
    name = raw_name.strip()
    if aliases:
        target = aliases.get(name.lower())
        if target is not None:
            name = target
    if concept_set is not None:
        found = concept_set.lookup(name)
        if found is not None:
            return found.name
        return None
    return None


def parse_tagged(text: str, style: TagStyle = ANGLE,
                 concept_set: ConceptSet | None = None, lenient: bool = True,
                 aliases: Mapping[str, str] | None = None) -> TaggedUtterance:
    """Split ``text`` into (concept, text) segments at well-formed tags.

    A well-formed tag is ``{open}name{close}`` with a non-empty name that
    contains no opening delimiter. Names are matched against the concept
    set case-insensitively with surrounding whitespace trimmed.

    Unknown tags: folded into the running text (closed set, lenient),
    rejected (closed set, strict), or kept verbatim as custom concepts
    (open set / no set). An opening delimiter with no close before
    end-of-text is folded when lenient, raised as UnclosedTagError when
    strict. Lenient parsing accepts any input string.
    """
    mode = concept_set.mode if concept_set is not None else SetMode.OPEN
    open_mode = mode is SetMode.OPEN

    segments: list[Segment] = []
    cur_concept: str | None = None
    cur_parts: list[str] = []

    def flush():
        body = "".join(cur_parts).strip()
        cur_parts.clear()
        if cur_concept is None:
            if body:
                segments.append(Segment(None, body))
        else:
            segments.append(Segment(cur_concept, body))

    opener, closer = style.open_delim, style.close_delim
    i, n = 0, len(text)
    saw_tag = False
    while i < n:
        j = text.find(opener, i)
        if j == -1:
            cur_parts.append(text[i:])
            break
        cur_parts.append(text[i:j])
        k = text.find(closer, j + 1)
        if k == -1:
            if not lenient:
                raise UnclosedTagError(j, style)
            cur_parts.append(text[j:])
            break
        raw_name = text[j + 1 : k]
        if opener != closer and opener in raw_name:
            # A second opener before the close: this opener is literal text.
            if not lenient:
                raise UnclosedTagError(j, style)
            cur_parts.append(opener)
            i = j + 1
            continue
        if not raw_name.strip():
            # Empty tag name is not a tag in any mode.
            cur_parts.append(text[j : k + 1])
            i = k + 1
            continue
        canonical = _resolve(raw_name, concept_set, aliases)
        if canonical is None:
            if not open_mode:
                if not lenient:
                    raise UnknownConceptError(raw_name.strip())
                cur_parts.append(text[j : k + 1])
                i = k + 1
                continue
            canonical = raw_name.strip()
        if saw_tag or cur_concept is not None or "".join(cur_parts).strip():
            flush()
        else:
            cur_parts.clear()
        cur_concept = canonical
        saw_tag = True
        i = k + 1

    if cur_concept is not None or "".join(cur_parts).strip():
        flush()
    return TaggedUtterance(tuple(segments), style)


def render(utterance: TaggedUtterance, style: TagStyle | None = None) -> str:
    """Inverse of parse_tagged for clean utterances: each tagged segment
    becomes ``{open}name{close} text``; untagged segments emit text only;
    parts are joined by single spaces."""
    style = style or utterance.style
    parts: list[str] = []
    for seg in utterance.segments:
        if seg.concept is None:
            if seg.text:
                parts.append(seg.text)
        elif seg.text:
            parts.append(f"{style.wrap(seg.concept)} {seg.text}")
        else:
            parts.append(style.wrap(seg.concept))
    return " ".join(parts)


def strip_tags(utterance: TaggedUtterance) -> str:
    """Plain text of the utterance: segment texts joined by single spaces."""
    return " ".join(s.text for s in utterance.segments if s.text.strip()).strip()


@dataclass(frozen=True)
class Violation:
    kind: str  # unknown-concept | empty-body | untagged-segment
    index: int
    detail: str


def validate(utterance: TaggedUtterance, concept_set: ConceptSet | None = None) -> list[Violation]:
    """Report structural problems; an empty list means clean.

    Flags tags unknown to a closed set, tags with empty bodies, and
    untagged segments anywhere past the first position.
    """
    violations: list[Violation] = []
    closed = concept_set is not None and concept_set.mode is SetMode.CLOSED
    for i, seg in enumerate(utterance.segments):
        if seg.concept is None:
            if i > 0:
                violations.append(Violation("untagged-segment", i, "untagged segment after the first"))
            if not seg.text.strip():
                violations.append(Violation("empty-body", i, "untagged segment with empty text"))
            continue
        if not seg.text.strip():
            violations.append(Violation("empty-body", i, f"tag {seg.concept!r} has an empty body"))
        if closed and concept_set.lookup(seg.concept) is None:
            violations.append(Violation("unknown-concept", i, seg.concept))
    return violations


# ---------------------------------------------------------------------------
# Builtin inventories
# ---------------------------------------------------------------------------

class UnknownConceptSetError(KeyError):
    pass


_ESCONV_EMOTIONS = (
    "anger", "anxiety", "depression", "disgust",
    "fear", "nervousness", "sadness", "shame",
)

# Strategy stages follow the helping-skills progression: exploration (I),
# comforting (II), action (III). "Others" spans all stages and is unstaged.
_ESCONV_STRATEGIES = (
    ("Question", "I",
     "Inquiring about problem-related information to help the seeker clarify "
     "their issues, using open-ended questions for best results and closed "
     "questions for specific details."),
    ("Restatement or Paraphrasing", "I",
     "A simple, more concise rephrasing of the help-seeker's statements that "
     "could help them see their situation more clearly."),
    ("Reflection of Feelings", "I",
     "Articulate and describe the help-seeker's feelings."),
    ("Self-disclosure", "II",
     "Divulge similar experiences that you have had or emotions that you "
     "share with the help-seeker to express your empathy."),
    ("Affirmation and Reassurance", "II",
     "Affirm the help seeker's strengths, motivation, and capabilities and "
     "provide reassurance and encouragement."),
    ("Providing Suggestions", "III",
     "Provide suggestions about how to change, but be careful to not "
     "overstep and tell them what to do."),
    ("Information", "III",
     "Provide useful information to the help-seeker, for example with data, "
     "facts, opinions, resources, or by answering questions."),
    ("Others", None,
     "Exchange pleasantries and use other support strategies that do not "
     "fall into the above categories."),
)

_DAILYDIALOG_EMOTIONS = (
    "anger", "disgust", "fear", "happiness", "sadness", "surprise", "no emotion",
)

_DAILYDIALOG_ACTS = (
    ("inform",
     "Provide factual or contextual information that the speaker believes "
     "the listener may not know or is unaware of."),
    ("question",
     "Seek specific information from the listener, assuming they possess "
     "the knowledge being requested."),
    ("directive",
     "Express the speaker's intention for the listener to take an action, "
     "including requests, instructions, or suggestions."),
    ("commissive",
     "Indicate the speaker's commitment to perform certain actions, such as "
     "accepting or rejecting requests or offers."),
)

_CSKILLS_TOPICS = (
    "sports", "travel", "art", "music", "technology",
    "food and drink", "hobbies and crafts", "entertainment", "animal",
)

_EMPATHETIC_EMOTIONS = (
    "surprised", "grateful", "proud", "sentimental",
    "annoyed", "excited", "sad", "disgusted",
)

BUILTIN_SET_IDS = (
    "esconv-emotion",
    "esconv-strategy",
    "dailydialog-emotion",
    "dailydialog-act",
    "cskills-topic",
    "empathetic-emotion-top10",
)


def builtin_set(set_id: str) -> ConceptSet:
    """One of the closed builtin inventories; see BUILTIN_SET_IDS."""
    if set_id == "esconv-emotion":
        concepts = tuple(Concept(n, ConceptKind.EMOTION) for n in _ESCONV_EMOTIONS)
    elif set_id == "esconv-strategy":
        concepts = tuple(
            Concept(n, ConceptKind.STRATEGY, description=d, stage=s)
            for n, s, d in _ESCONV_STRATEGIES
        )
    elif set_id == "dailydialog-emotion":
        concepts = tuple(Concept(n, ConceptKind.EMOTION) for n in _DAILYDIALOG_EMOTIONS)
    elif set_id == "dailydialog-act":
        concepts = tuple(
            Concept(n, ConceptKind.STRATEGY, description=d) for n, d in _DAILYDIALOG_ACTS
        )
    elif set_id == "cskills-topic":
        concepts = tuple(Concept(n, ConceptKind.TOPIC) for n in _CSKILLS_TOPICS)
    elif set_id == "empathetic-emotion-top10":
        concepts = tuple(Concept(n, ConceptKind.EMOTION) for n in _EMPATHETIC_EMOTIONS)
    else:
        raise UnknownConceptSetError(
            f"unknown builtin concept set {set_id!r}; valid ids: "
            + ", ".join(BUILTIN_SET_IDS)
        )
    return ConceptSet(set_id, concepts, SetMode.CLOSED)


# ---------------------------------------------------------------------------
# JSON file format
# ---------------------------------------------------------------------------

def concept_set_from_dict(data: Mapping) -> ConceptSet:
    try:
        set_id = data["id"]
        mode = SetMode(str(data.get("mode", "closed")).lower())
        raw = data["concepts"]
    except (KeyError, ValueError) as exc:
        raise ValueError(f"malformed concept set: {exc}") from exc
    concepts = []
    for entry in raw:
        kind_raw = str(entry.get("kind", "Custom"))
        try:
            kind = ConceptKind(kind_raw.capitalize())
        except ValueError:
            raise ValueError(f"unknown concept kind {kind_raw!r}") from None
        concepts.append(Concept(
            name=entry["name"],
            kind=kind,
            description=entry.get("description"),
            stage=entry.get("stage"),
        ))
    return ConceptSet(set_id, tuple(concepts), mode)


def concept_set_to_dict(cs: ConceptSet) -> dict:
    out = {"id": cs.id, "mode": cs.mode.value, "concepts": []}
    for c in cs.concepts:
        entry: dict = {"name": c.name, "kind": c.kind.value}
        if c.description is not None:
            entry["description"] = c.description
        if c.stage is not None:
            entry["stage"] = c.stage
        out["concepts"].append(entry)
    return out


def load_concept_set(path: str | Path) -> ConceptSet:
    with open(path, encoding="utf-8") as fh:
        return concept_set_from_dict(json.load(fh))


def save_concept_set(cs: ConceptSet, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(concept_set_to_dict(cs), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
