"""Concept-transition analytics and deterministic report emission.

Inner transitions count concept changes between consecutive tagged
segments inside one utterance; outer transitions count the change from the
last concept of one agent utterance to the first concept of the next.
Matrices carry raw counts (self-transitions stay on the diagonal) and can
be row-normalized; CSV is the interchange format for heatmap tooling.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .concepts import ConceptSet, Segment, TaggedUtterance, tag_style
from .metrics import MetricReport


@dataclass(frozen=True)
class TransitionMatrix:
    labels: tuple[str, ...]
    counts: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "counts", tuple(tuple(row) for row in self.counts))
        n = len(self.labels)
        if len(self.counts) != n or any(len(row) != n for row in self.counts):
            raise ValueError("counts must be square and match the label count")
        if any(cell < 0 for row in self.counts for cell in row):
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts)

    def cell(self, from_label: str, to_label: str) -> int:
        i = self.labels.index(from_label)
        j = self.labels.index(to_label)
        return self.counts[i][j]


def _collect_labels(chains: Iterable[Sequence[str]],
                    concept_set: ConceptSet | None) -> list[str]:
    labels: list[str] = list(concept_set.names()) if concept_set else []
    known = {l.lower() for l in labels}
    for chain in chains:
        for name in chain:
            if name.lower() not in known:
                labels.append(name)
                known.add(name.lower())
    return labels


def _count(chains: Sequence[Sequence[str]], labels: Sequence[str]) -> TransitionMatrix:
    index = {l.lower(): i for i, l in enumerate(labels)}
    n = len(labels)
    counts = [[0] * n for _ in range(n)]
    for chain in chains:
        for a, b in zip(chain, chain[1:]):
            counts[index[a.lower()]][index[b.lower()]] += 1
    return TransitionMatrix(tuple(labels), tuple(tuple(r) for r in counts))


def inner_transitions(utterances: Sequence[TaggedUtterance],
                      concept_set: ConceptSet | None = None) -> TransitionMatrix:
    """Count concept -> concept steps between consecutive tagged segments
    within each utterance. Untagged leading segments are skipped. Labels
    are the concept set's names (in set order) plus any observed concepts
    in first-seen order."""
    chains = [u.concept_chain() for u in utterances]
    labels = _collect_labels(chains, concept_set)
    return _count(chains, labels)


def outer_transitions(conversations: Sequence[Sequence[TaggedUtterance]],
                      concept_set: ConceptSet | None = None) -> TransitionMatrix:
    """Count (last concept of utterance t) -> (first concept of utterance
    t+1) over consecutive agent utterances of each conversation.
    Utterances without any tag cannot serve as endpoints."""
    all_chains = [u.concept_chain() for conv in conversations for u in conv]
    labels = _collect_labels(all_chains, concept_set)
    step_chains: list[list[str]] = []
    for conv in conversations:
        for left, right in zip(conv, conv[1:]):
            lc, rc = left.concept_chain(), right.concept_chain()
            if lc and rc:
                step_chains.append([lc[-1], rc[0]])
    return _count(step_chains, labels)


def normalize(matrix: TransitionMatrix) -> list[list[float]]:
    """Row-stochastic view: rows with a positive sum divide by it, zero
    rows stay zero."""
    out: list[list[float]] = []
    for row in matrix.counts:
        total = sum(row)
        if total:
            out.append([cell / total for cell in row])
        else:
            out.append([0.0] * len(row))
    return out


def stage_ordering(matrix_labels: Sequence[str], concept_set: ConceptSet) -> list[str]:
    """Permutation of the labels with stage-I strategies first, then II,
    then III, then unstaged/unknown labels; ties keep the original label
    order."""
    rank = {"I": 0, "II": 1, "III": 2}

    def key(pair):
        i, label = pair
        concept = concept_set.lookup(label)
        stage = concept.stage if concept else None
        return (rank.get(stage, 3), i)

    return [label for _, label in sorted(enumerate(matrix_labels), key=key, )]


def upper_triangle_mass(matrix: TransitionMatrix, order: Sequence[str]) -> float:
    """Fraction of all transitions that move strictly forward under the
    given ordering (the stage-progression alignment measure)."""
    if sorted(order) != sorted(matrix.labels):
        raise ValueError("order must be a permutation of the matrix labels")
    total = matrix.total
    if total == 0:
        raise ValueError("matrix has no transitions")
    position = {label: i for i, label in enumerate(order)}
    upper = 0
    for i, from_label in enumerate(matrix.labels):
        for j, to_label in enumerate(matrix.labels):
            if position[from_label] < position[to_label]:
                upper += matrix.counts[i][j]
    return upper / total


# ---------------------------------------------------------------------------
# Run records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunRecord:
    """One evaluated example: what was generated, from what, against what."""

    example_id: str
    dialogue_id: str
    turn_index: int
    strategy: str
    tag_style: str
    raw_response: str
    segments: tuple[tuple[str | None, str], ...]
    reference: str
    history: str
    calls: int
    trace_summary: tuple[tuple[int, int], ...]  # (message count, response chars) per call
    elapsed_s: float
    error: str | None = None
    extraction_fallback: bool = False

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(tuple(s) for s in self.segments))
        object.__setattr__(self, "trace_summary", tuple(tuple(t) for t in self.trace_summary))

    def utterance(self) -> TaggedUtterance:
        return TaggedUtterance(
            tuple(Segment(c, t) for c, t in self.segments),
            tag_style(self.tag_style),
        )

    def to_dict(self) -> dict:
        return {
            "example_id": self.example_id,
            "dialogue_id": self.dialogue_id,
            "turn_index": self.turn_index,
            "strategy": self.strategy,
            "tag_style": self.tag_style,
            "raw_response": self.raw_response,
            "segments": [[c, t] for c, t in self.segments],
            "reference": self.reference,
            "history": self.history,
            "calls": self.calls,
            "trace_summary": [[m, r] for m, r in self.trace_summary],
            "elapsed_s": self.elapsed_s,
            "error": self.error,
            "extraction_fallback": self.extraction_fallback,
        }

    @classmethod
    def from_dict(cls, data: dict) -> RunRecord:
        return cls(
            example_id=data["example_id"],
            dialogue_id=data["dialogue_id"],
            turn_index=int(data["turn_index"]),
            strategy=data["strategy"],
            tag_style=data["tag_style"],
            raw_response=data["raw_response"],
            segments=tuple((c, t) for c, t in data["segments"]),
            reference=data["reference"],
            history=data["history"],
            calls=int(data["calls"]),
            trace_summary=tuple((m, r) for m, r in data.get("trace_summary", [])),
            elapsed_s=float(data["elapsed_s"]),
            error=data.get("error"),
            extraction_fallback=bool(data.get("extraction_fallback", False)),
        )


class RecordsError(Exception):
    pass


def read_run_records(path: str | Path) -> list[RunRecord]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise RecordsError(f"cannot read records {path}: {exc}") from exc
    records = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(RunRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise RecordsError(f"bad record at {path}:{line_no}: {exc}") from exc
    if not records:
        raise RecordsError(f"no records in {path}")
    return records


# ---------------------------------------------------------------------------
# Deterministic emission
# ---------------------------------------------------------------------------

FORMATS = ("jsonl", "json", "csv", "markdown-table")


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


def matrix_csv(labels: Sequence[str], rows: Sequence[Sequence[int | float]]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([""] + list(labels))
    for label, row in zip(labels, rows):
        writer.writerow([label] + [repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue().encode("utf-8")


def _markdown_row(cells: Sequence[str]) -> str:
    return "| " + " | ".join(cells) + " |"


def report_markdown(report: MetricReport, label: str = "run") -> str:
    header = ["Method", "B-2", "R-L", "D-2", "CDr"]
    values = [label] + [
        f"{v:.4f}" for v in (report.bleu2, report.rouge_l, report.distinct2, report.cider)
    ]
    return "\n".join([
        _markdown_row(header),
        _markdown_row(["---"] * len(header)),
        _markdown_row(values),
    ])


def matrix_markdown(matrix: TransitionMatrix) -> str:
    header = [""] + list(matrix.labels)
    lines = [_markdown_row(header), _markdown_row(["---"] * len(header))]
    for label, row in zip(matrix.labels, matrix.counts):
        lines.append(_markdown_row([label] + [str(c) for c in row]))
    return "\n".join(lines)


def emit(obj, fmt: str) -> bytes:
    """Serialize records / reports / matrices to deterministic bytes.

    Identical inputs always yield identical bytes: keys are sorted, floats
    in human tables are fixed at 4 decimals, JSON keeps full precision.
    """
    if fmt not in FORMATS:
        raise ValueError(f"unsupported format {fmt!r}; valid: {', '.join(FORMATS)}")

    if isinstance(obj, (list, tuple)) and all(isinstance(r, RunRecord) for r in obj):
        if fmt != "jsonl":
            raise ValueError("run records emit as jsonl only")
        out = b"".join(_json_bytes(r.to_dict()) for r in obj)
        return out

    if isinstance(obj, MetricReport):
        if fmt == "json":
            return _json_bytes(obj.to_dict())
        if fmt == "markdown-table":
            return (report_markdown(obj) + "\n").encode("utf-8")
        raise ValueError(f"metric reports do not emit as {fmt!r}")

    if isinstance(obj, TransitionMatrix):
        if fmt == "csv":
            return matrix_csv(obj.labels, obj.counts)
        if fmt == "json":
            return _json_bytes({"labels": list(obj.labels),
                                "counts": [list(r) for r in obj.counts],
                                "total": obj.total})
        if fmt == "markdown-table":
            return (matrix_markdown(obj) + "\n").encode("utf-8")
        raise ValueError(f"matrices do not emit as {fmt!r}")

    raise ValueError(f"cannot emit object of type {type(obj).__name__}")
