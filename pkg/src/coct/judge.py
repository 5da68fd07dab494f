"""Pairwise response comparison by a judge model.

The judge sees the conversation history and two candidate responses and
must end its output with ``JUDGE: [[A]]`` / ``[[B]]`` / ``[[C]]`` (tie).
Position bias is controlled mechanically: each pair is judged twice with the
responses swapped, and a side wins only by winning both orders or winning
one and tying the other.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .backend import BackendError, BackendHandle, ChatMessage, ChatRequest, complete

JUDGE_PROMPT = """Please act as an impartial judge and evaluate the quality of the responses provided by two AI assistants to the user questions. You should choose the assistant that follows the provided strategy more carefully and precisely to answer the user's last utterance. You should use your emotional support expertise and knowledge to judge the quality of the response considering how well the answer follows the provided strategy. Your evaluation most importantly should consider strategy adherence and then the overall quality, naturalness, consistency and coherence of the final utterance.

Begin your evaluation by comparing the responses of the two assistants and provide a short explanation. Avoid any position biases and ensure that the order in which the responses were presented does not influence your decision. Do not allow the length of the responses to influence your evaluation. Do not favor certain names of the assistants. Be as objective as possible. After providing your explanation, output your final verdict by strictly following this format: "JUDGE: [[A]]" if assistant A is better, "JUDGE: [[B]]," if assistant B is better, and "JUDGE: [[C]]" for a tie.

Conversation history:

{conversation_history}

<|The Start of Assistant A's Response|>

{assistant_a_resp}

<|The End of Assistant A's Response|>

<|The Start of Assistant B's Response|>

{assistant_b_resp}

<|The End of Assistant B's Response|>"""


class Verdict(Enum):
    A = "A"
    B = "B"
    TIE = "Tie"
    INVALID = "Invalid"


_VERDICT_RE = re.compile(r"JUDGE:\s*\[\[\s*([ABC])\s*\]\]")


def build_judge_prompt(history: str, response_a: str, response_b: str) -> str:
    if not history or not response_a or not response_b:
        raise ValueError("history and both responses must be non-empty")
    return JUDGE_PROMPT.format(
        conversation_history=history,
        assistant_a_resp=response_a,
        assistant_b_resp=response_b,
    )


def parse_verdict(judge_output: str) -> Verdict:
    """Last ``JUDGE: [[X]]`` marker wins; C maps to Tie; no marker is
    Invalid. Never raises."""
    found = _VERDICT_RE.findall(judge_output)
    if not found:
        return Verdict.INVALID
    letter = found[-1]
    if letter == "C":
        return Verdict.TIE
    return Verdict(letter)


@dataclass(frozen=True)
class PairwiseResult:
    win: int
    tie: int
    lose: int
    invalid: int
    win_rate: float
    tie_rate: float
    lose_rate: float

    @classmethod
    def from_counts(cls, win: int, tie: int, lose: int, invalid: int) -> PairwiseResult:
        valid = win + tie + lose
        if valid:
            rates = (win / valid, tie / valid, lose / valid)
        else:
            rates = (0.0, 0.0, 0.0)
        return cls(win, tie, lose, invalid, *rates)

    def to_dict(self) -> dict:
        return {
            "win": self.win,
            "tie": self.tie,
            "lose": self.lose,
            "invalid": self.invalid,
            "win_rate": self.win_rate,
            "tie_rate": self.tie_rate,
            "lose_rate": self.lose_rate,
        }


def _judge_once(judge: BackendHandle, history: str, first: str, second: str,
                model: str, temperature: float, max_tokens: int) -> Verdict:
    prompt = build_judge_prompt(history, first, second)
    request = ChatRequest(
        model=model,
        messages=(ChatMessage("user", prompt),),
        temperature=temperature,
        max_tokens=max_tokens,
    )
    return parse_verdict(complete(judge, request).content)


# Outcome of one pair from x's perspective.
_WIN, _TIE, _LOSE, _INVALID = range(4)


def _combine(first: Verdict, second: Verdict) -> int:
    """Combine the two order-swapped verdicts, both mapped to x's side.

    x wins only by winning both or winning one and tying the other;
    conflicting verdicts are a tie; any unparseable verdict invalidates
    the pair.
    """
    if first is Verdict.INVALID or second is Verdict.INVALID:
        return _INVALID
    wins = (first is Verdict.A, second is Verdict.B)
    loses = (first is Verdict.B, second is Verdict.A)
    n_win, n_lose = sum(wins), sum(loses)
    if n_win and not n_lose:
        return _WIN
    if n_lose and not n_win:
        return _LOSE
    return _TIE


def _judge_pair(judge: BackendHandle, pair: tuple[str, str, str], debias: bool,
                model: str, temperature: float, max_tokens: int) -> int:
    history, resp_x, resp_y = pair
    try:
        forward = _judge_once(judge, history, resp_x, resp_y, model, temperature, max_tokens)
        if not debias:
            return {
                Verdict.A: _WIN, Verdict.B: _LOSE,
                Verdict.TIE: _TIE, Verdict.INVALID: _INVALID,
            }[forward]
        swapped = _judge_once(judge, history, resp_y, resp_x, model, temperature, max_tokens)
        return _combine(forward, swapped)
    except BackendError:
        return _INVALID


def run_pairwise(pairs: Sequence[tuple[str, str, str]], judge: BackendHandle,
                 debias: bool = True, *, model: str = "default",
                 temperature: float = 0.0, max_tokens: int = 1024,
                 parallelism: int = 1) -> PairwiseResult:
    """Judge (history, response_x, response_y) pairs and aggregate counts.

    With debiasing on (the default) each pair costs two judge calls.
    Backend failures mark the affected pair invalid instead of aborting
    the run. Rates are computed over valid pairs.
    """
    if not pairs:
        raise ValueError("pairs must be non-empty")

    def worker(pair):
        return _judge_pair(judge, pair, debias, model, temperature, max_tokens)

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(worker, pairs))
    else:
        outcomes = [worker(p) for p in pairs]

    counts = [0, 0, 0, 0]
    for o in outcomes:
        counts[o] += 1
    return PairwiseResult.from_counts(*counts)
