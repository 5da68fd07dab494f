"""Reference-based generation metrics: BLEU-2, ROUGE-L, CIDEr, Distinct-2.

All functions work on token lists and are pure. BLEU and ROUGE-L are
averaged per example by ``evaluate_run``; CIDEr and Distinct-2 are
corpus-level. Raw scores live in [0, 1] and reports scale them (x100 by
default).
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from .concepts import TaggedUtterance, render, strip_tags

TOKENIZER_DEFAULT = "whitespace-punct-lower"
TOKENIZER_WHITESPACE = "whitespace-only"

_TOKEN_RE = re.compile(r"'\w+|\w+|[^\w\s]")


class EmptyInputError(ValueError):
    pass


class EmptyCorpusError(ValueError):
    pass


@dataclass(frozen=True)
class MetricConfig:
    """Knobs for the metric suite.

    rouge_beta defaults to the infinity sentinel, making the LCS F-measure
    collapse to recall exactly instead of chasing a huge finite beta.
    cider_weights default to uniform 1/N over n-gram orders 1..cider_n.
    """

    bleu_max_n: int = 2
    bleu_smoothing: bool = False
    rouge_beta: float = math.inf
    cider_n: int = 4
    cider_weights: tuple[float, ...] | None = None
    tokenizer: str = TOKENIZER_DEFAULT
    report_scale: float = 100.0
    score_with_tags: bool = False
    distinct_per_example: bool = False

    def __post_init__(self):
        if self.bleu_max_n < 1:
            raise ValueError("bleu_max_n must be >= 1")
        if self.cider_n < 1:
            raise ValueError("cider_n must be >= 1")
        if self.report_scale <= 0:
            raise ValueError("report_scale must be positive")
        if self.cider_weights is not None:
            if len(self.cider_weights) != self.cider_n:
                raise ValueError("cider_weights length must equal cider_n")
            if abs(sum(self.cider_weights) - 1.0) > 1e-9:
                raise ValueError("cider_weights must sum to 1")
        if self.tokenizer not in (TOKENIZER_DEFAULT, TOKENIZER_WHITESPACE):
            raise ValueError(f"unknown tokenizer mode {self.tokenizer!r}")

    def weights(self) -> tuple[float, ...]:
        if self.cider_weights is not None:
            return self.cider_weights
        return tuple(1.0 / self.cider_n for _ in range(self.cider_n))


DEFAULT_CONFIG = MetricConfig()


@dataclass(frozen=True)
class MetricReport:
    bleu2: float
    rouge_l: float
    cider: float
    distinct2: float
    n_examples: int
    config: MetricConfig = field(default_factory=MetricConfig)

    def to_dict(self) -> dict:
        return {
            "bleu2": self.bleu2,
            "rouge_l": self.rouge_l,
            "cider": self.cider,
            "distinct2": self.distinct2,
            "n_examples": self.n_examples,
            "config": {
                "bleu_max_n": self.config.bleu_max_n,
                "bleu_smoothing": self.config.bleu_smoothing,
                "rouge_beta": "inf" if math.isinf(self.config.rouge_beta) else self.config.rouge_beta,
                "cider_n": self.config.cider_n,
                "cider_weights": list(self.config.weights()),
                "tokenizer": self.config.tokenizer,
                "report_scale": self.config.report_scale,
                "score_with_tags": self.config.score_with_tags,
                "distinct_per_example": self.config.distinct_per_example,
            },
        }


def tokenize(text: str, mode: str = TOKENIZER_DEFAULT) -> list[str]:
    """Default mode lowercases, splits punctuation into standalone tokens,
    and keeps contraction suffixes attached to their apostrophe
    ("It's OK" -> [it, 's, ok])."""
    if mode == TOKENIZER_WHITESPACE:
        return text.split()
    if mode != TOKENIZER_DEFAULT:
        raise ValueError(f"unknown tokenizer mode {mode!r}")
    return _TOKEN_RE.findall(text.lower())


def ngrams(tokens: Sequence[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def bleu2(candidate: Sequence[str], references: Sequence[Sequence[str]],
          config: MetricConfig = DEFAULT_CONFIG) -> float:
    """Geometric mean of modified n-gram precisions (n up to
    config.bleu_max_n, uniform weights) times the brevity penalty.

    Per-n-gram counts are clipped to the maximum count in any reference.
    BP = 1 when the candidate is longer than the effective reference
    length r (the reference length closest to the candidate length, ties
    to the shorter), else exp(1 - r/c). Any zero precision zeroes the
    score unless +1/+1 smoothing is enabled.
    """
    if not candidate:
        raise EmptyInputError("candidate must be non-empty")
    refs = [list(r) for r in references]
    if not refs or all(not r for r in refs):
        raise EmptyInputError("at least one non-empty reference is required")

    max_n = config.bleu_max_n
    weights = [1.0 / max_n] * max_n
    log_sum = 0.0
    for n, w in enumerate(weights, start=1):
        cand_counts = Counter(ngrams(candidate, n))
        clipped = 0
        total = sum(cand_counts.values())
        if cand_counts:
            max_ref: Counter = Counter()
            for ref in refs:
                for gram, count in Counter(ngrams(ref, n)).items():
                    if count > max_ref[gram]:
                        max_ref[gram] = count
            clipped = sum(min(count, max_ref[gram]) for gram, count in cand_counts.items())
        if config.bleu_smoothing:
            p_n = (clipped + 1) / (total + 1)
        else:
            if clipped == 0 or total == 0:
                return 0.0
            p_n = clipped / total
        log_sum += w * math.log(p_n)

    c = len(candidate)
    r = min((len(ref) for ref in refs), key=lambda length: (abs(length - c), length))
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length via the standard DP table."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str],
            beta: float = math.inf) -> float:
    """LCS-based F-measure. With the infinite-beta sentinel the measure is
    exactly LCS recall; a zero LCS scores zero."""
    if not candidate or not reference:
        raise EmptyInputError("candidate and reference must be non-empty")
    lcs = lcs_length(reference, candidate)
    if lcs == 0:
        return 0.0
    recall = lcs / len(reference)
    precision = lcs / len(candidate)
    if math.isinf(beta):
        return recall
    beta_sq = beta * beta
    return (1 + beta_sq) * recall * precision / (recall + beta_sq * precision)


def _cosine(u: dict, v: dict) -> float:
    nu = math.sqrt(sum(x * x for x in u.values()))
    nv = math.sqrt(sum(x * x for x in v.values()))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    dot = sum(x * v[g] for g, x in u.items() if g in v)
    return dot / (nu * nv)


def cider(candidates: Sequence[Sequence[str]],
          references: Sequence[Sequence[Sequence[str]]],
          config: MetricConfig = DEFAULT_CONFIG) -> float:
    """TF-IDF n-gram consensus score, averaged over the corpus.

    For each order n, an n-gram k gets weight tf_k * ln(|I| / df_k), where
    |I| is the example count and df_k counts examples whose reference set
    contains k (clamped to >= 1). The per-example score averages the
    cosine between candidate and each reference vector, then combines
    orders with the configured weights. A single-example corpus has all
    idf = ln(1) = 0 and scores 0 by the zero-vector convention.
    """
    if len(candidates) != len(references):
        raise ValueError("candidates and references must have equal length")
    if not candidates:
        raise EmptyCorpusError("corpus must contain at least one example")
    for ref_list in references:
        if not ref_list:
            raise ValueError("every example needs at least one reference")

    n_examples = len(candidates)
    weights = config.weights()
    total = 0.0
    for n, w_n in enumerate(weights, start=1):
        if w_n == 0.0:
            continue
        df: Counter = Counter()
        ref_counts: list[list[Counter]] = []
        for ref_list in references:
            counts = [Counter(ngrams(ref, n)) for ref in ref_list]
            ref_counts.append(counts)
            seen: set = set()
            for c in counts:
                seen.update(c)
            df.update(seen)
        idf = {g: math.log(n_examples / max(df[g], 1)) for g in df}

        def weigh(counts: Counter) -> dict:
            return {
                g: tf * idf.get(g, math.log(n_examples))
                for g, tf in counts.items()
            }

        level_sum = 0.0
        for cand, counts in zip(candidates, ref_counts):
            cand_vec = weigh(Counter(ngrams(cand, n)))
            sims = [_cosine(cand_vec, weigh(rc)) for rc in counts]
            level_sum += sum(sims) / len(sims)
        total += w_n * (level_sum / n_examples)
    return total


def distinct2(candidates: Sequence[Sequence[str]]) -> float:
    """Corpus-level ratio of distinct to total bigrams; zero when no
    candidate has a bigram."""
    if not candidates:
        raise EmptyCorpusError("corpus must contain at least one candidate")
    seen: set = set()
    total = 0
    for cand in candidates:
        grams = ngrams(cand, 2)
        total += len(grams)
        seen.update(grams)
    if total == 0:
        return 0.0
    return len(seen) / total


def evaluate_run(outputs: Sequence[TaggedUtterance], references: Sequence[str],
                 config: MetricConfig = DEFAULT_CONFIG) -> MetricReport:
    """Score a run against its references and scale into a report.

    Tags are stripped from outputs before scoring (references are untagged
    text), unless config.score_with_tags renders them back in. Examples
    whose candidate or reference tokenizes to nothing contribute zero to
    the per-example metrics instead of aborting the run.
    """
    if len(outputs) != len(references):
        raise ValueError(
            f"outputs ({len(outputs)}) and references ({len(references)}) differ in length"
        )
    if not outputs:
        raise EmptyCorpusError("cannot evaluate an empty run")

    texts = [render(u) if config.score_with_tags else strip_tags(u) for u in outputs]
    cand_tokens = [tokenize(t, config.tokenizer) for t in texts]
    ref_tokens = [tokenize(r, config.tokenizer) for r in references]

    bleu_scores = []
    rouge_scores = []
    for cand, ref in zip(cand_tokens, ref_tokens):
        if not cand or not ref:
            bleu_scores.append(0.0)
            rouge_scores.append(0.0)
            continue
        bleu_scores.append(bleu2(cand, [ref], config))
        rouge_scores.append(rouge_l(cand, ref, config.rouge_beta))

    cider_score = cider(cand_tokens, [[r] for r in ref_tokens], config)
    if config.distinct_per_example:
        per = [distinct2([c]) for c in cand_tokens]
        distinct_score = sum(per) / len(per)
    else:
        distinct_score = distinct2(cand_tokens)

    scale = config.report_scale
    return MetricReport(
        bleu2=scale * sum(bleu_scores) / len(bleu_scores),
        rouge_l=scale * sum(rouge_scores) / len(rouge_scores),
        cider=scale * cider_score,
        distinct2=scale * distinct_score,
        n_examples=len(outputs),
        config=config,
    )
