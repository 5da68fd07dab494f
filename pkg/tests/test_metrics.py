import math
import random

import pytest

from oracles import (
    bleu_oracle,
    cider_oracle,
    distinct2_oracle,
    lcs_recursive,
    rouge_l_oracle,
)
from coct.concepts import ANGLE, Segment, TaggedUtterance
from coct.metrics import (
    EmptyCorpusError,
    EmptyInputError,
    MetricConfig,
    bleu2,
    cider,
    distinct2,
    evaluate_run,
    lcs_length,
    rouge_l,
    tokenize,
)

E = 1e-9


# --- tokenize ---------------------------------------------------------------

def test_tokenize_punctuation():
    assert tokenize("The cat sat.") == ["the", "cat", "sat", "."]


def test_tokenize_empty():
    assert tokenize("") == []


def test_tokenize_contraction():
    assert tokenize("It's OK") == ["it", "'s", "ok"]


def test_tokenize_whitespace_only_mode():
    assert tokenize("The cat sat.", "whitespace-only") == ["The", "cat", "sat."]


# --- bleu -------------------------------------------------------------------

def test_bleu_identity_is_exactly_one():
    tokens = ["the", "cat", "sat"]
    assert bleu2(tokens, [tokens]) == 1.0


def test_bleu_worked_example():
    # p1 = 3/3, p2 = 2/2, c=3 <= r=4 so BP = e^(1 - 4/3) = e^(-1/3)
    score = bleu2(["the", "cat", "sat"], [["the", "cat", "sat", "down"]])
    assert score == pytest.approx(math.exp(-1.0 / 3.0), abs=E)


def test_bleu_no_bigram_overlap_is_zero():
    assert bleu2(["a", "b"], [["a", "c", "b"]]) == 0.0


def test_bleu_smoothing_rescues_zero_precision():
    config = MetricConfig(bleu_smoothing=True)
    assert bleu2(["a", "b"], [["a", "c", "b"]], config) > 0.0


def test_bleu_effective_reference_length_ties_prefer_shorter():
    # candidate length 3; references of lengths 2 and 4 are equally distant:
    # r = 2, so c > r and BP = 1.
    cand = ["a", "b", "c"]
    refs = [["a", "b"], ["a", "b", "c", "d"]]
    assert bleu2(cand, refs) == pytest.approx(1.0, abs=E)


def test_bleu_empty_inputs_error():
    with pytest.raises(EmptyInputError):
        bleu2([], [["a"]])
    with pytest.raises(EmptyInputError):
        bleu2(["a"], [[]])


# --- rouge ------------------------------------------------------------------

def test_rouge_identity():
    tokens = ["x", "y", "z"]
    assert rouge_l(tokens, tokens) == 1.0
    assert rouge_l(tokens, tokens, beta=1.0) == 1.0


def test_rouge_worked_example():
    ref = ["the", "cat", "sat", "on", "the", "mat"]
    cand = ["the", "cat", "ate", "the", "mat"]
    assert lcs_length(ref, cand) == 4
    assert rouge_l(cand, ref) == pytest.approx(2.0 / 3.0, abs=E)


def test_rouge_disjoint_is_zero():
    assert rouge_l(["a", "b"], ["c", "d"]) == 0.0


def test_rouge_finite_beta():
    ref = ["a", "b", "c", "d"]
    cand = ["a", "b"]
    recall, precision = 2 / 4, 2 / 2
    beta = 2.0
    expected = (1 + 4) * recall * precision / (recall + 4 * precision)
    assert rouge_l(cand, ref, beta=beta) == pytest.approx(expected, abs=E)


def test_rouge_empty_error():
    with pytest.raises(EmptyInputError):
        rouge_l([], ["a"])


# --- cider ------------------------------------------------------------------

def test_cider_identity_two_distinct_examples():
    cands = [["a", "b", "c", "d", "e"], ["f", "g", "h", "i", "j"]]
    refs = [[c] for c in cands]
    assert cider(cands, refs) == pytest.approx(1.0, abs=E)


def test_cider_single_example_is_zero():
    # |I| = 1 makes every idf ln(1) = 0, so all vectors vanish.
    assert cider([["a", "b", "c"]], [[["a", "b", "c"]]]) == 0.0


def test_cider_toy_corpus_matches_frozen_oracle_value():
    cands = [["the", "cat", "sat", "on", "the", "mat"],
             ["a", "dog", "barked", "loudly", "today"]]
    refs = [[["the", "cat", "sat", "on", "a", "mat"]],
            [["a", "dog", "barked", "at", "night"]]]
    # Computed once with the brute-force oracle and frozen.
    assert cider(cands, refs) == pytest.approx(0.46441874558964763, abs=E)
    assert cider(cands, refs) == pytest.approx(cider_oracle(cands, refs), abs=E)


def test_cider_errors():
    with pytest.raises(EmptyCorpusError):
        cider([], [])
    with pytest.raises(ValueError):
        cider([["a"]], [[]])


def test_cider_permutation_invariance():
    cands = [["a", "b"], ["c", "d"], ["a", "c"]]
    refs = [[["a", "b"]], [["c", "e"]], [["a", "d"]]]
    forward = cider(cands, refs)
    backward = cider(cands[::-1], refs[::-1])
    assert forward == pytest.approx(backward, abs=1e-12)


# --- distinct ---------------------------------------------------------------

def test_distinct2_worked_example():
    assert distinct2([["a", "b", "a", "b"]]) == pytest.approx(2.0 / 3.0, abs=E)


def test_distinct2_no_bigrams():
    assert distinct2([["a"], ["b"]]) == 0.0


def test_distinct2_all_unique():
    assert distinct2([["a", "b"], ["c", "d"]]) == 1.0


def test_distinct2_empty_corpus():
    with pytest.raises(EmptyCorpusError):
        distinct2([])


# --- evaluate_run -----------------------------------------------------------

def _utterance(text):
    return TaggedUtterance((Segment(None, text),), ANGLE)


def test_evaluate_run_identity_scores_100():
    texts = [
        "That is great news for you.",
        "I am sorry to hear that happened.",
        "Maybe try a different approach tomorrow.",
    ]
    report = evaluate_run([_utterance(t) for t in texts], texts)
    assert report.bleu2 == pytest.approx(100.0, abs=1e-6)
    assert report.rouge_l == pytest.approx(100.0, abs=1e-6)
    assert report.n_examples == 3
    assert 0 <= report.cider <= 100 and 0 <= report.distinct2 <= 100


def test_evaluate_run_single_example_cider_zero():
    report = evaluate_run([_utterance("hello there friend")], ["hello there friend"])
    assert report.n_examples == 1
    assert report.cider == 0.0


def test_evaluate_run_strips_tags_by_default():
    tagged = TaggedUtterance((Segment("Question", "why not now ?"),), ANGLE)
    report = evaluate_run([tagged, _utterance("b c d")], ["why not now ?", "b c d"])
    assert report.bleu2 == pytest.approx(100.0, abs=1e-6)
    with_tags = evaluate_run([tagged, _utterance("b c d")], ["why not now ?", "b c d"],
                             MetricConfig(score_with_tags=True))
    assert with_tags.bleu2 < 100.0


def test_evaluate_run_three_example_fixture_frozen():
    outputs = [
        "That's fantastic! Learning to cook is fun.",
        "I am sorry your interview went badly.",
        "Lovely weather makes everything better, right?",
    ]
    references = [
        "That's wonderful! Learning to cook is rewarding.",
        "I am sorry the interview went so badly.",
        "Lovely weather really does make everything better.",
    ]
    report = evaluate_run([_utterance(t) for t in outputs], references)
    # Frozen from the brute-force oracles (see oracles.py).
    assert report.bleu2 == pytest.approx(55.621689462319516, abs=1e-7)
    assert report.rouge_l == pytest.approx(69.25925925925927, abs=1e-7)
    assert report.cider == pytest.approx(35.87411623425806, abs=1e-7)
    assert report.distinct2 == pytest.approx(100.0, abs=1e-7)


def test_evaluate_run_length_mismatch():
    with pytest.raises(ValueError):
        evaluate_run([_utterance("a")], ["a", "b"])


def test_evaluate_run_empty_candidate_contributes_zero():
    report = evaluate_run([_utterance("!"), _utterance("a b")], ["a b", "a b"])
    # first example tokenizes to ["!"] vs ["a","b"]: zero overlap, no crash
    assert 0.0 <= report.bleu2 < 100.0


def test_distinct_per_example_mean_mode():
    config = MetricConfig(distinct_per_example=True)
    report = evaluate_run(
        [_utterance("a b a b"), _utterance("c d e")],
        ["x", "y"], config)
    # per-example distinct: 2/3 and 2/2 -> mean 5/6
    assert report.distinct2 == pytest.approx(100 * 5 / 6, abs=1e-9)


# --- randomized oracle agreement ---------------------------------------------

ALPHABET = list("abcdefghij")


def random_corpus(rng, max_examples=4, max_len=8, min_len=1):
    n = rng.randint(1, max_examples)
    cands, refs = [], []
    for _ in range(n):
        cands.append([rng.choice(ALPHABET) for _ in range(rng.randint(min_len, max_len))])
        refs.append([
            [rng.choice(ALPHABET) for _ in range(rng.randint(min_len, max_len))]
            for _ in range(rng.randint(1, 2))
        ])
    return cands, refs


@pytest.mark.parametrize("seed", range(4))
def test_metrics_match_oracles_randomized(seed):
    rng = random.Random(1000 + seed)
    for _ in range(60):
        cands, refs = random_corpus(rng)
        cdr = cider(cands, refs)
        d2 = distinct2(cands)
        assert cdr == pytest.approx(cider_oracle(cands, refs), abs=E)
        assert d2 == pytest.approx(distinct2_oracle(cands), abs=E)
        assert -E <= cdr <= 1 + E and 0 <= d2 <= 1
        for cand, ref_list in zip(cands, refs):
            b = bleu2(cand, ref_list)
            r = rouge_l(cand, ref_list[0])
            assert b == pytest.approx(bleu_oracle(cand, ref_list), abs=E)
            assert r == pytest.approx(rouge_l_oracle(cand, ref_list[0]), abs=E)
            assert 0 <= b <= 1 + E and 0 <= r <= 1
            assert lcs_length(ref_list[0], cand) == lcs_recursive(ref_list[0], cand)


def test_rouge_self_symmetry_any_beta():
    rng = random.Random(21)
    for _ in range(40):
        tokens = [rng.choice(ALPHABET) for _ in range(rng.randint(1, 10))]
        for beta in (0.5, 1.0, 8.0, 1e6, math.inf):
            assert rouge_l(tokens, tokens, beta) == pytest.approx(1.0, abs=1e-12)


def test_monotonicity_appending_matching_bigram():
    rng = random.Random(7)
    for _ in range(50):
        ref = [rng.choice(ALPHABET) for _ in range(rng.randint(3, 8))]
        cand = [rng.choice(ALPHABET) for _ in range(rng.randint(2, 6))]

        def clipped_p2_numerator(c):
            from collections import Counter
            from coct.metrics import ngrams
            cc = Counter(ngrams(c, 2))
            rc = Counter(ngrams(ref, 2))
            return sum(min(v, rc[g]) for g, v in cc.items())

        base = clipped_p2_numerator(cand)
        # append a bigram straight out of the reference
        i = rng.randrange(len(ref) - 1)
        extended = cand + [ref[i], ref[i + 1]]
        assert clipped_p2_numerator(extended) >= base
