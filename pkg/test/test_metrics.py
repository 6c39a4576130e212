"""A module for testing the metrics.py module."""

import json
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import metrics
from common_operations import EvalPair

WORDS = st.lists(st.sampled_from(["left", "lung", "opacity", "new", "clear"]), max_size=6)


def pair(candidate, *references, form=None):
    return EvalPair.from_text(candidate, list(references), form)


@pytest.fixture
def captions():
    return [
        pair("there is a new opacity in the left lung", "there is a new opacity in the left lung"),
        pair("the lungs are clear", "the heart size is normal and lungs are clear"),
        pair("worsening effusion", "improving effusion", "worsening effusion"),
    ]


################################################
# BLEU
################################################


def test_bleu_brevity_penalty():
    pairs = [pair("the cat", "the cat sat")]
    assert np.isclose(metrics.bleu(pairs, 1), math.exp(-0.5))
    assert np.isclose(metrics.bleu(pairs, 4), math.exp(-0.5))


def test_bleu_identity_and_disjoint():
    same = [pair("a b c d e", "a b c d e")]
    assert np.isclose(metrics.bleu(same), 1.0)
    assert metrics.bleu([pair("a b c d", "w x y z")]) == 0.0


def test_bleu_is_corpus_level():
    pairs = [pair("a b", "a b"), pair("c d e f", "c d x f")]
    matches, totals, cand_len, ref_len = metrics.BleuScorer(pairs).statistics(2)
    assert matches == [5, 2]
    assert totals == [6, 4]
    assert cand_len == ref_len == 6
    assert np.isclose(metrics.bleu(pairs, 2), math.sqrt(5 / 6 * 2 / 4))


def test_bleu_smoothing_is_logged(caplog):
    with caplog.at_level(logging.WARNING):
        score = metrics.bleu([pair("a b", "a c")], 2)
    assert "bleu smoothing" in caplog.text
    assert np.isclose(score, math.sqrt(0.5 * 1 / 2))


def test_bleu_empty_candidate_and_bad_order():
    assert metrics.bleu([pair("", "a b")]) == 0.0
    with pytest.raises(ValueError):
        metrics.bleu([pair("a", "a")], 5)


################################################
# ROUGE-L
################################################


def test_rouge_l_worked_value():
    score = metrics.rouge_l([pair("a b x c", "a b c")])
    assert np.isclose(score, (1 + 1.44) * 0.75 / (1 + 1.44 * 0.75))
    assert np.isclose(score, 1.83 / 2.08)


def test_rouge_l_best_reference():
    assert metrics.rouge_l([pair("a b", "x y", "a b")]) == 1.0
    assert metrics.rouge_l([pair("a b", "x y")]) == 0.0


################################################
# METEOR
################################################


@pytest.mark.parametrize("n", [1, 2, 5])
def test_meteor_identity(n):
    text = " ".join("abcdefg"[:n])
    assert np.isclose(metrics.meteor_simple([pair(text, text)]), 1 - 0.5 / n**3)


def test_meteor_reversed_pair():
    assert np.isclose(metrics.meteor_simple([pair("a b", "b a")]), 0.5)


def test_meteor_stem_matching():
    pairs = [pair("worsened effusion", "worsening effusion")]
    assert np.isclose(metrics.meteor_simple(pairs), 1 - 0.5 / 8)
    assert np.isclose(metrics.meteor_simple(pairs, stem=False), 0.25)


def test_meteor_prefers_extending_chunk():
    scorer = metrics.MeteorScorer([])
    alignment = scorer.align(["a", "b"], ["b", "x", "a", "b"])
    assert alignment == [(0, 2), (1, 3)]
    assert scorer.count_chunks(alignment) == 1


################################################
# CIDEr
################################################


def test_cider_self_similarity():
    pairs = [
        pair("there is a new opacity", "there is a new opacity"),
        pair("the lungs are clear today", "the lungs are clear today"),
    ]
    assert np.allclose(metrics.CiderScorer(pairs).pair_scores(), [10.0, 10.0])


def test_cider_invariant_under_duplication(captions):
    assert np.isclose(metrics.cider(captions), metrics.cider(captions * 3))


def test_cider_disjoint_is_zero():
    pairs = [pair("a b c d", "w x y z"), pair("e f g h", "p q r s")]
    assert metrics.cider(pairs) == 0.0


def test_cider_warns_on_single_reference_set(caplog):
    with caplog.at_level(logging.WARNING):
        metrics.cider([pair("a b", "a b"), pair("a c", "a b")])
    assert "cider idf degenerate" in caplog.text


################################################
# properties
################################################


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(WORDS, WORDS.filter(bool)), min_size=1, max_size=5))
def test_scores_are_bounded_and_order_free(rows):
    pairs = [EvalPair(c, [r]) for c, r in rows]
    reordered = list(reversed(pairs))
    for score in (metrics.bleu, metrics.rouge_l, metrics.meteor_simple):
        value = score(pairs)
        assert 0.0 <= value <= 1.0 + 1e-12
        assert np.isclose(value, score(reordered))
    assert metrics.cider(pairs) >= 0.0
    assert np.isclose(metrics.cider(pairs), metrics.cider(reordered))


################################################
# reference implementations
################################################

# Plain lists and nested loops, sharing nothing with the scorers.
VOCAB = ["the", "left", "lung", "opacity", "new", "clear", "base"]
# Porter stems of these are pairwise distinct, so stemming adds no matches.
DISTINCT = [
    "opacity", "effusion", "left", "right", "lung", "mild",
    "severe", "new", "base", "apex", "heart", "size",
]

CORPUS = st.lists(
    st.tuples(
        st.lists(st.sampled_from(VOCAB), max_size=8),
        st.lists(st.lists(st.sampled_from(VOCAB), min_size=1, max_size=8), min_size=1, max_size=3),
    ),
    min_size=1,
    max_size=50,
)


def grams_of(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def bleu_by_hand(rows, n):
    cand_len = sum(len(c) for c, _ in rows)
    if cand_len == 0:
        return 0.0
    ref_len = 0
    for c, refs in rows:
        best = refs[0]
        for r in refs[1:]:
            if (abs(len(r) - len(c)), len(r)) < (abs(len(best) - len(c)), len(best)):
                best = r
        ref_len += len(best)
    log_sum = 0.0
    for k in range(1, n + 1):
        matched = total = 0
        for c, refs in rows:
            grams = grams_of(c, k)
            total += len(grams)
            for g in set(grams):
                ceiling = max(grams_of(r, k).count(g) for r in refs)
                matched += min(grams.count(g), ceiling)
        if matched == 0 and k >= 2:
            matched, total = 1, total + 1
        if matched == 0:
            return 0.0
        log_sum += math.log(matched / total)
    return min(1.0, math.exp(1 - ref_len / cand_len)) * math.exp(log_sum / n)


def cider_by_hand(rows):
    n_sets = len(rows)
    pair_scores = []
    idf = []
    for n in range(1, 5):
        df = {}
        for _, refs in rows:
            present = set(g for r in refs for g in grams_of(r, n))
            for g in present:
                df[g] = df.get(g, 0) + 1
        floor = min(df.values()) if df else 1
        idf.append(lambda g, df=df, floor=floor: math.log(n_sets / df.get(g, floor)))
    for c, refs in rows:
        per_reference = []
        for r in refs:
            total = 0.0
            for n in range(1, 5):
                keys = sorted(set(grams_of(c, n)) | set(grams_of(r, n)))
                vc = [grams_of(c, n).count(g) * idf[n - 1](g) for g in keys]
                vr = [grams_of(r, n).count(g) * idf[n - 1](g) for g in keys]
                norm_c = math.sqrt(sum(x * x for x in vc))
                norm_r = math.sqrt(sum(x * x for x in vr))
                if norm_c == 0 or norm_r == 0:
                    continue
                total += sum(min(a, b) * b for a, b in zip(vc, vr)) / (norm_c * norm_r)
            per_reference.append(total / 4)
        pair_scores.append(10 * sum(per_reference) / len(per_reference))
    return sum(pair_scores) / len(pair_scores)


def meteor_by_hand(rows):
    # Words are unique within each sentence, so every match is forced.
    scores = []
    for c, refs in rows:
        best = 0.0
        for r in refs:
            links = [(i, r.index(w)) for i, w in enumerate(c) if w in r]
            if not links:
                continue
            chunks = 1 + sum(
                1 for a, b in zip(links, links[1:]) if b != (a[0] + 1, a[1] + 1)
            )
            m = len(links)
            p, rec = m / len(c), m / len(r)
            f = p * rec / (0.9 * p + 0.1 * rec)
            best = max(best, f * (1 - 0.5 * (chunks / m) ** 3))
        scores.append(best)
    return sum(scores) / len(scores)


@settings(max_examples=50, deadline=None)
@given(CORPUS, st.integers(1, 4))
def test_bleu_matches_reference_implementation(rows, n):
    pairs = [EvalPair(c, refs) for c, refs in rows]
    assert math.isclose(metrics.bleu(pairs, n), bleu_by_hand(rows, n), rel_tol=0, abs_tol=1e-9)


@settings(max_examples=50, deadline=None)
@given(CORPUS)
def test_cider_matches_reference_implementation(rows):
    pairs = [EvalPair(c, refs) for c, refs in rows]
    assert math.isclose(metrics.cider(pairs), cider_by_hand(rows), rel_tol=0, abs_tol=1e-9)


UNIQUE = st.lists(st.sampled_from(DISTINCT), min_size=1, max_size=8, unique=True)


@pytest.mark.parametrize("stem", [True, False])
@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(UNIQUE, st.lists(UNIQUE, min_size=1, max_size=3)), min_size=1, max_size=50))
def test_meteor_matches_reference_implementation(stem, rows):
    pairs = [EvalPair(c, refs) for c, refs in rows]
    assert math.isclose(
        metrics.meteor_simple(pairs, stem=stem), meteor_by_hand(rows), rel_tol=0, abs_tol=1e-9
    )


@settings(max_examples=50, deadline=None)
@given(
    st.permutations(DISTINCT),
    st.integers(4, 8),
    st.integers(0, 4),
    st.integers(4, 8),
    st.integers(0, 2),
    st.integers(0, 2),
)
def test_bleu_non_increasing_in_order(words, ref_len, start, span, before, after):
    # One pair, unique tokens and a shared 4-gram: no clipping and no smoothing.
    reference = words[:ref_len]
    span = min(span, ref_len - min(start, ref_len - 4))
    start = min(start, ref_len - 4)
    extra = words[ref_len:]
    candidate = extra[:before] + reference[start:start + span] + extra[before:before + after]
    pairs = [EvalPair(candidate, [reference])]
    scores = [metrics.bleu(pairs, n) for n in (1, 2, 3, 4)]
    assert all(a >= b - 1e-12 for a, b in zip(scores, scores[1:]))
    assert scores[-1] > 0


def test_bleu_order_can_rise_when_smoothed():
    # One matched unigram in five: smoothed trigram precision 1/4 beats 1/5.
    pairs = [pair("a x y z w", "a")]
    assert metrics.bleu(pairs, 3) > metrics.bleu(pairs, 2)


################################################
# exact_match / compute_report
################################################


def test_exact_match_by_form():
    pairs = [
        pair("worsening effusion", "worsening effusion", form="open"),
        pair("improving effusion", "worsening effusion", form="open"),
        pair("Yes", "yes", form="closed"),
        pair("no", "no", form="closed"),
    ]
    assert metrics.exact_match(pairs) == (50.0, 100.0, 75.0)


def test_exact_match_missing_form():
    assert metrics.exact_match([pair("yes", "yes", form="closed")]) == (None, 100.0, 100.0)
    with pytest.raises(ValueError):
        metrics.exact_match([pair("a", "a")])


def test_report_for_captions_has_no_accuracy(captions, tmp_path):
    report = metrics.compute_report(captions)
    assert report.n_pairs == 3
    assert report.accuracy_all is None
    assert 0.0 < report.bleu1 <= 1.0
    report.save(tmp_path / "metrics.json")
    saved = json.loads((tmp_path / "metrics.json").read_text())
    assert saved["cider"] == pytest.approx(report.cider)
    assert "meteor" in saved["notes"]


def test_report_for_questions_fills_accuracy():
    pairs = [pair("yes", "yes", form="closed"), pair("left lung", "right lung", form="open")]
    report = metrics.compute_report(pairs)
    assert report.accuracy_closed == 100.0
    assert report.accuracy_open == 0.0
    assert report.accuracy_all == 50.0


def test_per_sample_scores(captions):
    table = metrics.per_sample_scores(captions, ["a", "b", "c"])
    assert list(table.sample_id) == ["a", "b", "c"]
    assert table.exact.tolist() == [True, False, True]
    assert table.loc[0, "rouge_l"] == 1.0
    assert table.loc[0, "bleu1"] == 1.0
