"""Captioning and question-answering metrics.

Every scorer works on `EvalPair` objects whose candidate and references were
tokenized by `common_operations.tokenize` (lowercase, stripped, whitespace
split), the same normalization exact-match accuracy compares with.

Conventions:

- BLEU is corpus level. For orders of 2 and above a zero numerator is
  smoothed by adding 1 to numerator and denominator.
- ROUGE-L is the LCS F-measure with beta 1.2, best reference per pair.
- CIDEr uses ``idf = log(N / df)`` over the N reference sets; n-grams that
  occur in no reference set get the idf of the rarest reference n-gram of
  their order. Similarity is clipped at the reference weights, averaged over
  references and orders 1..4, and scaled by 10, so a candidate identical to
  its single reference scores 10 whenever each order has a non-zero weight.
- METEOR is reduced to exact then Porter-stem unigram matching (no synonymy).
"""

import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from nltk.stem.porter import PorterStemmer

from common_operations import BaseScorer, EvalPair, lcs_length, ngrams

logger = logging.getLogger(__name__)

ROUGE_BETA = 1.2
CIDER_ORDERS = 4
CIDER_SCALE = 10.0
METEOR_ALPHA = 0.9
METEOR_GAMMA = 0.5
METEOR_BETA = 3.0


class BleuScorer(BaseScorer):
    """Corpus-level BLEU with clipped n-gram precisions and a brevity penalty."""

    def statistics(self, n: int) -> Tuple[List[int], List[int], int, int]:
        """Clipped matches and totals per order, candidate and reference length."""
        matches = [0] * n
        totals = [0] * n
        cand_len = ref_len = 0
        for pair in self.pairs:
            cand_len += len(pair.candidate)
            ref_len += self.closest_reference_length(len(pair.candidate), pair.references)
            for k in range(1, n + 1):
                counts = ngrams(pair.candidate, k)
                clip = self.max_reference_counts(pair.references, k)
                matches[k - 1] += sum(min(c, clip[g]) for g, c in counts.items())
                totals[k - 1] += sum(counts.values())
        return matches, totals, cand_len, ref_len

    def score(self, n: int = 4) -> float:
        if n not in (1, 2, 3, 4):
            raise ValueError(f"BLEU order must be in 1..4, got {n}")
        matches, totals, cand_len, ref_len = self.statistics(n)
        if cand_len == 0:
            return 0.0
        log_precision = 0.0
        for k in range(n):
            numerator, denominator = matches[k], totals[k]
            if numerator == 0 and k >= 1:
                logger.warning("bleu smoothing applied order=%d", k + 1)
                numerator, denominator = numerator + 1, denominator + 1
            if numerator == 0:
                return 0.0
            log_precision += math.log(numerator / denominator) / n
        brevity = min(1.0, math.exp(1.0 - ref_len / cand_len))
        return brevity * math.exp(log_precision)


class RougeScorer(BaseScorer):
    """LCS-based F-measure, best reference per pair, averaged over pairs."""

    @staticmethod
    def pair_score(candidate: Sequence[str], reference: Sequence[str], beta: float) -> float:
        lcs = lcs_length(candidate, reference)
        if lcs == 0:
            return 0.0
        precision = lcs / len(candidate)
        recall = lcs / len(reference)
        return (1 + beta ** 2) * precision * recall / (recall + beta ** 2 * precision)

    def pair_scores(self, beta: float = ROUGE_BETA) -> List[float]:
        return [
            max(self.pair_score(p.candidate, r, beta) for r in p.references)
            for p in self.pairs
        ]

    def score(self, beta: float = ROUGE_BETA) -> float:
        scores = self.pair_scores(beta)
        return float(np.mean(scores)) if scores else 0.0


class CiderScorer(BaseScorer):
    """TF-IDF n-gram consensus against the reference sets of the corpus."""

    def __init__(self, pairs, orders: int = CIDER_ORDERS):
        super().__init__(pairs)
        self.orders = orders
        self.n_sets = len(self.pairs)
        self.document_frequency = self._document_frequency()
        if len(set(self.reference_sets())) < 2:
            logger.warning(
                "cider idf degenerate distinct_reference_sets=%d",
                len(set(self.reference_sets())),
            )

    def _document_frequency(self) -> List[Counter]:
        frequency = [Counter() for _ in range(self.orders)]
        for pair in self.pairs:
            for n in range(1, self.orders + 1):
                seen = set()
                for reference in pair.references:
                    seen.update(ngrams(reference, n))
                frequency[n - 1].update(seen)
        return frequency

    def idf(self, gram: Tuple[str, ...]) -> float:
        frequency = self.document_frequency[len(gram) - 1]
        df = frequency.get(gram, 0)
        if df == 0:
            df = min(frequency.values(), default=1)
        return math.log(self.n_sets / df)

    def _vector(self, tokens: Sequence[str], n: int) -> Dict[Tuple[str, ...], float]:
        return {g: c * self.idf(g) for g, c in ngrams(tokens, n).items()}

    def _similarity(self, candidate, reference) -> float:
        total = 0.0
        for n in range(1, self.orders + 1):
            vec_c = self._vector(candidate, n)
            vec_r = self._vector(reference, n)
            norm_c = math.sqrt(sum(v * v for v in vec_c.values()))
            norm_r = math.sqrt(sum(v * v for v in vec_r.values()))
            if norm_c == 0.0 or norm_r == 0.0:
                continue
            overlap = sum(
                min(weight, vec_r[g]) * vec_r[g] for g, weight in vec_c.items() if g in vec_r
            )
            total += overlap / (norm_c * norm_r)
        return total / self.orders

    def pair_scores(self) -> List[float]:
        return [
            CIDER_SCALE
            * float(np.mean([self._similarity(p.candidate, r) for r in p.references]))
            for p in self.pairs
        ]

    def score(self) -> float:
        scores = self.pair_scores()
        return float(np.mean(scores)) if scores else 0.0


class MeteorScorer(BaseScorer):
    """
    METEOR without synonymy: exact matches first, then Porter-stem matches.

    Among equally good reference positions the matcher prefers the one that
    extends the previous chunk.
    """

    def __init__(self, pairs, stem: bool = True):
        super().__init__(pairs)
        self.stemmer = PorterStemmer() if stem else None

    def align(self, candidate: Sequence[str], reference: Sequence[str]) -> List[Tuple[int, int]]:
        used_ref = set()
        alignment: Dict[int, int] = {}
        stages = [lambda w: w]
        if self.stemmer is not None:
            stages.append(self.stemmer.stem)
        for key in stages:
            ref_keys = [key(w) for w in reference]
            for i, word in enumerate(candidate):
                if i in alignment:
                    continue
                target = key(word)
                options = [
                    j for j, r in enumerate(ref_keys) if r == target and j not in used_ref
                ]
                if not options:
                    continue
                follow = alignment.get(i - 1)
                j = follow + 1 if follow is not None and follow + 1 in options else options[0]
                alignment[i] = j
                used_ref.add(j)
        return sorted(alignment.items())

    @staticmethod
    def count_chunks(alignment: Sequence[Tuple[int, int]]) -> int:
        chunks = 0
        previous = None
        for i, j in alignment:
            if previous is None or (i, j) != (previous[0] + 1, previous[1] + 1):
                chunks += 1
            previous = (i, j)
        return chunks

    def pair_score(self, candidate: Sequence[str], reference: Sequence[str]) -> float:
        alignment = self.align(candidate, reference)
        matches = len(alignment)
        if matches == 0:
            return 0.0
        precision = matches / len(candidate)
        recall = matches / len(reference)
        f_mean = precision * recall / (METEOR_ALPHA * precision + (1 - METEOR_ALPHA) * recall)
        penalty = METEOR_GAMMA * (self.count_chunks(alignment) / matches) ** METEOR_BETA
        return f_mean * (1.0 - penalty)

    def pair_scores(self) -> List[float]:
        return [max(self.pair_score(p.candidate, r) for r in p.references) for p in self.pairs]

    def score(self) -> float:
        scores = self.pair_scores()
        return float(np.mean(scores)) if scores else 0.0


def bleu(pairs: Sequence[EvalPair], n: int = 4) -> float:
    return BleuScorer(pairs).score(n)


def rouge_l(pairs: Sequence[EvalPair]) -> float:
    return RougeScorer(pairs).score()


def cider(pairs: Sequence[EvalPair]) -> float:
    return CiderScorer(pairs).score()


def meteor_simple(pairs: Sequence[EvalPair], stem: bool = True) -> float:
    return MeteorScorer(pairs, stem).score()


def is_exact(pair: EvalPair) -> bool:
    return any(pair.candidate == r for r in pair.references)


def exact_match(
    pairs: Sequence[EvalPair],
) -> Tuple[Optional[float], Optional[float], Optional[float]]:
    """
    Exact-match accuracy in percent as (open, closed, all).

    A form without any pair yields None for that entry.

    Raises:
        ValueError: If a pair has no question form.
    """
    hits = {"open": [], "closed": []}
    for pair in pairs:
        if pair.question_form is None:
            raise ValueError("exact_match needs a question form on every pair")
        hits[pair.question_form].append(is_exact(pair))

    def percent(values):
        return 100.0 * sum(values) / len(values) if values else None

    return (
        percent(hits["open"]),
        percent(hits["closed"]),
        percent(hits["open"] + hits["closed"]),
    )


@dataclass
class MetricReport:
    """
    Corpus scores of one prediction set.

    Attributes:
        bleu1, bleu2, bleu3, bleu4 (float): Corpus BLEU in [0, 1].
        meteor (float): Reduced METEOR in [0, 1].
        rouge_l (float): ROUGE-L in [0, 1].
        cider (float): CIDEr, non-negative.
        accuracy_open, accuracy_closed, accuracy_all (Optional[float]): Exact match in percent.
        n_pairs (int): Number of scored pairs.
        notes (Dict[str, str]): Metric conventions used.
    """

    bleu1: float = 0.0
    bleu2: float = 0.0
    bleu3: float = 0.0
    bleu4: float = 0.0
    meteor: float = 0.0
    rouge_l: float = 0.0
    cider: float = 0.0
    accuracy_open: Optional[float] = None
    accuracy_closed: Optional[float] = None
    accuracy_all: Optional[float] = None
    n_pairs: int = 0
    notes: Dict[str, str] = field(
        default_factory=lambda: {
            "bleu": "corpus level, +1 smoothing of zero precisions for orders >= 2",
            "meteor": "exact and Porter-stem unigram matching only, no synonymy",
            "cider": "idf = log(N/df), unseen n-grams weighted as the rarest seen n-gram",
            "rouge_l": f"LCS F-measure, beta={ROUGE_BETA}",
        }
    )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def save(self, path: Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def compute_report(pairs: Sequence[EvalPair]) -> MetricReport:
    """Score every metric on `pairs`; accuracies only when every pair has a question form."""
    pairs = list(pairs)
    scorer = BleuScorer(pairs)
    report = MetricReport(
        bleu1=scorer.score(1),
        bleu2=scorer.score(2),
        bleu3=scorer.score(3),
        bleu4=scorer.score(4),
        meteor=meteor_simple(pairs),
        rouge_l=rouge_l(pairs),
        cider=cider(pairs),
        n_pairs=len(pairs),
    )
    if pairs and all(p.question_form is not None for p in pairs):
        report.accuracy_open, report.accuracy_closed, report.accuracy_all = exact_match(pairs)
    logger.info(
        "metrics n_pairs=%d bleu4=%.4f rouge_l=%.4f cider=%.4f",
        report.n_pairs,
        report.bleu4,
        report.rouge_l,
        report.cider,
    )
    return report


def per_sample_scores(pairs: Sequence[EvalPair], sample_ids: Sequence[str]) -> pd.DataFrame:
    """Per-pair scores aligned with `sample_ids` (CIDEr uses the whole corpus for idf)."""
    pairs = list(pairs)
    return pd.DataFrame(
        {
            "sample_id": list(sample_ids),
            "candidate": [" ".join(p.candidate) for p in pairs],
            "reference": [" ".join(p.references[0]) for p in pairs],
            "question_form": [p.question_form for p in pairs],
            "exact": [is_exact(p) for p in pairs],
            "bleu1": [BleuScorer([p]).score(1) for p in pairs],
            "rouge_l": RougeScorer(pairs).pair_scores(),
            "meteor": MeteorScorer(pairs).pair_scores(),
            "cider": CiderScorer(pairs).pair_scores() if pairs else [],
        }
    )
