"""A module that contains common functions used by the metric scorers.
"""
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

QUESTION_FORMS = ("open", "closed")


def normalize(text: Optional[str]) -> str:
    """Lowercase, strip and collapse whitespace. None becomes the empty string."""
    if text is None:
        return ""
    return " ".join(str(text).lower().split())


def tokenize(text: Optional[str]) -> List[str]:
    return normalize(text).split()


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    """Counts of every contiguous n-gram of `tokens`."""
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Length of the longest common subsequence (row-by-row dynamic programming)."""
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for x in a:
        current = [0]
        for j, y in enumerate(b):
            current.append(previous[j] + 1 if x == y else max(previous[j + 1], current[j]))
        previous = current
    return previous[-1]


@dataclass
class EvalPair:
    """
    A candidate and its references, tokenized with the same convention.

    Attributes:
        candidate (List[str]): Candidate tokens (may be empty).
        references (List[List[str]]): At least one reference token list.
        question_form (Optional[str]): "open", "closed" or None for captions.
    """

    candidate: List[str]
    references: List[List[str]]
    question_form: Optional[str] = None

    def __post_init__(self):
        if not self.references:
            raise ValueError("an EvalPair needs at least one reference")
        if self.question_form is not None and self.question_form not in QUESTION_FORMS:
            raise ValueError(f"question_form must be one of {QUESTION_FORMS}")

    @classmethod
    def from_text(
        cls,
        candidate: Optional[str],
        references,
        question_form: Optional[str] = None,
    ) -> "EvalPair":
        if isinstance(references, str):
            references = [references]
        return cls(tokenize(candidate), [tokenize(r) for r in references], question_form)


class BaseScorer:
    """A base class for corpus-level scorers.
    Classes from the `metrics` module inherit from this class.
    """

    def __init__(self, pairs: Iterable[EvalPair]):
        self.pairs = list(pairs)

    def __len__(self):
        return len(self.pairs)

    @staticmethod
    def max_reference_counts(references: Sequence[Sequence[str]], n: int) -> Counter:
        """Per n-gram, the largest count in any single reference (BLEU clipping)."""
        merged: Counter = Counter()
        for reference in references:
            for gram, count in ngrams(reference, n).items():
                merged[gram] = max(merged[gram], count)
        return merged

    @staticmethod
    def closest_reference_length(candidate_length: int, references) -> int:
        """Reference length closest to the candidate's; ties go to the shorter one."""
        return min((abs(len(r) - candidate_length), len(r)) for r in references)[1]

    def reference_sets(self) -> List[Tuple[Tuple[str, ...], ...]]:
        return [tuple(tuple(r) for r in pair.references) for pair in self.pairs]
