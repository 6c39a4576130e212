"""Byte-pair-encoding codec shared by instructions, reports and answers.

Merges never cross whitespace: every whitespace character is its own symbol and
words are merged independently. Text is lowercased before encoding.
"""

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

from tensor import ContractError
from utils import Configuration

logger = logging.getLogger(__name__)

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
SPECIAL_TOKENS = (
    Configuration.PAD_TOKEN,
    Configuration.BOS_TOKEN,
    Configuration.EOS_TOKEN,
    Configuration.UNK_TOKEN,
)
_SEGMENT = re.compile(r"\s|\S+")
_HEADER = "priorview-bpe 1"


@dataclass
class Vocab:
    """
    A trained BPE vocabulary.

    Attributes:
        tokens (List[str]): Symbol for every id; the first four are the specials.
        merges (List[Tuple[str, str]]): Merge rules in training order.
        max_len (int): Maximum encoded length including bos/eos.
    """

    tokens: List[str]
    merges: List[Tuple[str, str]]
    max_len: int = Configuration.MAX_SEQUENCE_LENGTH
    token_to_id: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.merges = [tuple(m) for m in self.merges]
        self.token_to_id = {}
        for i, tok in enumerate(self.tokens):
            self.token_to_id.setdefault(tok, i)
        self._cache: Dict[str, List[int]] = {}

    def __len__(self):
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    pad_id = PAD_ID
    bos_id = BOS_ID
    eos_id = EOS_ID
    unk_id = UNK_ID

    def encode(self, text: str) -> List[int]:
        return encode(text, self)

    def decode(self, ids: Iterable[int]) -> str:
        return decode(ids, self)


def _segments(text: str) -> List[str]:
    return _SEGMENT.findall(text.lower())


def _merge_word(symbols: Sequence[str], pair: Tuple[str, str]) -> List[str]:
    merged = []
    i = 0
    while i < len(symbols):
        if i < len(symbols) - 1 and (symbols[i], symbols[i + 1]) == pair:
            merged.append(symbols[i] + symbols[i + 1])
            i += 2
        else:
            merged.append(symbols[i])
            i += 1
    return merged


def train_bpe(
    corpus: Iterable[str],
    vocab_size: int = Configuration.DEFAULT_VOCAB_SIZE,
    max_len: int = Configuration.MAX_SEQUENCE_LENGTH,
) -> Vocab:
    """
    Learn merges until the vocabulary reaches `vocab_size` or no pair is left.

    The most frequent adjacent pair is merged each round; ties go to the
    lexicographically smallest pair.

    Args:
        corpus (Iterable[str]): Training strings.
        vocab_size (int): Target vocabulary size including the four specials.
        max_len (int): Encoded length limit stored in the vocabulary.

    Returns:
        Vocab: The trained vocabulary.

    Raises:
        ContractError: If the corpus is empty or `vocab_size` is smaller than
            the character set plus the specials.
    """
    corpus = [line for line in corpus if line]
    if not corpus:
        raise ContractError("cannot train BPE on an empty corpus")

    word_counts: Counter = Counter()
    charset = set()
    for line in corpus:
        for segment in _segments(line):
            charset.update(segment)
            if not segment.isspace():
                word_counts[segment] += 1

    base = list(SPECIAL_TOKENS) + sorted(charset)
    if vocab_size < len(base):
        raise ContractError(
            f"vocab_size {vocab_size} below charset+specials {len(base)}"
        )

    tokens = list(base)
    known = set(tokens)
    merges: List[Tuple[str, str]] = []
    words = {w: list(w) for w in word_counts}
    while len(tokens) < vocab_size:
        pair_counts: Counter = Counter()
        for word, symbols in words.items():
            count = word_counts[word]
            for pair in zip(symbols, symbols[1:]):
                pair_counts[pair] += count
        if not pair_counts:
            break
        best = min(pair_counts, key=lambda p: (-pair_counts[p], p))
        merges.append(best)
        new_symbol = best[0] + best[1]
        if new_symbol not in known:
            known.add(new_symbol)
            tokens.append(new_symbol)
        words = {w: _merge_word(s, best) for w, s in words.items()}

    logger.info(
        "bpe trained charset=%d merges=%d vocab=%d",
        len(charset),
        len(merges),
        len(tokens),
    )
    return Vocab(tokens=tokens, merges=merges, max_len=max_len)


def _encode_word(word: str, vocab: Vocab) -> List[int]:
    cached = vocab._cache.get(word)
    if cached is not None:
        return cached
    symbols = list(word)
    for pair in vocab.merges:
        if len(symbols) < 2:
            break
        symbols = _merge_word(symbols, pair)
    ids = [vocab.token_to_id.get(s, UNK_ID) for s in symbols]
    vocab._cache[word] = ids
    return ids


def encode(text: str, vocab: Vocab) -> List[int]:
    """
    Encode text as ``[bos, ..., eos]`` with at most `vocab.max_len` ids.

    Unknown characters map to unk; overly long bodies keep their prefix.
    """
    body: List[int] = []
    limit = vocab.max_len - 2
    for segment in _segments(text):
        if segment.isspace():
            body.append(vocab.token_to_id.get(segment, UNK_ID))
        else:
            body.extend(_encode_word(segment, vocab))
        if len(body) >= limit:
            break
    return [BOS_ID] + body[:limit] + [EOS_ID]


def decode(ids: Iterable[int], vocab: Vocab) -> str:
    """
    Convert ids back to text, dropping pad/bos/eos.

    Raises:
        IndexError: If an id is outside [0, V).
    """
    pieces = []
    for i in ids:
        i = int(i)
        if i < 0 or i >= vocab.size:
            raise IndexError(f"token id {i} outside vocabulary of size {vocab.size}")
        if i in (PAD_ID, BOS_ID, EOS_ID):
            continue
        pieces.append(Configuration.UNK_GLYPH if i == UNK_ID else vocab.tokens[i])
    return "".join(pieces)


def save_vocab(vocab: Vocab, path: Path) -> None:
    """
    Write the vocabulary as a line-oriented ASCII text file.

    Layout: a header line, a sizes line, the special names, the merges in
    training order (two JSON strings separated by a tab), then the token table.
    """
    lines = [
        _HEADER,
        f"vocab_size {vocab.size} merges {len(vocab.merges)} max_len {vocab.max_len}",
        "specials " + " ".join(SPECIAL_TOKENS),
        "[merges]",
    ]
    lines += [f"{json.dumps(a)}\t{json.dumps(b)}" for a, b in vocab.merges]
    lines.append("[tokens]")
    lines += [json.dumps(tok) for tok in vocab.tokens]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii", newline="\n")


def load_vocab(path: Path) -> Vocab:
    """
    Read a vocabulary written by `save_vocab`.

    Raises:
        ContractError: If the header or section sizes do not match.
    """
    lines = Path(path).read_text(encoding="ascii").split("\n")
    if not lines or lines[0] != _HEADER:
        raise ContractError(f"{path} is not a vocabulary file")
    sizes = lines[1].split()
    n_tokens, n_merges, max_len = int(sizes[1]), int(sizes[3]), int(sizes[5])
    start = lines.index("[merges]") + 1
    merges = []
    for line in lines[start : start + n_merges]:
        a, b = line.split("\t")
        merges.append((json.loads(a), json.loads(b)))
    start = lines.index("[tokens]") + 1
    tokens = [json.loads(line) for line in lines[start : start + n_tokens]]
    if len(tokens) != n_tokens or len(merges) != n_merges:
        raise ContractError(f"{path} is truncated")
    return Vocab(tokens=tokens, merges=merges, max_len=max_len)
