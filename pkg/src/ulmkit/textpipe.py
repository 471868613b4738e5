"""Text preprocessing, vocabulary construction, and numericalization.

The tokenizer is rule-based and marker-driven: casing and character/word
repetition are rewritten into reserved marker tokens (prefix ``xx``) so the
downstream language model sees a fully lowercase stream without losing that
information. Rule order is fixed: character-repeat, word-repeat, case
markers, then whitespace/punctuation splitting.
"""

from __future__ import annotations

import csv
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

# Reserved tokens, lowest ids first. UNK and PAD ids are part of the
# checkpoint format and must never move.
UNK = "xxunk"
PAD = "xxpad"
BOS = "xxbos"
UP = "xxup"
MAJ = "xxmaj"
REP = "xxrep"
WREP = "xxwrep"
SPECIALS = (UNK, PAD, BOS, UP, MAJ, REP, WREP)

UNK_ID = 0
PAD_ID = 1
BOS_ID = 2

_CHAR_REP = re.compile(r"(\S)\1{2,}")
_WORD_OR_PUNCT = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class CorpusFormatError(ValueError):
    """Raised when an input file violates its documented format."""


def _expand_char_repeats(text: str) -> str:
    def sub(m: re.Match) -> str:
        ch = m.group(1)
        return f" {REP} {len(m.group(0))} {ch} "

    return _CHAR_REP.sub(sub, text)


def _collapse_word_repeats(words: list[str]) -> list[str]:
    out: list[str] = []
    i = 0
    while i < len(words):
        j = i
        while j < len(words) and words[j] == words[i]:
            j += 1
        run = j - i
        if run >= 3:
            out.extend([WREP, str(run), words[i]])
        else:
            out.extend(words[i:j])
        i = j
    return out


def _mark_case(word: str) -> list[str]:
    alpha = [c for c in word if c.isalpha()]
    if len(alpha) >= 2 and all(c.isupper() for c in alpha):
        return [UP, word.lower()]
    if alpha and word and word[0].isupper() and all(not c.isupper() for c in alpha[1:]):
        return [MAJ, word.lower()]
    return [word]


def preprocess(text: str) -> list[str]:
    """Tokenize raw text into marker-annotated tokens.

    Always begins with the beginning-of-stream marker; deterministic and
    stateless. Empty input yields ``[BOS]`` alone.
    """
    words = _expand_char_repeats(text).split()
    words = _collapse_word_repeats(words)
    tokens = [BOS]
    for word in words:
        for marked in _mark_case(word):
            if marked in SPECIALS:
                tokens.append(marked)
            else:
                tokens.extend(_WORD_OR_PUNCT.findall(marked))
    return tokens


@dataclass
class Vocabulary:
    """Frequency-ranked token<->id map with reserved specials at the bottom."""

    id_to_token: list[str]
    max_size: int = 60000
    min_freq: int = 1
    token_to_id: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for token in self.id_to_token:
                f.write(token + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            tokens = [line.rstrip("\n") for line in f]
        return cls(tokens, max_size=max(len(tokens), len(SPECIALS) + 1))


def build_vocab(tokens, max_size: int = 60000, min_freq: int = 1) -> Vocabulary:
    """Build a capped vocabulary from a token stream.

    Corpus tokens are admitted in non-increasing frequency order; ties break
    by first occurrence (Counter preserves insertion order, and the sort is
    stable). Reserved tokens never count as corpus tokens.
    """
    if max_size <= len(SPECIALS):
        raise ValueError(f"max_size must exceed {len(SPECIALS)} reserved tokens, got {max_size}")
    if min_freq < 1:
        raise ValueError(f"min_freq must be >= 1, got {min_freq}")
    counts = Counter(t for t in tokens if t not in SPECIALS)
    ranked = sorted(counts.items(), key=lambda kv: -kv[1])
    kept = [t for t, c in ranked if c >= min_freq][: max_size - len(SPECIALS)]
    return Vocabulary(list(SPECIALS) + kept, max_size=max_size, min_freq=min_freq)


def numericalize(tokens: list[str], vocab: Vocabulary) -> list[int]:
    """Map tokens to ids; unknown surface forms map to the unknown id."""
    return [vocab.token_to_id.get(t, UNK_ID) for t in tokens]


def denumericalize(ids: list[int], vocab: Vocabulary) -> list[str]:
    return [vocab.id_to_token[i] for i in ids]


@dataclass
class NumericalizedCorpus:
    """Id sequences plus optional binary labels for one data split."""

    streams: list[list[int]]
    labels: list[int] | None = None
    split_tag: str = "train"

    def __post_init__(self):
        if self.labels is not None:
            if len(self.labels) != len(self.streams):
                raise ValueError(
                    f"{len(self.labels)} labels for {len(self.streams)} streams"
                )
            bad = [l for l in self.labels if l not in (0, 1)]
            if bad:
                raise ValueError(f"labels must be 0 or 1, got {bad[0]}")

    def __len__(self) -> int:
        return len(self.streams)


def load_labeled_csv(path) -> list[tuple[str, int]]:
    """Load (text, label) rows from a UTF-8 CSV with header ``text,label``.

    Labels must be 0 or 1; any malformed row is reported with its line number.
    """
    records: list[tuple[str, int]] = []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise CorpusFormatError(f"{path}: empty file, expected header 'text,label'")
        if [h.strip() for h in header] != ["text", "label"]:
            raise CorpusFormatError(f"{path}: line 1: expected header 'text,label', got {header!r}")
        for row in reader:
            line = reader.line_num
            if len(row) != 2:
                raise CorpusFormatError(f"{path}: line {line}: expected 2 fields, got {len(row)}")
            text, label = row
            if label.strip() not in ("0", "1"):
                raise CorpusFormatError(f"{path}: line {line}: label must be 0 or 1, got {label!r}")
            records.append((text, int(label)))
    return records


def load_corpus_lines(path) -> list[str]:
    """Load an unlabeled corpus: UTF-8 plain text, one document per line."""
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f if line.strip()]


def split_corpus(records: list, fractions, seed: int) -> tuple[list, ...]:
    """Randomly partition records into len(fractions) disjoint splits.

    Split sizes come from cumulative rounding, so they are exhaustive and
    exact for clean fractions (100 records at (0.9, 0.1) gives 90/10).
    Deterministic for a fixed seed.
    """
    fractions = list(fractions)
    if any(f <= 0 for f in fractions):
        raise ValueError(f"fractions must be positive, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    n = len(records)
    order = np.random.default_rng(seed).permutation(n)
    bounds = [0] + [round(sum(fractions[: i + 1]) * n) for i in range(len(fractions))]
    bounds[-1] = n
    return tuple(
        [records[k] for k in order[bounds[i] : bounds[i + 1]]] for i in range(len(fractions))
    )
