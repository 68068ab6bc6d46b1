"""Corpus ingestion, vocabulary construction, tokenization, and batching.

Tokenization is whitespace-based on purpose: teacher and student must share
one vocabulary, and a word-level vocab preserves that property at desk scale
without dragging in subword training.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import DataError

PAD_ID = 0
UNK_ID = 1
BOS_ID = 2
EOS_ID = 3
SPECIAL_TOKENS = ("<pad>", "<unk>", "<bos>", "<eos>")


@dataclass
class Vocab:
    """Token table with fixed special ids PAD=0, UNK=1, BOS=2, EOS=3."""

    token_to_id: dict[str, int]
    id_to_token: list[str]
    lowercase: bool = False

    def __len__(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        if self.lowercase:
            token = token.lower()
        return self.token_to_id.get(token, UNK_ID)

    def save(self, path) -> None:
        """One token per line, line number == id, specials first."""
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.id_to_token:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path, lowercase: bool = False) -> "Vocab":
        with open(path, "r", encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        while tokens and tokens[-1] == "":
            tokens.pop()
        if tuple(tokens[:4]) != SPECIAL_TOKENS:
            raise DataError(f"vocab file {path} does not start with the special tokens")
        return cls(
            token_to_id={t: i for i, t in enumerate(tokens)},
            id_to_token=tokens,
            lowercase=lowercase,
        )


@dataclass
class TokenBatch:
    """A rectangular id matrix plus its PAD mask (True = real token)."""

    ids: np.ndarray  # int64 [batch, seq_len]
    attention_mask: np.ndarray  # bool [batch, seq_len]

    def __post_init__(self):
        if self.ids.shape != self.attention_mask.shape:
            raise DataError("ids and attention_mask shapes differ")
        if not self.attention_mask.any(axis=1).all():
            raise DataError("every batch row needs at least one real token")

    @property
    def batch_size(self) -> int:
        return self.ids.shape[0]

    @property
    def seq_len(self) -> int:
        return self.ids.shape[1]


def _tokenize(line: str, lowercase: bool) -> list[str]:
    if lowercase:
        line = line.lower()
    return line.split()


def build_vocab(corpus_path, max_size: int, lowercase: bool = False) -> Vocab:
    """Frequency-ranked whitespace vocabulary, ties broken lexicographically.

    ``max_size`` counts the 4 specials; ``max_size == 4`` yields a vocab where
    every corpus token encodes to UNK.
    """
    if max_size < 4:
        raise DataError(f"vocab size must be at least 4 (the specials), got {max_size}")
    counts: Counter[str] = Counter()
    with open(corpus_path, "r", encoding="utf-8") as fh:
        for line in fh:
            counts.update(_tokenize(line, lowercase))
    if not counts:
        raise DataError(f"corpus {corpus_path} contains no tokens")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[: max_size - 4]]
    id_to_token = list(SPECIAL_TOKENS) + kept
    return Vocab(
        token_to_id={t: i for i, t in enumerate(id_to_token)},
        id_to_token=id_to_token,
        lowercase=lowercase,
    )


def encode(vocab: Vocab, text: str, seq_len: int) -> tuple[np.ndarray, np.ndarray]:
    """BOS + tokens + EOS, truncated to ``seq_len`` (EOS kept last), PAD-extended."""
    if seq_len < 3:
        raise DataError(f"seq_len must be >= 3, got {seq_len}")
    tokens = _tokenize(text, vocab.lowercase)[: seq_len - 2]
    ids = [BOS_ID] + [vocab.lookup(t) for t in tokens] + [EOS_ID]
    n = len(ids)
    out = np.full(seq_len, PAD_ID, dtype=np.int64)
    out[:n] = ids
    mask = np.zeros(seq_len, dtype=bool)
    mask[:n] = True
    return out, mask


def decode(vocab: Vocab, ids) -> list[str]:
    """Tokens for the given ids, skipping specials; inverse of encode up to UNK/truncation."""
    out = []
    for i in np.asarray(ids).reshape(-1):
        if i in (PAD_ID, BOS_ID, EOS_ID):
            continue
        out.append(vocab.id_to_token[int(i)])
    return out


def read_lines(corpus_path) -> list[str]:
    """Non-empty lines of a UTF-8 corpus, in file order."""
    with open(corpus_path, "r", encoding="utf-8") as fh:
        lines = [line.strip() for line in fh]
    return [ln for ln in lines if ln]


def encode_lines(vocab: Vocab, lines: list[str], seq_len: int) -> TokenBatch:
    ids = np.empty((len(lines), seq_len), dtype=np.int64)
    mask = np.empty((len(lines), seq_len), dtype=bool)
    for r, line in enumerate(lines):
        ids[r], mask[r] = encode(vocab, line, seq_len)
    return TokenBatch(ids=ids, attention_mask=mask)


def batch_stream(
    corpus_path,
    vocab: Vocab,
    batch_size: int,
    seq_len: int,
    seed: int,
) -> Iterator[TokenBatch]:
    """Endless stream of shuffled batches; deterministic given (path, seed).

    Lines are reshuffled every epoch with seed ``seed + epoch`` so epochs do
    not repeat the same order.
    """
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    lines = read_lines(corpus_path)
    if not lines:
        raise DataError(f"corpus {corpus_path} has no non-empty lines")
    encoded = encode_lines(vocab, lines, seq_len)
    n = len(lines)
    epoch = 0
    buf_ids = np.empty((batch_size, seq_len), dtype=np.int64)
    buf_mask = np.empty((batch_size, seq_len), dtype=bool)
    filled = 0
    while True:
        order = np.random.default_rng(seed + epoch).permutation(n)
        for row in order:
            buf_ids[filled] = encoded.ids[row]
            buf_mask[filled] = encoded.attention_mask[row]
            filled += 1
            if filled == batch_size:
                yield TokenBatch(ids=buf_ids.copy(), attention_mask=buf_mask.copy())
                filled = 0
        epoch += 1


def fixed_batches(
    corpus_path, vocab: Vocab, batch_size: int, seq_len: int
) -> list[TokenBatch]:
    """One pass over the corpus in file order, last partial batch kept."""
    lines = read_lines(corpus_path)
    if not lines:
        raise DataError(f"corpus {corpus_path} has no non-empty lines")
    out = []
    for start in range(0, len(lines), batch_size):
        out.append(encode_lines(vocab, lines[start : start + batch_size], seq_len))
    return out
