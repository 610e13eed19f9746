"""
Target-model and embedding interfaces plus the toy implementations used at
desk scale.

A target model answers one question: given a token sequence, what is the
next-token distribution? ``TargetModel.forward`` batches that question over a
flattened draft tree, where each node sees the context plus its own ancestor
path (read from the attention mask), exactly as tree attention would.
"""

from __future__ import annotations

import hashlib
from abc import ABC, abstractmethod
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyInput, MaskShapeMismatch
from .tokenizer import Tokenizer


class ForwardCounter:
    """Counts target-model invocations for one decode session."""

    def __init__(self) -> None:
        self.count = 0

    def tick(self) -> None:
        self.count += 1


class TargetModel(ABC):
    vocab_size: int

    @abstractmethod
    def next_distribution(self, sequence: Sequence[int]) -> np.ndarray:
        """Next-token distribution after ``sequence`` (shape ``(vocab_size,)``)."""

    def forward(self, context: Sequence[int], tokens: Sequence[int], mask: np.ndarray) -> np.ndarray:
        """One distribution per flattened node, shape ``(len(tokens), vocab_size)``.

        Node ``i`` is evaluated on ``context + tokens[ancestors(i)]`` where the
        ancestors (including ``i``) are the set bits of ``mask[i]``.
        """
        context = list(context)
        out = np.empty((len(tokens), self.vocab_size))
        for i in range(len(tokens)):
            path = [tokens[j] for j in np.flatnonzero(mask[i])]
            out[i] = self.next_distribution(context + path)
        return out


def forward_tree(model: TargetModel, context: Sequence[int], tree, counter: ForwardCounter | None = None) -> np.ndarray:
    """Run a single tree-masked forward pass of ``model`` over ``tree``."""
    n = len(tree.tokens)
    mask = np.asarray(tree.mask)
    if mask.shape != (n, n):
        raise MaskShapeMismatch(f"mask shape {mask.shape} does not match {n} flattened tokens")
    dists = model.forward(context, tree.tokens, mask)
    if counter is not None:
        counter.tick()
    return dists


def _point_mass(token: int, vocab_size: int) -> np.ndarray:
    p = np.zeros(vocab_size)
    p[token] = 1.0
    return p


class ScriptedModel(TargetModel):
    """Deterministic model that replays a gold continuation per prompt.

    The distribution after ``prompt + y`` is a point mass on ``gold[len(y)]``
    (end-of-sequence once the gold run is exhausted), whatever ``y`` holds.
    Sequences that do not start with a known prompt get a point mass on EOS.
    """

    def __init__(self, scripts: Mapping[Sequence[int], Sequence[int]], vocab_size: int, eos_id: int = 0):
        self.vocab_size = vocab_size
        self.eos_id = eos_id
        self._scripts = {tuple(k): tuple(v) for k, v in scripts.items()}
        self._lengths = sorted({len(k) for k in self._scripts})

    def _find(self, seq: Sequence[int]):
        for length in self._lengths:
            if length > len(seq):
                break
            gold = self._scripts.get(tuple(seq[:length]))
            if gold is not None:
                return length, gold
        return None

    def _token_at(self, found, total_len: int) -> int:
        if found is None:
            return self.eos_id
        length, gold = found
        pos = total_len - length
        return gold[pos] if 0 <= pos < len(gold) else self.eos_id

    def next_distribution(self, sequence: Sequence[int]) -> np.ndarray:
        return _point_mass(self._token_at(self._find(sequence), len(sequence)), self.vocab_size)

    def forward(self, context, tokens, mask):
        n = len(tokens)
        out = np.zeros((n, self.vocab_size))
        found = self._find(context)
        depths = mask.sum(axis=1)
        for i in range(n):
            total = len(context) + int(depths[i])
            if found is None:
                path = [tokens[j] for j in np.flatnonzero(mask[i])]
                tok = self._token_at(self._find(list(context) + path), total)
            else:
                tok = self._token_at(found, total)
            out[i, tok] = 1.0
        return out


class NgramModel(TargetModel):
    """Additively smoothed n-gram model.

    ``p(w | h) = (c(h, w) + alpha) / (c(h) + alpha * V)`` where ``h`` is the
    last ``order - 1`` tokens (fewer at the start of a sequence).
    """

    def __init__(
        self,
        sequences: Iterable[Sequence[int]],
        vocab_size: int,
        order: int = 3,
        alpha: float = 0.1,
    ):
        if order < 1:
            raise ValueError("order must be >= 1")
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        self.vocab_size = vocab_size
        self.order = order
        self.alpha = alpha
        counts: dict[tuple[int, ...], dict[int, int]] = defaultdict(lambda: defaultdict(int))
        for seq in sequences:
            seq = list(seq)
            for i, tok in enumerate(seq):
                if not 0 <= tok < vocab_size:
                    raise ValueError(f"token {tok} outside vocabulary")
                ctx = tuple(seq[max(0, i - order + 1):i])
                counts[ctx][tok] += 1
        self._counts = {ctx: dict(c) for ctx, c in counts.items()}
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    @classmethod
    def from_texts(cls, lines: Iterable[str], tokenizer: Tokenizer, order: int = 3, alpha: float = 0.1) -> "NgramModel":
        seqs = [tokenizer.encode(line) + [tokenizer.eos_id] for line in lines]
        return cls(seqs, tokenizer.vocab_size, order=order, alpha=alpha)

    @classmethod
    def from_file(cls, path: str | Path, tokenizer: Tokenizer, order: int = 3, alpha: float = 0.1) -> "NgramModel":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls.from_texts([ln for ln in lines if ln.strip()], tokenizer, order, alpha)

    def count(self, history: Sequence[int], token: int) -> int:
        return self._counts.get(tuple(history), {}).get(token, 0)

    def _conditional(self, ctx: tuple[int, ...]) -> np.ndarray:
        p = self._cache.get(ctx)
        if p is None:
            p = np.full(self.vocab_size, self.alpha)
            row = self._counts.get(ctx)
            total = 0
            if row:
                for tok, c in row.items():
                    p[tok] += c
                total = sum(row.values())
            p /= total + self.alpha * self.vocab_size
            p.flags.writeable = False
            self._cache[ctx] = p
        return p

    def _history(self, sequence: Sequence[int]) -> tuple[int, ...]:
        k = self.order - 1
        if k == 0:
            return ()
        return tuple(sequence[-k:])

    def next_distribution(self, sequence: Sequence[int]) -> np.ndarray:
        return self._conditional(self._history(sequence)).copy()

    def forward(self, context, tokens, mask):
        k = self.order - 1
        tail = list(context[-k:]) if k else []
        out = np.empty((len(tokens), self.vocab_size))
        for i in range(len(tokens)):
            path = [tokens[j] for j in np.flatnonzero(mask[i])[-k:]] if k else []
            hist = (tail + path)[-k:] if k else []
            out[i] = self._conditional(tuple(hist))
        return out


class EmbeddingProvider(ABC):
    dim: int

    @abstractmethod
    def embed(self, question: Sequence[int]) -> np.ndarray:
        ...


class HashedBagEmbedding(EmbeddingProvider):
    """Bag-of-tokens embedding: each token id is hashed to one coordinate."""

    def __init__(self, dim: int = 256, salt: bytes = b""):
        self.dim = dim
        self.salt = salt
        self._buckets: dict[int, int] = {}

    def bucket(self, token: int) -> int:
        b = self._buckets.get(token)
        if b is None:
            digest = hashlib.blake2b(self.salt + token.to_bytes(8, "little"), digest_size=8).digest()
            b = int.from_bytes(digest, "little") % self.dim
            self._buckets[token] = b
        return b

    def embed(self, question: Sequence[int]) -> np.ndarray:
        if len(question) == 0:
            raise EmptyInput("cannot embed an empty question")
        v = np.zeros(self.dim)
        for tok in question:
            v[self.bucket(int(tok))] += 1.0
        return v / np.linalg.norm(v)


def embed(question: Sequence[int], provider: EmbeddingProvider) -> np.ndarray:
    return provider.embed(question)
