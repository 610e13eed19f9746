"""
Datastore of completed tool calls, cosine top-k retrieval, suffix matching
and continuation extraction.
"""

from __future__ import annotations

import json
import threading
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .draft import DraftCandidate
from .errors import DimensionMismatch, NotAdherent
from .schema import check_format_adherence


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 10
    suffix_lengths: tuple[int, ...] = (7, 6, 5)
    continuation_lengths: tuple[int, ...] = (32, 16, 8, 8)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be positive")
        sl = tuple(self.suffix_lengths)
        if not sl or any(a <= b for a, b in zip(sl, sl[1:])) or sl[-1] < 1:
            raise ValueError("suffix_lengths must be positive and strictly descending")
        if not self.continuation_lengths or min(self.continuation_lengths) < 1:
            raise ValueError("continuation_lengths must be non-empty and positive")
        object.__setattr__(self, "suffix_lengths", sl)
        object.__setattr__(self, "continuation_lengths", tuple(self.continuation_lengths))

    @property
    def min_suffix(self) -> int:
        return self.suffix_lengths[-1]


@dataclass(frozen=True)
class DatastoreEntry:
    id: int
    h: np.ndarray
    y: np.ndarray
    created_at: int

    def nbytes(self) -> int:
        return self.h.nbytes + self.y.nbytes


class Match(NamedTuple):
    entry_id: int
    m: int  # continuation starts at y'[m]
    L: int
    sequence: tuple[int, ...]


class Datastore:
    """Bounded store of (question embedding, tool-call tokens) pairs.

    Args:
        dim: Embedding dimension; vectors of another size are rejected.
        capacity: Maximum entry count, oldest evicted first. ``None`` = unbounded.
        decode: Token-to-text function used by the adherence gate on insert.
    """

    def __init__(self, dim: int = 256, capacity: int | None = None,
                 decode: Callable[[Sequence[int]], str] | None = None):
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be positive")
        self.dim = dim
        self.capacity = capacity
        self.decode = decode
        self._entries: deque[DatastoreEntry] = deque()
        self._next_id = 0
        self._clock = 0
        self._lock = threading.Lock()
        self._matrix: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> list[DatastoreEntry]:
        return list(self._entries)

    def get(self, entry_id: int) -> DatastoreEntry:
        for e in self._entries:
            if e.id == entry_id:
                return e
        raise KeyError(entry_id)

    def _check_h(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=np.float32)
        if h.shape != (self.dim,):
            raise DimensionMismatch(f"expected a vector of dimension {self.dim}, got shape {h.shape}")
        norm = float(np.linalg.norm(h))
        if abs(norm - 1.0) > 1e-5:
            raise ValueError(f"embedding must be unit-norm (norm {norm})")
        return h

    def _append(self, entry_id: int, h: np.ndarray, y: np.ndarray) -> None:
        self._entries.append(DatastoreEntry(entry_id, h, y, self._clock))
        self._clock += 1
        self._next_id = max(self._next_id, entry_id + 1)
        if self.capacity is not None:
            while len(self._entries) > self.capacity:
                self._entries.popleft()
        self._matrix = None

    def insert(self, h, y: Sequence[int]) -> int:
        if len(y) == 0:
            raise NotAdherent("empty tool call")
        if self.decode is None:
            raise ValueError("datastore has no decoder for the adherence gate")
        report = check_format_adherence(self.decode(list(y)))
        if not report.adherent:
            raise NotAdherent(f"tool call is not adherent ({report.violation_kind})")
        h = self._check_h(h)
        with self._lock:
            entry_id = self._next_id
            self._append(entry_id, h, np.asarray(y, dtype=np.int32))
        return entry_id

    def matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """(ids, stacked embeddings) of the current entries."""
        with self._lock:
            if self._matrix is None:
                if self._entries:
                    self._matrix = np.stack([e.h for e in self._entries])
                else:
                    self._matrix = np.zeros((0, self.dim), dtype=np.float32)
            ids = np.array([e.id for e in self._entries], dtype=np.int64)
            return ids, self._matrix

    def snapshot(self, ids: Iterable[int]) -> list[tuple[int, tuple[int, ...]]]:
        """Immutable (id, tokens) view of the given entries, in the given order."""
        by_id = {e.id: e for e in self._entries}
        return [(i, tuple(int(t) for t in by_id[i].y)) for i in ids]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for e in self._entries:
                f.write(json.dumps({"id": e.id, "h": [float(x) for x in e.h], "y": [int(t) for t in e.y]}) + "\n")

    @classmethod
    def load(cls, path: str | Path, dim: int = 256, capacity: int | None = None,
             decode: Callable[[Sequence[int]], str] | None = None) -> "Datastore":
        store = cls(dim=dim, capacity=capacity, decode=decode)
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                h = np.asarray(rec["h"], dtype=np.float32)
                if h.shape != (dim,):
                    raise DimensionMismatch(f"line {lineno}: vector dimension {h.size}, expected {dim}")
                y = np.asarray(rec["y"], dtype=np.int32)
                if y.size == 0:
                    raise ValueError(f"line {lineno}: empty tool call")
                store._append(int(rec["id"]), h, y)
        return store


def insert(store: Datastore, h, y: Sequence[int]) -> int:
    return store.insert(h, y)


def topk(h_query, store: Datastore, k: int) -> list[int]:
    """Ids of the ``k`` entries most cosine-similar to ``h_query``.

    Equal similarities go to the more recent (larger) id.
    """
    if k < 1:
        raise ValueError("k must be positive")
    ids, H = store.matrix()
    if len(ids) == 0:
        return []
    sims = H.astype(np.float64) @ np.asarray(h_query, dtype=np.float64)
    order = np.lexsort((-ids, -sims))
    return [int(i) for i in ids[order[:k]]]


def suffix_match(generated: Sequence[int], candidates: Sequence[tuple[int, Sequence[int]]],
                 config: RetrievalConfig = RetrievalConfig()) -> list[Match]:
    """Positions where a suffix of ``generated`` recurs in each candidate.

    For each candidate the suffix lengths are tried longest first; the first
    length found anywhere yields all of its positions, earliest first.
    """
    out: list[Match] = []
    gen = tuple(generated)
    for entry_id, y in candidates:
        y = tuple(y)
        out.extend(_match_one(entry_id, gen, y, config.suffix_lengths, len(y)))
    return out


def _match_one(entry_id: int, gen: tuple[int, ...], y: tuple[int, ...],
               lengths: Sequence[int], last_m: int) -> list[Match]:
    for L in lengths:
        if L > len(gen) or L > len(y):
            continue
        suffix = gen[-L:]
        first = suffix[0]
        hits = [m for m in range(L, last_m + 1) if y[m - L] == first and y[m - L:m] == suffix]
        if hits:
            return [Match(entry_id, m, L, y) for m in hits]
    return []


def extract_continuations(matches: Sequence[Match],
                          config: RetrievalConfig = RetrievalConfig(),
                          source: str = "retrieval") -> list[DraftCandidate]:
    """Cut the next ``n`` tokens after each match, following the length schedule.

    Matches with nothing after them, or repeating an earlier continuation, do
    not use up a schedule slot.
    """
    out: list[DraftCandidate] = []
    seen: set[tuple[int, ...]] = set()
    schedule = config.continuation_lengths
    for match in matches:
        if len(out) == len(schedule):
            break
        n = schedule[len(out)]
        cont = tuple(match.sequence[match.m:match.m + n])
        if not cont or cont in seen:
            continue
        seen.add(cont)
        out.append(DraftCandidate(cont, source, {"entry": match.entry_id, "m": match.m, "L": match.L}))
    return out


def context_match(sequence: Sequence[int], config: RetrievalConfig = RetrievalConfig()) -> list[DraftCandidate]:
    """Prompt-lookup drafting: suffix-match ``sequence`` against itself.

    The trailing occurrence (the suffix itself) is excluded since it has no
    continuation.
    """
    seq = tuple(sequence)
    matches = _match_one(-1, seq, seq, config.suffix_lengths, len(seq) - 1)
    return extract_continuations(matches, config, source="context_pld")
