"""
Toy word-piece tokenizer.

Text is split into pieces by a fixed regex: special markers, word pieces
(camel-case aware, optionally carrying one leading space), digit runs, and
single characters for everything else. Punctuation and JSON structural
characters are therefore always single tokens, which keeps tool-call
delimiters atomic. A piece missing from the vocabulary falls back to its
characters, so any string made of vocabulary characters round-trips.
"""

from __future__ import annotations

import re
import string
from typing import Iterable, Sequence

from .errors import UnknownSymbol

TOOL_CALL_OPEN = "<tool_call>"
TOOL_CALL_CLOSE = "</tool_call>"
EOS = "</s>"
SPECIAL_TOKENS = (EOS, TOOL_CALL_OPEN, TOOL_CALL_CLOSE)

_PIECE_RE = re.compile(
    "|".join(re.escape(s) for s in SPECIAL_TOKENS)
    + r"| ?[A-Z]?[a-z]+| ?[A-Z]+(?![a-z])| ?[0-9]+|\s|."
    ,
    re.DOTALL,
)

# printable ASCII minus vertical tab / form feed
BASE_CHARS = tuple(c for c in string.printable if c not in "\x0b\x0c")


def split_pieces(text: str) -> list[str]:
    return _PIECE_RE.findall(text)


class Tokenizer:
    """Maps text to token ids and back.

    Args:
        vocabulary: Ordered token strings. The special tokens are prepended
            when missing, so ``eos_id`` is always 0.
    """

    def __init__(self, vocabulary: Sequence[str]):
        vocab: list[str] = list(SPECIAL_TOKENS)
        seen = set(vocab)
        for tok in vocabulary:
            if tok and tok not in seen:
                vocab.append(tok)
                seen.add(tok)
        self.vocabulary: tuple[str, ...] = tuple(vocab)
        self._ids = {tok: i for i, tok in enumerate(self.vocabulary)}
        self.eos_id = self._ids[EOS]
        self.tool_call_open_id = self._ids[TOOL_CALL_OPEN]
        self.tool_call_close_id = self._ids[TOOL_CALL_CLOSE]

    @classmethod
    def from_texts(cls, texts: Iterable[str], extra_chars: str = "") -> "Tokenizer":
        """Build a vocabulary of base characters plus every piece seen in ``texts``."""
        pieces = set()
        chars = set(BASE_CHARS) | set(extra_chars)
        for text in texts:
            for piece in split_pieces(text):
                if piece in SPECIAL_TOKENS:
                    continue
                pieces.add(piece)
                chars.update(piece)
        words = sorted(p for p in pieces if len(p) > 1)
        return cls(sorted(chars) + words)

    def __len__(self) -> int:
        return len(self.vocabulary)

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    def token_id(self, token: str) -> int:
        return self._ids[token]

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        offset = 0
        for piece in split_pieces(text):
            tid = self._ids.get(piece)
            if tid is not None:
                ids.append(tid)
            else:
                for k, ch in enumerate(piece):
                    cid = self._ids.get(ch)
                    if cid is None:
                        raise UnknownSymbol(ch, offset + k)
                    ids.append(cid)
            offset += len(piece)
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        vocab = self.vocabulary
        return "".join(vocab[i] for i in ids)

    def token_str(self, token_id: int) -> str:
        return self.vocabulary[token_id]


def encode(text: str, tokenizer: Tokenizer) -> list[int]:
    return tokenizer.encode(text)


def decode(ids: Iterable[int], tokenizer: Tokenizer) -> str:
    return tokenizer.decode(ids)
