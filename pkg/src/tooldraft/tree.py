"""
Packing draft candidates into one flattened tree with an ancestor-closure mask.

Nodes are stored in topological order (``parent[i] < i``); draft roots have
parent ``-1`` and hang off the last accepted token, which the verifier
prepends as the real root. ``mask[i, j]`` is true iff ``j == i`` or ``j`` is an
ancestor of ``i``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .draft import DEFAULT_BUDGET, DraftCandidate
from .errors import EmptyDraftSet

ROOT = -1

_SOURCE_RANK = {
    "retrieval": 0,
    "schema_tool_name": 1,
    "schema_param_name": 1,
    "schema_fill": 1,
    "context_pld": 2,
    "recycling": 3,
}


def closure_mask(parent: Sequence[int]) -> np.ndarray:
    """Reflexive-transitive closure of the parent relation."""
    n = len(parent)
    mask = np.zeros((n, n), dtype=bool)
    for i, p in enumerate(parent):
        if p >= i:
            raise ValueError("parents must precede children")
        if p != ROOT:
            mask[i] = mask[p]
        mask[i, i] = True
    return mask


@dataclass
class DraftTree:
    tokens: list[int]
    parent: list[int]
    mask: np.ndarray
    leaf_paths: list[list[int]]  # node indices per kept candidate
    source_of: list[str]
    candidates: list[DraftCandidate] = field(default_factory=list)
    trimmed: list[DraftCandidate] = field(default_factory=list)
    _children: list[dict[int, int]] | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def children(self) -> list[dict[int, int]]:
        """Per node, ``token -> child index``; index ``len(self)`` holds the roots."""
        if self._children is None:
            kids: list[dict[int, int]] = [dict() for _ in range(len(self.tokens) + 1)]
            for i, p in enumerate(self.parent):
                slot = len(self.tokens) if p == ROOT else p
                if self.tokens[i] in kids[slot]:
                    raise ValueError("sibling nodes share a token")
                kids[slot][self.tokens[i]] = i
            self._children = kids
        return self._children

    def depth(self, i: int) -> int:
        return int(self.mask[i].sum())

    def path_tokens(self, i: int) -> list[int]:
        return [self.tokens[j] for j in np.flatnonzero(self.mask[i])]

    def rooted(self, root_token: int) -> "DraftTree":
        """Same tree with ``root_token`` prepended as node 0."""
        n = len(self.tokens)
        parent = [ROOT] + [0 if p == ROOT else p + 1 for p in self.parent]
        mask = np.zeros((n + 1, n + 1), dtype=bool)
        mask[:, 0] = True
        mask[1:, 1:] = self.mask
        return DraftTree(
            tokens=[int(root_token)] + list(self.tokens),
            parent=parent,
            mask=mask,
            leaf_paths=[[0] + [j + 1 for j in path] for path in self.leaf_paths],
            source_of=["root"] + list(self.source_of),
        )

    def dump(self, tokenizer=None) -> str:
        """Indented text rendering with per-node source labels."""
        lines = []
        kids = self.children

        def show(tok):
            return repr(tokenizer.token_str(tok)) if tokenizer is not None else str(tok)

        stack = [(i, 0) for i in reversed(list(kids[len(self.tokens)].values()))]
        while stack:
            i, d = stack.pop()
            lines.append(f"{'  ' * d}{show(self.tokens[i])} [{self.source_of[i]}]")
            stack.extend((c, d + 1) for c in reversed(list(kids[i].values())))
        return "\n".join(lines)


def single_node(token: int, source: str = "root") -> DraftTree:
    return DraftTree([int(token)], [ROOT], np.ones((1, 1), dtype=bool), [[0]], [source])


def priority_order(candidates: Sequence[DraftCandidate]) -> list[DraftCandidate]:
    """Retrieval, then schema, then context lookup, then recycling; input order within a source class."""
    ranked = sorted(enumerate(candidates), key=lambda ic: (_SOURCE_RANK[ic[1].source], ic[0]))
    return [c for _, c in ranked]


def pack(candidates: Sequence[DraftCandidate], budget: int = DEFAULT_BUDGET) -> DraftTree:
    """Merge candidates into a trie of at most ``budget`` nodes.

    Candidates are inserted by priority; one that no longer fits is cut to the
    remaining budget (recorded in ``trimmed``), and candidates after an
    exhausted budget are dropped (also recorded).
    """
    if not candidates:
        raise EmptyDraftSet("nothing to pack")
    seqs = [c.tokens for c in candidates]
    if len(set(seqs)) != len(seqs):
        raise ValueError("draft candidates must be pairwise distinct")

    tokens: list[int] = []
    parent: list[int] = []
    source_of: list[str] = []
    rows: list[np.ndarray] = []
    kids: list[dict[int, int]] = [dict()]  # slot 0 = virtual root, node i -> slot i + 1
    leaf_paths: list[list[int]] = []
    kept: list[DraftCandidate] = []
    trimmed: list[DraftCandidate] = []

    for cand in priority_order(candidates):
        slot = 0
        path: list[int] = []
        cut = False
        for tok in cand.tokens:
            node = kids[slot].get(tok)
            if node is None:
                if len(tokens) >= budget:
                    cut = True
                    break
                node = len(tokens)
                p = slot - 1
                tokens.append(tok)
                parent.append(p)
                source_of.append(cand.source)
                row = np.zeros(budget, dtype=bool) if p == ROOT else rows[p].copy()
                row[node] = True
                rows.append(row)
                kids[slot][tok] = node
                kids.append(dict())
            path.append(node)
            slot = node + 1
        if cut:
            trimmed.append(cand)
        if path:
            leaf_paths.append(path)
            kept.append(cand)

    n = len(tokens)
    mask = np.array([r[:n] for r in rows], dtype=bool).reshape(n, n)
    return DraftTree(tokens, parent, mask, leaf_paths, source_of, kept, trimmed)


def dynamic_tree(candidates: Sequence[DraftCandidate], budget: int = DEFAULT_BUDGET) -> DraftTree:
    return pack(candidates, budget)


def static_tree(tree: DraftTree) -> DraftTree:
    """Relabel a recycling tree into breadth-first node order."""
    n = len(tree.tokens)
    if n == 0:
        return tree
    kids = tree.children
    order: list[int] = []
    queue = deque(kids[n].values())
    while queue:
        i = queue.popleft()
        order.append(i)
        queue.extend(kids[i].values())
    new_index = {old: new for new, old in enumerate(order)}
    parent = [ROOT if tree.parent[o] == ROOT else new_index[tree.parent[o]] for o in order]
    return DraftTree(
        tokens=[tree.tokens[o] for o in order],
        parent=parent,
        mask=closure_mask(parent),
        leaf_paths=[[new_index[j] for j in path] for path in tree.leaf_paths],
        source_of=[tree.source_of[o] for o in order],
        candidates=list(tree.candidates),
        trimmed=list(tree.trimmed),
    )
