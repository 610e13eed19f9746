"""
Token recycling: an adjacency matrix of recent top successors per token,
expanded into a draft tree by breadth-first search over a static template.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .draft import DraftCandidate
from .model import forward_tree
from .tree import DraftTree

PAD = -1
DEFAULT_WIDTH = 8
DEFAULT_BRANCHING = (4, 2, 2, 1, 1, 1)
DEFAULT_MAX_NODES = 64


class AdjacencyMatrix:
    """``rows[a]`` holds the ``width`` most likely successors of token ``a``
    seen at its latest verification; unfilled slots hold :data:`PAD`."""

    def __init__(self, vocab_size: int, width: int = DEFAULT_WIDTH):
        self.vocab_size = vocab_size
        self.width = width
        self.rows = np.full((vocab_size, width), PAD, dtype=np.int64)
        self.writes = 0

    @property
    def warm(self) -> bool:
        return self.writes > 0

    def row(self, token: int) -> np.ndarray:
        return self.rows[token]

    def set_row(self, token: int, successors: Sequence[int]) -> None:
        succ = list(successors)[: self.width]
        self.rows[token] = PAD
        self.rows[token, : len(succ)] = succ
        self.writes += 1

    def top_successors(self, p: np.ndarray) -> np.ndarray:
        """Indices of the ``width`` largest positive entries, ties to the smaller id."""
        order = np.argsort(-p, kind="stable")[: self.width]
        return order[p[order] > 0]


def update_matrix(matrix: AdjacencyMatrix, step_outputs: Mapping[int, Sequence[int]]) -> None:
    """Replace each listed row wholesale."""
    for token, successors in step_outputs.items():
        matrix.set_row(int(token), successors)


def refresh_from_pass(matrix: AdjacencyMatrix, tokens: Sequence[int], dists: np.ndarray) -> None:
    """Write the top successors of every verified node into its token's row.

    Nodes are processed in order, so for a token appearing at several nodes
    the last one wins.
    """
    for tok, p in zip(tokens, dists):
        matrix.set_row(int(tok), matrix.top_successors(p))


@dataclass(frozen=True)
class TemplateNode:
    depth: int  # 1 for children of the root
    parent: int  # template index, -1 for the root
    rank: int  # slot in the parent's matrix row


@dataclass(frozen=True)
class StaticTreeTemplate:
    nodes: tuple[TemplateNode, ...]

    @classmethod
    def from_branching(cls, branching: Sequence[int] = DEFAULT_BRANCHING,
                       max_nodes: int = DEFAULT_MAX_NODES) -> "StaticTreeTemplate":
        """Expand per-depth branching factors breadth-first, capped at ``max_nodes``."""
        nodes: list[TemplateNode] = []
        frontier = [-1]
        for depth, b in enumerate(branching, start=1):
            nxt = []
            for parent in frontier:
                for rank in range(b):
                    if len(nodes) >= max_nodes:
                        return cls(tuple(nodes))
                    nodes.append(TemplateNode(depth, parent, rank))
                    nxt.append(len(nodes) - 1)
            frontier = nxt
        return cls(tuple(nodes))

    def __post_init__(self):
        for i, n in enumerate(self.nodes):
            if n.parent >= i:
                raise ValueError("template parents must precede children")

    def __len__(self) -> int:
        return len(self.nodes)


DEFAULT_TEMPLATE = StaticTreeTemplate.from_branching()


def bfs_draft(matrix: AdjacencyMatrix, root: int,
              template: StaticTreeTemplate = DEFAULT_TEMPLATE) -> list[DraftCandidate]:
    """Fill the template from ``root`` and return its root-to-leaf paths.

    Node token = ``row(parent token)[rank]``; a padding slot prunes the node
    and its whole subtree.
    """
    toks: list[int | None] = []
    has_child = [False] * len(template)
    for node in template.nodes:
        ptok = root if node.parent < 0 else toks[node.parent]
        tok = None
        if ptok is not None:
            v = int(matrix.rows[ptok, node.rank]) if node.rank < matrix.width else PAD
            if v != PAD:
                tok = v
                if node.parent >= 0:
                    has_child[node.parent] = True
        toks.append(tok)

    out = []
    for i, node in enumerate(template.nodes):
        if toks[i] is None or has_child[i]:
            continue
        path = []
        j = i
        while j >= 0:
            path.append(toks[j])
            j = template.nodes[j].parent
        out.append(DraftCandidate(tuple(reversed(path)), "recycling", {"template_node": i}))
    return out


def prewarm(matrix: AdjacencyMatrix, model, context: Sequence[int], counter=None) -> None:
    """Teacher-force the model over ``context`` once and refresh every row."""
    n = len(context)
    chain = DraftTree(list(context), list(range(-1, n - 1)), np.tril(np.ones((n, n), dtype=bool)),
                      [list(range(n))], ["prompt"] * n)
    dists = forward_tree(model, [], chain, counter)
    refresh_from_pass(matrix, context, dists)
