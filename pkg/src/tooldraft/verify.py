"""
One-pass verification of a draft tree.

Drafts are hard token proposals, so acceptance compares each proposed child
against the target's own choice at that position: the argmax in greedy mode,
a single sample in sampled mode. The walk stops at the first position whose
choice is not among the children, and that choice becomes the correction
token. Every emitted token is therefore exactly what the target would have
produced, which keeps sampling lossless.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import ForwardCounter, TargetModel, forward_tree
from .tree import DraftTree, single_node

GREEDY = "greedy"
SAMPLED = "sampled"


@dataclass
class AcceptanceResult:
    accepted: list[int]
    correction: int
    accepted_leaf: int | None = None
    per_state_lengths: dict[str, int] = field(default_factory=dict)
    # draft-tree node indices of the accepted tokens (unrooted numbering)
    nodes: list[int] = field(default_factory=list)
    # rooted tree and its distributions, kept for matrix refresh
    rooted: DraftTree | None = None
    distributions: np.ndarray | None = None

    @property
    def emitted(self) -> list[int]:
        return self.accepted + [self.correction]


def sample_token(p: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from an unnormalized non-negative vector."""
    cdf = np.cumsum(p)
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(i, len(p) - 1)


def choose(p: np.ndarray, mode: str, rng: np.random.Generator | None) -> int:
    if mode == GREEDY:
        return int(np.argmax(p))
    if mode == SAMPLED:
        if rng is None:
            raise ValueError("sampled mode needs an rng")
        return sample_token(p, rng)
    raise ValueError(f"unknown mode {mode!r}")


def accept_walk(rooted: DraftTree, dists: np.ndarray, mode: str,
                rng: np.random.Generator | None = None) -> tuple[list[int], list[int], int]:
    """Walk a rooted tree against its distributions.

    Returns (accepted tokens, accepted node indices in rooted numbering,
    correction token).
    """
    kids = rooted.children
    cur = 0
    accepted: list[int] = []
    nodes: list[int] = []
    while True:
        x = choose(dists[cur], mode, rng)
        nxt = kids[cur].get(x)
        if nxt is None:
            return accepted, nodes, x
        accepted.append(x)
        nodes.append(nxt)
        cur = nxt


def _rooted(tree: DraftTree, root_token: int) -> DraftTree:
    cache = getattr(tree, "_rooted_cache", None)
    if cache is not None and cache[0] == root_token:
        return cache[1]
    r = tree.rooted(root_token)
    tree._rooted_cache = (root_token, r)
    return r


def verify_and_accept(
    model: TargetModel,
    context: Sequence[int],
    tree: DraftTree,
    mode: str = GREEDY,
    rng: np.random.Generator | None = None,
    counter: ForwardCounter | None = None,
) -> AcceptanceResult:
    """Verify ``tree`` (drafted after ``context``) with exactly one forward pass.

    The last context token is prepended as the tree root so the same pass
    yields the distribution for the first draft position as well as one per
    draft node.
    """
    if len(context) == 0:
        raise ValueError("verification needs at least one context token")
    rooted = _rooted(tree, context[-1])
    dists = forward_tree(model, context[:-1], rooted, counter)
    accepted, nodes, correction = accept_walk(rooted, dists, mode, rng)
    leaf = None
    if nodes:
        last = nodes[-1]
        for ci, path in enumerate(rooted.leaf_paths):
            if path[-1] == last:
                leaf = ci
                break
    return AcceptanceResult(
        accepted=accepted,
        correction=correction,
        accepted_leaf=leaf,
        nodes=[j - 1 for j in nodes],
        rooted=rooted,
        distributions=dists,
    )


def vanilla_step(
    model: TargetModel,
    context: Sequence[int],
    mode: str = GREEDY,
    rng: np.random.Generator | None = None,
    counter: ForwardCounter | None = None,
) -> int:
    """One forward pass, one token."""
    if len(context) == 0:
        raise ValueError("decoding needs at least one context token")
    root = single_node(context[-1])
    dists = forward_tree(model, context[:-1], root, counter)
    return choose(dists[0], mode, rng)
