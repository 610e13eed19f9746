"""Schema-aware draft candidates for the structural FSM states."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

from .errors import WrongState
from .fsm import Fsm, FsmState, Tag

SOURCES = ("schema_tool_name", "schema_param_name", "schema_fill", "retrieval", "recycling", "context_pld")
DEFAULT_BUDGET = 64


@dataclass(frozen=True)
class DraftCandidate:
    tokens: tuple[int, ...]
    source: str
    meta: dict[str, Any] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("draft candidate must be non-empty")
        if self.source not in SOURCES:
            raise ValueError(f"unknown draft source {self.source!r}")
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))


def dedupe(candidates: Sequence[DraftCandidate]) -> list[DraftCandidate]:
    """Drop repeated token sequences, keeping the first occurrence."""
    seen = set()
    out = []
    for c in candidates:
        if c.tokens not in seen:
            seen.add(c.tokens)
            out.append(c)
    return out


def _trie_size(seqs) -> int:
    return len({s[:i] for s in seqs for i in range(1, len(s) + 1)})


def draft_tool_names(fsm: Fsm, state: FsmState, budget: int = DEFAULT_BUDGET) -> list[DraftCandidate]:
    """One candidate per tool (up to the fsm's candidate cap), in schema order.

    Each candidate finishes the scaffold head, the tool name and the name
    suffix. While the packed tree stays within ``budget``, candidates are
    extended through their tool's first parameter key, in schema order.
    """
    if state.tag is not Tag.TOOL_NAME:
        raise WrongState(f"tool-name drafting needs ToolName, not {state.tag.value}")
    runs = [r for r in fsm.legal_continuations(state).runs if r.tokens]
    seqs = [r.tokens[:budget] for r in runs]
    for i, r in enumerate(runs):
        longer = seqs[:i] + [r.tokens + fsm.first_param_run(r.ref)] + seqs[i + 1:]
        if _trie_size(longer) > budget:
            break
        seqs = longer
    return [DraftCandidate(s, "schema_tool_name", {"tool": r.ref}) for s, r in zip(seqs, runs)]


def draft_param_names(fsm: Fsm, state: FsmState, budget: int = DEFAULT_BUDGET) -> list[DraftCandidate]:
    """Unemitted parameter keys with separators, plus the call terminator once
    every required parameter is in place."""
    if state.tag is not Tag.PARAM_NAME:
        raise WrongState(f"parameter-name drafting needs ParamName, not {state.tag.value}")
    spec = fsm.legal_continuations(state)
    out = []
    for run in spec.runs:
        if run.tokens:
            meta = {"param": run.ref} if run.kind == "param" else {"terminator": True}
            out.append(DraftCandidate(run.tokens[:budget], "schema_param_name", meta))
    return out


def schema_fill(fsm: Fsm, state: FsmState, budget: int = DEFAULT_BUDGET) -> DraftCandidate | None:
    """The forced continuation when the schema leaves exactly one option."""
    spec = fsm.legal_continuations(state)
    if not spec.structural or len(spec.runs) != 1 or not spec.runs[0].tokens:
        return None
    run = spec.runs[0]
    return DraftCandidate(run.tokens[:budget], "schema_fill", {"kind": run.kind, "ref": run.ref})


def schema_candidates(fsm: Fsm, state: FsmState, budget: int = DEFAULT_BUDGET) -> list[DraftCandidate]:
    """Everything schema-aware drafting offers in ``state`` (possibly nothing)."""
    forced = schema_fill(fsm, state, budget)
    if forced is not None:
        return [forced]
    if state.tag is Tag.TOOL_NAME:
        return draft_tool_names(fsm, state, budget)
    if state.tag is Tag.PARAM_NAME:
        return draft_param_names(fsm, state, budget)
    spec = fsm.legal_continuations(state)
    # enum literals inside a value
    return [DraftCandidate(r.tokens[:budget], "schema_fill", {"kind": r.kind, "ref": r.ref})
            for r in spec.runs if r.tokens]
