"""
Four-state tool-call FSM.

States: ``Others`` (free text), ``ToolName``, ``ParamName`` and
``ParamValue``. Transitions fire on schema delimiters observed in the
accepted token stream:

    Others    --<tool_call>-->              ToolName
    ToolName  --scaffold+name+suffix-->     ParamName
    ParamName --key+separator-->            ParamValue
    ParamValue --value complete / ","-->    ParamName
    ParamName / ParamValue --"}}"-->        Others

Structural states (``ToolName``, ``ParamName``) track the tokens matched so
far against the compiled runs, so multi-token delimiters are matched as runs.
Inside ``ParamValue`` the machine tracks quoting, escapes and bracket depth so
that commas and braces inside values never fire transitions.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

from .errors import IllegalToken
from .schema import FREE_TEXT, PARAM_VALUE, SCAFFOLD, CompiledSchema


class Tag(enum.Enum):
    TOOL_NAME = "ToolName"
    PARAM_NAME = "ParamName"
    PARAM_VALUE = "ParamValue"
    OTHERS = "Others"


STRUCTURAL_TAGS = (Tag.TOOL_NAME, Tag.PARAM_NAME)


@dataclass(frozen=True)
class FsmState:
    tag: Tag = Tag.OTHERS
    active_tool: int | None = None
    emitted_params: frozenset[int] = frozenset()
    # progress inside the current structural run
    matched: tuple[int, ...] = ()
    # ParamValue bookkeeping
    pending: int | None = None
    in_string: bool = False
    escaped: bool = False
    depth: int = 0
    value: tuple[int, ...] = ()

    def __post_init__(self):
        if (self.active_tool is not None) != (self.tag in (Tag.PARAM_NAME, Tag.PARAM_VALUE)):
            raise ValueError("active_tool must be set exactly in ParamName/ParamValue")


class StepResult(NamedTuple):
    state: FsmState
    label: str
    event: str | None  # "call_open" | "call_complete" | None


@dataclass(frozen=True)
class StructuralRun:
    tokens: tuple[int, ...]
    kind: str  # "tool" | "param" | "terminator" | "enum"
    ref: int | None = None  # tool index, parameter index or enum value index


@dataclass(frozen=True)
class DraftSpec:
    """Legal continuation of a state: explicit structural runs, or open-ended."""

    structural: bool
    runs: tuple[StructuralRun, ...] = ()


OPEN_ENDED = DraftSpec(False)


class _Run(NamedTuple):
    tokens: tuple[int, ...]
    labels: tuple[str, ...]
    kind: str
    ref: int | None


class Fsm:
    """Transition function over a compiled schema.

    Args:
        compiled: The compiled tool schema.
        max_tool_candidates: Cap on tool-name candidates offered for drafting.
            Parsing always accepts every tool in the schema.
    """

    def __init__(self, compiled: CompiledSchema, max_tool_candidates: int = 16):
        self.compiled = compiled
        self.max_tool_candidates = max_tool_candidates
        self.initial = FsmState()
        self._tool_runs = [compiled.tool_run(t) for t in range(len(compiled.tools))]
        self._tool_labels = [compiled.tool_run_labels(t) for t in range(len(compiled.tools))]
        self._tool_prefix: dict[tuple[int, ...], list[int]] = {}
        for t, run in enumerate(self._tool_runs):
            for k in range(1, len(run) + 1):
                self._tool_prefix.setdefault(run[:k], []).append(t)
        self._comma = compiled.value_terminator[0] if len(compiled.value_terminator) == 1 else None
        self._brace_close = compiled.call_terminator[0]
        self.delimiter_table = {
            (Tag.OTHERS, "call_open"): Tag.TOOL_NAME,
            (Tag.TOOL_NAME, "name_suffix"): Tag.PARAM_NAME,
            (Tag.PARAM_NAME, "key_separator"): Tag.PARAM_VALUE,
            (Tag.PARAM_VALUE, "value_terminator"): Tag.PARAM_NAME,
            (Tag.PARAM_VALUE, "call_terminator"): Tag.OTHERS,
            (Tag.PARAM_NAME, "call_terminator"): Tag.OTHERS,
        }

    # -- structural runs ---------------------------------------------------

    def _param_runs(self, state: FsmState) -> list[_Run]:
        c = self.compiled
        tool = c.tools[state.active_tool]
        lead: tuple[int, ...] = ()
        if state.emitted_params:
            lead = c.param_lead
        lead_labels = (SCAFFOLD,) * len(lead)
        runs = [
            _Run(lead + p.run, lead_labels + p.run_labels, "param", p.index)
            for p in tool.params
            if p.index not in state.emitted_params
        ]
        runs.append(_Run(c.call_terminator, (SCAFFOLD,) * len(c.call_terminator), "terminator", None))
        return runs

    def _required_done(self, state: FsmState) -> bool:
        tool = self.compiled.tools[state.active_tool]
        return all(p.index in state.emitted_params for p in tool.params if p.required)

    # -- transitions -------------------------------------------------------

    def step(self, state: FsmState, token: int) -> StepResult:
        """Consume one token."""
        tag = state.tag
        if tag is Tag.OTHERS:
            if token == self.compiled.call_open[0]:
                return StepResult(FsmState(tag=Tag.TOOL_NAME), SCAFFOLD, "call_open")
            return StepResult(state, FREE_TEXT, None)

        if tag is Tag.TOOL_NAME:
            m = state.matched + (token,)
            tools = self._tool_prefix.get(m)
            if not tools:
                raise IllegalToken(token, state)
            label = self._tool_labels[tools[0]][len(m) - 1]
            for t in tools:
                if len(self._tool_runs[t]) == len(m):
                    return StepResult(FsmState(tag=Tag.PARAM_NAME, active_tool=t), label, None)
            return StepResult(replace(state, matched=m), label, None)

        if tag is Tag.PARAM_NAME:
            m = state.matched + (token,)
            k = len(m)
            hits = [r for r in self._param_runs(state) if r.tokens[:k] == m]
            if not hits:
                raise IllegalToken(token, state)
            label = hits[0].labels[k - 1]
            for r in hits:
                if len(r.tokens) == k:
                    if r.kind == "terminator":
                        return StepResult(FsmState(), label, "call_complete")
                    param = self.compiled.tools[state.active_tool].param(r.ref)
                    nxt = FsmState(
                        tag=Tag.PARAM_VALUE,
                        active_tool=state.active_tool,
                        emitted_params=state.emitted_params,
                        pending=r.ref,
                        in_string=param.string_valued,
                    )
                    return StepResult(nxt, label, None)
            return StepResult(replace(state, matched=m), label, None)

        return self._step_value(state, token)

    def _value_done(self, state: FsmState) -> FsmState:
        return FsmState(
            tag=Tag.PARAM_NAME,
            active_tool=state.active_tool,
            emitted_params=state.emitted_params | {state.pending},
        )

    def _step_value(self, state: FsmState, token: int) -> StepResult:
        c = self.compiled
        param = c.tools[state.active_tool].param(state.pending)
        value = state.value + (token,)
        if state.in_string:
            if state.escaped:
                return StepResult(replace(state, escaped=False, value=value), PARAM_VALUE, None)
            if token == c.escape:
                return StepResult(replace(state, escaped=True, value=value), PARAM_VALUE, None)
            if token == c.string_quote:
                if param.string_valued and state.depth == 0:
                    return StepResult(self._value_done(state), PARAM_VALUE, None)
                return StepResult(replace(state, in_string=False, value=value), PARAM_VALUE, None)
            return StepResult(replace(state, value=value), PARAM_VALUE, None)

        # unquoted region of a non-string value
        if not state.value and token in c.blank_tokens:
            return StepResult(state, SCAFFOLD, None)
        if token == c.string_quote:
            return StepResult(replace(state, in_string=True, value=value), PARAM_VALUE, None)
        if token in c.open_brackets:
            return StepResult(replace(state, depth=state.depth + 1, value=value), PARAM_VALUE, None)
        if state.depth == 0 and (token == self._comma or token == self._brace_close):
            # the delimiter belongs to the next structural run
            return self.step(self._value_done(state), token)
        if token in c.close_brackets and state.depth > 0:
            return StepResult(replace(state, depth=state.depth - 1, value=value), PARAM_VALUE, None)
        return StepResult(replace(state, value=value), PARAM_VALUE, None)

    def legal_prefix(self, state: FsmState, tokens: Sequence[int]) -> int:
        """Length of the longest prefix of ``tokens`` the machine accepts from ``state``."""
        for i, tok in enumerate(tokens):
            try:
                state = self.step(state, tok).state
            except IllegalToken:
                return i
        return len(tokens)

    def advance(self, state: FsmState, accepted: Sequence[int]) -> FsmState:
        """Fold :meth:`step` over ``accepted`` left to right."""
        for tok in accepted:
            state = self.step(state, tok).state
        return state

    def label(self, state: FsmState, tokens: Sequence[int]) -> tuple[list[str], FsmState]:
        labels = []
        for tok in tokens:
            state, lab, _ = self.step(state, tok)
            labels.append(lab)
        return labels, state

    # -- drafting view -----------------------------------------------------

    def first_param_run(self, t: int) -> tuple[int, ...]:
        """What follows tool ``t``'s name suffix when its first parameter comes next."""
        tool = self.compiled.tools[t]
        if tool.params:
            return tool.params[0].run
        return self.compiled.call_terminator

    def legal_continuations(self, state: FsmState) -> DraftSpec:
        """Structural runs that can follow ``state``, or :data:`OPEN_ENDED`."""
        tag = state.tag
        if tag is Tag.OTHERS:
            return OPEN_ENDED
        if tag is Tag.TOOL_NAME:
            k = len(state.matched)
            runs = []
            for t in range(min(len(self._tool_runs), self.max_tool_candidates)):
                run = self._tool_runs[t]
                if run[:k] == state.matched:
                    runs.append(StructuralRun(run[k:], "tool", t))
            return DraftSpec(True, tuple(runs))
        if tag is Tag.PARAM_NAME:
            k = len(state.matched)
            done = self._required_done(state)
            runs = []
            for r in self._param_runs(state):
                if r.tokens[:k] != state.matched:
                    continue
                if r.kind == "terminator" and not (done or k > 0):
                    continue
                runs.append(StructuralRun(r.tokens[k:], r.kind, r.ref))
            return DraftSpec(True, tuple(runs))
        # ParamValue: only enum literals are schema-determined
        param = self.compiled.tools[state.active_tool].param(state.pending)
        if param.enum_values and param.string_valued and state.in_string and not state.escaped:
            k = len(state.value)
            runs = []
            for i, lit in enumerate(param.enum_values):
                full = lit + (self.compiled.string_quote,)
                if full[:k] == state.value and len(full) > k:
                    runs.append(StructuralRun(full[k:], "enum", i))
            if runs:
                return DraftSpec(True, tuple(runs))
        return OPEN_ENDED


def build_fsm(compiled: CompiledSchema, max_tool_candidates: int = 16) -> Fsm:
    return Fsm(compiled, max_tool_candidates=max_tool_candidates)


def advance(fsm: Fsm, state: FsmState, accepted: Sequence[int]) -> FsmState:
    return fsm.advance(state, accepted)


def legal_continuations(fsm: Fsm, state: FsmState) -> DraftSpec:
    return fsm.legal_continuations(state)
