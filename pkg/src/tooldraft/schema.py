"""
Tool documentation parsing, token-level schema compilation and the strict
format-adherence checker.

Every tool call uses one canonical JSON scaffold::

    <tool_call>{"name": "<TOOL>", "parameters": {"<P1>": <V1>, "<P2>": <V2>}}

Compilation turns the fixed parts of that scaffold, plus each tool and
parameter name, into token runs that the FSM and the schema drafter share.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .errors import DocParseError, DuplicateParam, DuplicateTool, SchemaError
from .tokenizer import TOOL_CALL_CLOSE, TOOL_CALL_OPEN, Tokenizer

TYPE_TAGS = ("string", "integer", "number", "boolean", "enum", "object", "array")
STRING_TYPES = ("string", "enum")

# token region labels
SCAFFOLD = "scaffold"
TOOL_NAME = "tool_name"
PARAM_NAME = "param_name"
PARAM_VALUE = "param_value"
FREE_TEXT = "free_text"


@dataclass(frozen=True)
class ParamDef:
    name: str
    type_tag: str = "string"
    required: bool = False
    enum_values: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.name:
            raise SchemaError("parameter name must be non-empty")
        if self.type_tag not in TYPE_TAGS:
            raise SchemaError(f"unknown parameter type {self.type_tag!r}")
        if (self.type_tag == "enum") != (self.enum_values is not None):
            raise SchemaError(f"parameter {self.name!r}: enum_values must be given iff type is enum")
        if self.enum_values is not None and not self.enum_values:
            raise SchemaError(f"parameter {self.name!r}: empty enum")

    @property
    def string_valued(self) -> bool:
        return self.type_tag in STRING_TYPES


@dataclass(frozen=True)
class ToolDef:
    name: str
    params: tuple[ParamDef, ...] = ()
    description: str = ""

    def __post_init__(self):
        if not self.name:
            raise SchemaError("tool name must be non-empty")
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise DuplicateParam(f"tool {self.name!r} repeats a parameter name")

    def emission_order(self) -> list[int]:
        """Parameter indices, required first, each group in declaration order."""
        req = [i for i, p in enumerate(self.params) if p.required]
        opt = [i for i, p in enumerate(self.params) if not p.required]
        return req + opt


@dataclass(frozen=True)
class ScaffoldTemplate:
    """String pieces of the canonical tool-call scaffold."""

    call_open: str = TOOL_CALL_OPEN
    head: str = '{"name": "'
    name_suffix: str = '", "parameters": {'
    key_open: str = '"'
    key_sep: str = '": '
    string_open: str = '"'
    value_terminator: str = ","
    param_lead: str = " "
    call_terminator: str = "}}"
    call_close: str = TOOL_CALL_CLOSE

    def __post_init__(self):
        body = self.head + "X" + self.name_suffix + self.call_terminator
        if body.count("{") != body.count("}") or body.count('"') % 2:
            raise SchemaError("scaffold template has unbalanced braces or quotes")


@dataclass(frozen=True)
class ToolSchema:
    tools: tuple[ToolDef, ...]
    template: ScaffoldTemplate = field(default_factory=ScaffoldTemplate)

    def __post_init__(self):
        if not self.tools:
            raise DocParseError("tools must be non-empty", "$.tools")
        names = [t.name for t in self.tools]
        if len(set(names)) != len(names):
            raise DuplicateTool("duplicate tool name", "$.tools")

    def tool(self, name: str) -> ToolDef:
        for t in self.tools:
            if t.name == name:
                return t
        raise KeyError(name)


def _reject_duplicate_keys(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise DuplicateParam(f"duplicate key {k!r}")
        out[k] = v
    return out


def _parse_param(name: Any, spec: Any, path: str) -> ParamDef:
    if not isinstance(name, str) or not name:
        raise DocParseError("parameter name must be a non-empty string", path)
    if not isinstance(spec, Mapping):
        raise DocParseError("parameter spec must be an object", path)
    type_tag = spec.get("type", "string")
    enum = spec.get("enum")
    required = spec.get("required", False)
    if not isinstance(required, bool):
        raise DocParseError("required must be a boolean", f"{path}.required")
    if enum is not None:
        if not isinstance(enum, list) or not enum or not all(isinstance(v, str) for v in enum):
            raise DocParseError("enum must be a non-empty list of strings", f"{path}.enum")
        type_tag = "enum"
        enum = tuple(enum)
    elif type_tag == "enum":
        raise DocParseError("enum type without enum values", f"{path}.enum")
    if type_tag not in TYPE_TAGS:
        raise DocParseError(f"unknown type {type_tag!r}", f"{path}.type")
    return ParamDef(name=name, type_tag=type_tag, required=required, enum_values=enum)


def parse_tool_docs(docs: Mapping | str) -> ToolSchema:
    """Parse a tool-documentation document into a :class:`ToolSchema`.

    ``docs`` is either the decoded document or its JSON text. Unknown fields are
    ignored. Parameters may be given as an object keyed by name (the file
    format) or as a list of objects carrying a ``"name"`` field.
    """
    if isinstance(docs, str):
        try:
            docs = json.loads(docs, object_pairs_hook=_reject_duplicate_keys)
        except json.JSONDecodeError as exc:
            raise DocParseError(f"invalid JSON: {exc.msg} (line {exc.lineno})") from exc
    if not isinstance(docs, Mapping):
        raise DocParseError("document must be an object")
    tools_doc = docs.get("tools")
    if not isinstance(tools_doc, list):
        raise DocParseError("missing tools list", "$.tools")
    if not tools_doc:
        raise DocParseError("tools must be non-empty", "$.tools")

    tools: list[ToolDef] = []
    seen_tools: set[str] = set()
    for ti, tdoc in enumerate(tools_doc):
        tpath = f"$.tools[{ti}]"
        if not isinstance(tdoc, Mapping):
            raise DocParseError("tool entry must be an object", tpath)
        name = tdoc.get("name")
        if not isinstance(name, str) or not name:
            raise DocParseError("tool name must be a non-empty string", f"{tpath}.name")
        if name in seen_tools:
            raise DuplicateTool(f"duplicate tool {name!r}", f"{tpath}.name")
        seen_tools.add(name)
        description = tdoc.get("description", "")
        if not isinstance(description, str):
            raise DocParseError("description must be a string", f"{tpath}.description")

        raw = tdoc.get("parameters", {})
        if isinstance(raw, Mapping):
            items = list(raw.items())
        elif isinstance(raw, list):
            items = []
            for pi, p in enumerate(raw):
                if not isinstance(p, Mapping):
                    raise DocParseError("parameter entry must be an object", f"{tpath}.parameters[{pi}]")
                items.append((p.get("name"), p))
        else:
            raise DocParseError("parameters must be an object", f"{tpath}.parameters")
        params: list[ParamDef] = []
        seen_params: set[str] = set()
        for pname, pspec in items:
            ppath = f"{tpath}.parameters.{pname}"
            if pname in seen_params:
                raise DuplicateParam(f"duplicate parameter {pname!r}", ppath)
            seen_params.add(pname)
            params.append(_parse_param(pname, pspec, ppath))
        tools.append(ToolDef(name=name, params=tuple(params), description=description))
    return ToolSchema(tools=tuple(tools))


def load_tool_docs(path: str | Path) -> ToolSchema:
    return parse_tool_docs(Path(path).read_text(encoding="utf-8"))


def schema_to_doc(schema: ToolSchema) -> dict:
    """Inverse of :func:`parse_tool_docs` (file format)."""
    tools = []
    for t in schema.tools:
        params = {}
        for p in t.params:
            spec: dict[str, Any] = {"type": "string" if p.type_tag == "enum" else p.type_tag, "required": p.required}
            if p.enum_values is not None:
                spec["enum"] = list(p.enum_values)
            params[p.name] = spec
        tools.append({"name": t.name, "description": t.description, "parameters": params})
    return {"tools": tools}


def render_docs(schema: ToolSchema) -> str:
    """Prompt rendering of the tool documentation."""
    return "\n".join(json.dumps(t, ensure_ascii=False) for t in schema_to_doc(schema)["tools"])


def render_call(tool: str, params: Mapping[str, Any]) -> str:
    """Canonical JSON text of one tool call (without the open marker)."""
    return json.dumps({"name": tool, "parameters": dict(params)}, ensure_ascii=False)


def _json_inner(s: str) -> str:
    return json.dumps(s, ensure_ascii=False)[1:-1]


# -- compilation ---------------------------------------------------------------


@dataclass(frozen=True)
class CompiledParam:
    index: int
    name: str
    name_tokens: tuple[int, ...]
    run: tuple[int, ...]
    run_labels: tuple[str, ...]
    required: bool
    string_valued: bool
    enum_values: tuple[tuple[int, ...], ...] = ()


@dataclass(frozen=True)
class CompiledTool:
    name: str
    name_tokens: tuple[int, ...]
    params: tuple[CompiledParam, ...]  # emission order

    def param(self, index: int) -> CompiledParam:
        for p in self.params:
            if p.index == index:
                return p
        raise KeyError(index)


@dataclass(frozen=True)
class CompiledSchema:
    """Token runs for the canonical scaffold.

    ``scaffold_prefix`` starts with the call-open token and ends just before
    the tool-name slot. Each parameter ``run`` is the quoted key plus the
    key/value separator (and the opening quote for string-valued params).
    """

    scaffold_prefix: tuple[int, ...]
    name_suffix: tuple[int, ...]
    value_terminator: tuple[int, ...]
    param_lead: tuple[int, ...]
    call_terminator: tuple[int, ...]
    call_open: tuple[int, ...]
    call_close: tuple[int, ...]
    string_quote: int
    escape: int
    open_brackets: frozenset[int]
    close_brackets: frozenset[int]
    blank_tokens: frozenset[int]
    tools: tuple[CompiledTool, ...]

    @property
    def delimiters(self) -> dict[str, tuple[int, ...]]:
        return {
            "value_terminator": self.value_terminator,
            "call_terminator": self.call_terminator,
            "call_open": self.call_open,
        }

    def tool_run(self, t: int) -> tuple[int, ...]:
        """Tokens after the call-open marker through the parameters brace."""
        return self.scaffold_prefix[len(self.call_open):] + self.tools[t].name_tokens + self.name_suffix

    def tool_run_labels(self, t: int) -> tuple[str, ...]:
        n_head = len(self.scaffold_prefix) - len(self.call_open)
        return ((SCAFFOLD,) * n_head + (TOOL_NAME,) * len(self.tools[t].name_tokens)
                + (SCAFFOLD,) * len(self.name_suffix))


def _encode(tokenizer: Tokenizer, text: str) -> tuple[int, ...]:
    return tuple(tokenizer.encode(text))


def compile_schema(schema: ToolSchema, tokenizer: Tokenizer) -> CompiledSchema:
    tpl = schema.template
    enc = lambda s: _encode(tokenizer, s)  # noqa: E731
    call_open = enc(tpl.call_open)
    head = enc(tpl.head)
    name_suffix = enc(tpl.name_suffix)
    key_open = enc(tpl.key_open)
    string_open = enc(tpl.string_open)
    value_terminator = enc(tpl.value_terminator)
    lead = value_terminator + enc(tpl.param_lead)
    call_terminator = enc(tpl.call_terminator)
    call_close = enc(tpl.call_close)
    for label, run in (("call_open", call_open), ("value_terminator", value_terminator),
                       ("call_terminator", call_terminator)):
        if not run:
            raise SchemaError(f"delimiter {label} tokenizes to nothing")
    if len(call_open) != 1:
        raise SchemaError("tool-call open marker must be a single token")
    if len(string_open) != 1:
        raise SchemaError("string quote must be a single token")

    tools = []
    for tool in schema.tools:
        name_tokens = enc(_json_inner(tool.name))
        whole = enc(tpl.head + _json_inner(tool.name) + tpl.name_suffix)
        if not name_tokens or whole != head + name_tokens + name_suffix:
            raise SchemaError(f"tool name {tool.name!r} does not tokenize compositionally")
        cparams = []
        for idx in tool.emission_order():
            p = tool.params[idx]
            pname = enc(_json_inner(p.name))
            if not pname:
                raise SchemaError(f"parameter {p.name!r} tokenizes to nothing")
            # a bare value may absorb the separator's trailing space into its first token
            sep_text = tpl.key_sep if p.string_valued else tpl.key_sep.rstrip()
            sep = enc(sep_text)
            run = key_open + pname + sep
            labels = (SCAFFOLD,) * len(key_open) + (PARAM_NAME,) * len(pname) + (SCAFFOLD,) * len(sep)
            if p.string_valued:
                run += string_open
                labels += (PARAM_VALUE,)
            check = enc(tpl.param_lead + tpl.key_open + _json_inner(p.name) + sep_text
                        + (tpl.string_open if p.string_valued else ""))
            if check != enc(tpl.param_lead) + run:
                raise SchemaError(f"parameter {p.name!r} does not tokenize compositionally")
            enums = tuple(enc(_json_inner(v)) for v in p.enum_values or ())
            cparams.append(CompiledParam(
                index=idx, name=p.name, name_tokens=pname, run=run, run_labels=labels,
                required=p.required, string_valued=p.string_valued, enum_values=enums,
            ))
        tools.append(CompiledTool(name=tool.name, name_tokens=name_tokens, params=tuple(cparams)))

    return CompiledSchema(
        scaffold_prefix=call_open + head,
        name_suffix=name_suffix,
        value_terminator=value_terminator,
        param_lead=lead,
        call_terminator=call_terminator,
        call_open=call_open,
        call_close=call_close,
        string_quote=string_open[0],
        escape=tokenizer.token_id("\\"),
        open_brackets=frozenset((tokenizer.token_id("{"), tokenizer.token_id("["))),
        close_brackets=frozenset((tokenizer.token_id("}"), tokenizer.token_id("]"))),
        blank_tokens=frozenset(i for i, t in enumerate(tokenizer.vocabulary) if t and not t.strip()),
        tools=tuple(tools),
    )


# -- format adherence ---------------------------------------------------------

VIOLATION_KINDS = ("not_json", "extraneous_text", "markdown_fence", "xml_tag", "malformed_structure")

_FENCE_RE = re.compile(r"```|~~~")
_TAG_RE = re.compile(r"</?[A-Za-z_][\w.\-]*(\s[^<>]*)?/?>")


@dataclass(frozen=True)
class AdherenceReport:
    adherent: bool
    violation_kind: str | None = None
    location: int | None = None

    def __post_init__(self):
        if self.adherent != (self.violation_kind is None):
            raise ValueError("adherent iff no violation kind")


def _reject_constant(name):
    raise ValueError(f"non-standard JSON constant {name}")


def _strict_loads(text: str):
    return json.loads(text, object_pairs_hook=_reject_duplicate_keys, parse_constant=_reject_constant)


def _structure_ok(obj) -> bool:
    return (isinstance(obj, dict) and set(obj) == {"name", "parameters"}
            and isinstance(obj["name"], str) and obj["name"] != ""
            and isinstance(obj["parameters"], dict))


def check_format_adherence(text: str) -> AdherenceReport:
    """Strict check that ``text`` is exactly one tool-call JSON object.

    Surrounding whitespace is allowed. Fences, XML-like tags, extra prose,
    non-JSON text and well-formed JSON with the wrong shape are reported as
    distinct violation kinds.
    """
    start = len(text) - len(text.lstrip())
    body = text.strip()
    try:
        obj = _strict_loads(body)
    except (ValueError, DuplicateParam) as exc:
        obj = exc
    if not isinstance(obj, Exception):
        if _structure_ok(obj):
            return AdherenceReport(True)
        return AdherenceReport(False, "malformed_structure", start)

    m = _FENCE_RE.search(text)
    if m:
        return AdherenceReport(False, "markdown_fence", m.start())
    m = _TAG_RE.search(text)
    if m:
        return AdherenceReport(False, "xml_tag", m.start())

    brace = text.find("{")
    if brace >= 0:
        decoder = json.JSONDecoder(object_pairs_hook=_reject_duplicate_keys, parse_constant=_reject_constant)
        try:
            _, end = decoder.raw_decode(text, brace)
        except (ValueError, DuplicateParam) as exc:
            if text[:brace].strip():
                return AdherenceReport(False, "extraneous_text", start)
            pos = getattr(exc, "pos", brace)
            return AdherenceReport(False, "malformed_structure", pos)
        if text[:brace].strip():
            return AdherenceReport(False, "extraneous_text", start)
        tail = end + (len(text[end:]) - len(text[end:].lstrip()))
        return AdherenceReport(False, "extraneous_text", tail)
    return AdherenceReport(False, "not_json", start)
