"""
The decode loop.

Each step picks one drafting route, packs the candidates into a tree, spends
one forward pass verifying it and emits the accepted tokens plus the
correction token:

1. retrieval: suffix-match the generated tokens against the session's top-k
   historical calls (once at least the shortest suffix length is generated);
2. otherwise schema drafting when the FSM sits in a structural state;
3. otherwise prompt lookup over context and output, merged with the
   recycling tree once the adjacency matrix is warm;
4. otherwise a plain single-token step.

Because every emitted token is the target's own choice, the output equals
plain decoding for any mix of routes.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .draft import DEFAULT_BUDGET, DraftCandidate, dedupe, schema_candidates
from .errors import IllegalToken
from .fsm import Fsm, FsmState, Tag, build_fsm
from .model import EmbeddingProvider, ForwardCounter, HashedBagEmbedding, TargetModel, forward_tree
from .recycle import DEFAULT_TEMPLATE, AdjacencyMatrix, StaticTreeTemplate, bfs_draft, prewarm, refresh_from_pass
from .retrieval import Datastore, RetrievalConfig, context_match, extract_continuations, suffix_match, topk
from .schema import ToolSchema, check_format_adherence, compile_schema, parse_tool_docs, render_docs
from .tokenizer import Tokenizer
from .tree import DraftTree, pack, single_node, static_tree
from .verify import GREEDY, SAMPLED, accept_walk, verify_and_accept

log = logging.getLogger(__name__)

SYSTEM_PROMPT = (
    "You are a helpful assistant with access to the tools below. "
    "To call a tool, reply with <tool_call> followed by a JSON object with "
    "\"name\" and \"parameters\" keys, then </tool_call>.\n"
)

ABLATIONS = {
    "full": {},
    "no-sad": {"disable_sad": True},
    "no-ras": {"disable_ras": True},
    "no-both": {"disable_both": True},
}
ABLATION_LABELS = {"full": "full", "no-sad": "w/o SAD", "no-ras": "w/o RAS", "no-both": "w/o both"}


@dataclass
class EngineConfig:
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    disable_sad: bool = False
    disable_ras: bool = False
    disable_both: bool = False
    drafting_budget: int = DEFAULT_BUDGET
    max_tokens: int = 256
    mode: str = GREEDY
    seed: int = 0
    recycling: bool = True
    pld_fallback: bool = True
    prewarm: bool = False
    # try schema drafting before retrieval in structural states (measurement only)
    prefer_sad_in_structural: bool = False
    template: StaticTreeTemplate = DEFAULT_TEMPLATE

    def __post_init__(self):
        if self.disable_both:
            self.disable_sad = True
            self.disable_ras = True
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.mode not in (GREEDY, SAMPLED):
            raise ValueError(f"unknown mode {self.mode!r}")

    @classmethod
    def ablation(cls, name: str, **kwargs) -> "EngineConfig":
        return cls(**ABLATIONS[name], **kwargs)


@dataclass
class DecodeStats:
    forward_passes: int = 0
    steps: int = 0
    emitted_tokens: int = 0
    acceptance_histogram: Counter = field(default_factory=Counter)  # emitted per step -> count
    per_source: Counter = field(default_factory=Counter)  # accepted draft tokens
    per_state: Counter = field(default_factory=Counter)
    first_two_steps: list[int] = field(default_factory=list)
    demotions: int = 0
    inserts: int = 0
    trimmed: int = 0
    step_log: list[dict[str, Any]] = field(default_factory=list)

    @property
    def mat(self) -> float:
        return self.emitted_tokens / self.steps if self.steps else 0.0

    def merge(self, other: "DecodeStats") -> "DecodeStats":
        out = DecodeStats(
            forward_passes=self.forward_passes + other.forward_passes,
            steps=self.steps + other.steps,
            emitted_tokens=self.emitted_tokens + other.emitted_tokens,
            acceptance_histogram=self.acceptance_histogram + other.acceptance_histogram,
            per_source=self.per_source + other.per_source,
            per_state=self.per_state + other.per_state,
            demotions=self.demotions + other.demotions,
            inserts=self.inserts + other.inserts,
            trimmed=self.trimmed + other.trimmed,
        )
        return out


@dataclass
class Session:
    query: list[int]
    context: list[int]
    state: FsmState
    snapshot: list[tuple[int, tuple[int, ...]]]
    matrix: AdjacencyMatrix
    rng: np.random.Generator
    stats: DecodeStats
    h: np.ndarray | None = None
    demoted: bool = False
    call_start: int | None = None


def build_context(tokenizer: Tokenizer, schema: ToolSchema, query: str) -> tuple[list[int], list[int]]:
    """(context tokens, query tokens) for one request."""
    q = tokenizer.encode(query)
    text = SYSTEM_PROMPT + render_docs(schema) + "\nUser: "
    ctx = tokenizer.encode(text) + q + tokenizer.encode("\nAssistant: ")
    return ctx, q


class Engine:
    """Decoder bound to one tokenizer and tool schema.

    Args:
        tokenizer: Shared by prompts, schema compilation and the model.
        schema: Parsed tool documentation (or the raw document).
        embedder: Question embedding for retrieval; hashed bag-of-tokens by default.
    """

    def __init__(self, tokenizer: Tokenizer, schema: ToolSchema | Mapping | str,
                 embedder: EmbeddingProvider | None = None):
        if not isinstance(schema, ToolSchema):
            schema = parse_tool_docs(schema)
        self.tokenizer = tokenizer
        self.schema = schema
        self.compiled = compile_schema(schema, tokenizer)
        self.fsm: Fsm = build_fsm(self.compiled)
        self.embedder = embedder or HashedBagEmbedding()

    def new_store(self, capacity: int | None = None) -> Datastore:
        return Datastore(dim=self.embedder.dim, capacity=capacity, decode=self.tokenizer.decode)

    def context(self, query: str) -> list[int]:
        return build_context(self.tokenizer, self.schema, query)[0]

    # -- drafting ----------------------------------------------------------

    def _retrieval(self, s: Session, out: list[int], cfg: EngineConfig):
        if cfg.disable_ras or not s.snapshot or len(out) < cfg.retrieval.min_suffix:
            return []
        cands = extract_continuations(suffix_match(out, s.snapshot, cfg.retrieval), cfg.retrieval)
        if s.demoted or s.state.tag is Tag.OTHERS:
            return cands
        # inside a call, cut each continuation where it leaves the schema
        kept = []
        for c in cands:
            n = self.fsm.legal_prefix(s.state, c.tokens)
            if n == len(c.tokens):
                kept.append(c)
            elif n > 0:
                kept.append(DraftCandidate(c.tokens[:n], c.source, {**c.meta, "cut": len(c.tokens) - n}))
        return kept

    def _schema(self, s: Session, cfg: EngineConfig):
        if cfg.disable_sad or s.demoted:
            return []
        return schema_candidates(self.fsm, s.state, cfg.drafting_budget)

    def _fallback(self, s: Session, out: list[int], cfg: EngineConfig):
        cands = []
        if cfg.pld_fallback:
            cands += context_match(s.context + out, cfg.retrieval)
        if cfg.recycling and s.matrix.warm:
            last = (s.context + out)[-1]
            cands += bfs_draft(s.matrix, last, cfg.template)
        return cands

    def _draft(self, s: Session, out: list[int], cfg: EngineConfig):
        structural = s.state.tag in (Tag.TOOL_NAME, Tag.PARAM_NAME)
        if cfg.prefer_sad_in_structural and structural:
            order = (lambda: self._schema(s, cfg), lambda: self._retrieval(s, out, cfg))
        else:
            order = (lambda: self._retrieval(s, out, cfg), lambda: self._schema(s, cfg))
        for route in order:
            cands = route()
            if cands:
                return cands
        return self._fallback(s, out, cfg)

    # -- bookkeeping -------------------------------------------------------

    def _fold(self, s: Session, out: list[int], tokens: Sequence[int], n_drafted: int,
              sources: Sequence[str], store: Datastore | None, cfg: EngineConfig) -> None:
        """Advance the FSM over one step's emitted tokens and record stats."""
        for i, tok in enumerate(tokens):
            if i < n_drafted:
                s.stats.per_state[s.state.tag.value] += 1
                s.stats.per_source[sources[i]] += 1
            out.append(tok)
            if s.demoted:
                if tok == self.tokenizer.tool_call_close_id:
                    s.demoted = False
                continue
            try:
                s.state, _, event = self.fsm.step(s.state, tok)
            except IllegalToken as exc:
                self.schema_violation_fallback(s, exc)
                continue
            if event == "call_open":
                s.call_start = len(out)
            elif event == "call_complete":
                self._on_call_complete(s, out, store, cfg)

    def schema_violation_fallback(self, s: Session, exc: IllegalToken | None = None) -> None:
        """Stop schema drafting until the current call closes."""
        log.debug("schema violation, demoting session: %s", exc)
        s.demoted = True
        s.state = self.fsm.initial
        s.call_start = None
        s.stats.demotions += 1

    def _on_call_complete(self, s: Session, out: list[int], store: Datastore | None, cfg: EngineConfig) -> None:
        start, s.call_start = s.call_start, None
        if store is None or cfg.disable_ras or start is None or s.h is None:
            return
        y = out[start:]
        if check_format_adherence(self.tokenizer.decode(y)).adherent:
            store.insert(s.h, y)
            s.stats.inserts += 1

    # -- decoding ----------------------------------------------------------

    def start(self, query: str, store: Datastore | None, cfg: EngineConfig,
              matrix: AdjacencyMatrix | None = None) -> Session:
        ctx, q = build_context(self.tokenizer, self.schema, query)
        snapshot: list = []
        h = None
        if not cfg.disable_ras and store is not None:
            h = self.embedder.embed(q)
            snapshot = store.snapshot(topk(h, store, cfg.retrieval.k))
        return Session(
            query=q,
            context=ctx,
            state=self.fsm.initial,
            snapshot=snapshot,
            matrix=matrix if matrix is not None else AdjacencyMatrix(self.tokenizer.vocab_size),
            rng=np.random.default_rng(cfg.seed),
            stats=DecodeStats(),
            h=h,
        )

    def generate(self, model: TargetModel, query: str, store: Datastore | None = None,
                 config: EngineConfig | None = None, matrix: AdjacencyMatrix | None = None,
                 on_step: Callable[[dict, DraftTree | None], None] | None = None) -> tuple[list[int], DecodeStats]:
        """Speculative decoding of one request.

        Args:
            model: Target model to preserve.
            query: User request text.
            store: Historical tool calls; completed adherent calls are added to it.
            config: Engine settings.
            matrix: Recycling matrix to share across requests (fresh per call if omitted).
            on_step: Called with each step's log record and draft tree.

        Returns:
            The emitted tokens (including a final end token if produced) and stats.
        """
        cfg = config or EngineConfig()
        s = self.start(query, store, cfg, matrix)
        counter = ForwardCounter()
        if cfg.prewarm and cfg.recycling:
            prewarm(s.matrix, model, s.context, counter)
        out: list[int] = []
        eos = self.tokenizer.eos_id
        in_call = False

        while len(out) < cfg.max_tokens and not (out and out[-1] == eos):
            start_tag = s.state.tag
            cands = dedupe(self._draft(s, out, cfg))
            seq = s.context + out
            if cands:
                tree = pack(cands, cfg.drafting_budget)
                if all(c.source == "recycling" for c in tree.candidates):
                    tree = static_tree(tree)
                res = verify_and_accept(model, seq, tree, cfg.mode, s.rng, counter)
                accepted, correction = res.accepted, res.correction
                sources = [tree.source_of[j] for j in res.nodes]
                rooted, dists = res.rooted, res.distributions
                s.stats.trimmed += len(tree.trimmed)
                route = tree.source_of[0]
            else:
                tree = None
                rooted = single_node(seq[-1])
                dists = forward_tree(model, seq[:-1], rooted, counter)
                accepted, nodes, correction = accept_walk(rooted, dists, cfg.mode, s.rng)
                sources = []
                route = "vanilla"
            if cfg.recycling:
                refresh_from_pass(s.matrix, rooted.tokens, dists)

            emitted = accepted + [correction]
            if eos in emitted:
                emitted = emitted[: emitted.index(eos) + 1]
            emitted = emitted[: cfg.max_tokens - len(out)]
            n_drafted = min(len(accepted), len(emitted))

            self._fold(s, out, emitted, n_drafted, sources, store, cfg)
            s.stats.steps += 1
            s.stats.emitted_tokens += len(emitted)
            s.stats.acceptance_histogram[len(emitted)] += 1
            if start_tag is not Tag.OTHERS or in_call:
                in_call = True
                if len(s.stats.first_two_steps) < 2:
                    s.stats.first_two_steps.append(len(emitted))
            elif s.state.tag is not Tag.OTHERS:
                in_call = True
            record = {
                "step": s.stats.steps,
                "state": start_tag.value,
                "route": route,
                "tree_size": 0 if tree is None else len(tree),
                "accepted": n_drafted,
                "emitted": len(emitted),
            }
            s.stats.step_log.append(record)
            if on_step is not None:
                on_step(record, tree)

        s.stats.forward_passes = counter.count
        return out, s.stats

    def generate_vanilla(self, model: TargetModel, query: str,
                         config: EngineConfig | None = None) -> tuple[list[int], DecodeStats]:
        """One forward pass per token."""
        cfg = config or EngineConfig()
        ctx, _ = build_context(self.tokenizer, self.schema, query)
        rng = np.random.default_rng(cfg.seed)
        counter = ForwardCounter()
        stats = DecodeStats()
        out: list[int] = []
        eos = self.tokenizer.eos_id
        while len(out) < cfg.max_tokens and not (out and out[-1] == eos):
            seq = ctx + out
            dists = forward_tree(model, seq[:-1], single_node(seq[-1]), counter)
            tok = accept_walk(single_node(seq[-1]), dists, cfg.mode, rng)[2]
            out.append(tok)
            stats.steps += 1
            stats.emitted_tokens += 1
            stats.acceptance_histogram[1] += 1
            stats.step_log.append({"step": stats.steps, "state": "", "route": "vanilla",
                                   "tree_size": 0, "accepted": 0, "emitted": 1})
        stats.forward_passes = counter.count
        return out, stats


def generate(model: TargetModel, query: str, schema_doc, store: Datastore | None,
             config: EngineConfig | None = None, *, tokenizer: Tokenizer,
             embedder: EmbeddingProvider | None = None) -> tuple[list[int], DecodeStats]:
    return Engine(tokenizer, schema_doc, embedder).generate(model, query, store, config)


def generate_vanilla(model: TargetModel, query: str, schema_doc, config: EngineConfig | None = None,
                     *, tokenizer: Tokenizer) -> tuple[list[int], DecodeStats]:
    return Engine(tokenizer, schema_doc).generate_vanilla(model, query, config)


def pld_context_match(sequence: Sequence[int], config: RetrievalConfig | EngineConfig | None = None):
    """Prompt-lookup candidates for ``sequence`` (context followed by output)."""
    if isinstance(config, EngineConfig):
        config = config.retrieval
    return context_match(sequence, config or RetrievalConfig())
