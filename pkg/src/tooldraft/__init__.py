"""Speculative decoding for structured tool calls.

Drafts come from the tool schema, from retrieved historical calls and from a
token-recycling matrix; a single tree-masked pass verifies them against the
target model and keeps its output distribution unchanged.
"""

from .draft import DraftCandidate, draft_param_names, draft_tool_names, schema_fill
from .engine import DecodeStats, Engine, EngineConfig, generate, generate_vanilla, pld_context_match
from .fsm import Fsm, FsmState, Tag, advance, build_fsm, legal_continuations
from .model import (
    EmbeddingProvider,
    ForwardCounter,
    HashedBagEmbedding,
    NgramModel,
    ScriptedModel,
    TargetModel,
    embed,
    forward_tree,
)
from .recycle import AdjacencyMatrix, StaticTreeTemplate, bfs_draft, update_matrix
from .retrieval import Datastore, Match, RetrievalConfig, extract_continuations, insert, suffix_match, topk
from .schema import (
    AdherenceReport,
    CompiledSchema,
    ToolSchema,
    check_format_adherence,
    compile_schema,
    parse_tool_docs,
)
from .tokenizer import Tokenizer, decode, encode
from .tree import DraftTree, dynamic_tree, pack, static_tree
from .verify import AcceptanceResult, vanilla_step, verify_and_accept

__version__ = "0.1.0"
