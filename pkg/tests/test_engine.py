import numpy as np
import pytest

from conftest import FORGOT_DOC
from tooldraft.engine import ABLATIONS, Engine, EngineConfig, build_context, generate, pld_context_match
from tooldraft.model import NgramModel, ScriptedModel
from tooldraft.recycle import AdjacencyMatrix
from tooldraft.retrieval import RetrievalConfig
from tooldraft.schema import check_format_adherence, render_call
from tooldraft.tokenizer import TOOL_CALL_CLOSE, TOOL_CALL_OPEN, Tokenizer


def run_all(w, cfg, store=None):
    store = store if store is not None else w.engine.new_store()
    outs, stats = [], []
    for r in w.records:
        o, st = w.engine.generate(w.model, r.query, store, cfg)
        outs.append(o)
        stats.append(st)
    return outs, stats, store


def test_full_config_reproduces_gold_with_fewer_passes(repetition_workload):
    w = repetition_workload
    outs, stats, store = run_all(w, EngineConfig())
    for r, o in zip(w.records, outs):
        assert o == w.gold[r.query]
    assert len(store) == len(w.records)
    passes = sum(s.forward_passes for s in stats)
    emitted = sum(s.emitted_tokens for s in stats)
    assert passes == sum(s.steps for s in stats)
    assert emitted / passes > 3
    assert sum(s.demotions for s in stats) == 0


def test_vanilla_is_one_token_per_pass(repetition_workload):
    w = repetition_workload
    r = w.records[0]
    o, st = w.engine.generate_vanilla(w.model, r.query)
    assert o == w.gold[r.query]
    assert st.forward_passes == st.steps == len(o) and st.mat == 1.0


@pytest.mark.parametrize("name", sorted(ABLATIONS))
def test_ablations_are_lossless(repetition_workload, name):
    w = repetition_workload
    outs, _, _ = run_all(w, EngineConfig.ablation(name))
    assert all(o == w.gold[r.query] for r, o in zip(w.records, outs))


def test_disable_both_implies_each():
    cfg = EngineConfig(disable_both=True)
    assert cfg.disable_sad and cfg.disable_ras
    with pytest.raises(ValueError):
        EngineConfig(mode="beam")
    with pytest.raises(ValueError):
        EngineConfig(max_tokens=0)


def test_ras_disabled_never_touches_store(repetition_workload):
    w = repetition_workload
    _, stats, store = run_all(w, EngineConfig.ablation("no-ras"))
    assert len(store) == 0
    assert all(s.per_source["retrieval"] == 0 for s in stats)


def test_sad_disabled_uses_no_schema_drafts(repetition_workload):
    w = repetition_workload
    _, stats, _ = run_all(w, EngineConfig.ablation("no-sad"))
    for s in stats:
        assert not any(k.startswith("schema") for k in s.per_source if s.per_source[k])


def test_max_tokens_truncates(repetition_workload):
    w = repetition_workload
    r = w.records[3]
    o, st = w.engine.generate(w.model, r.query, None, EngineConfig(max_tokens=7))
    assert o == w.gold[r.query][:7]
    assert st.emitted_tokens == 7


def test_step_log_and_callback(repetition_workload):
    w = repetition_workload
    seen = []
    o, st = w.engine.generate(w.model, w.records[0].query, w.engine.new_store(), EngineConfig(),
                              on_step=lambda rec, tree: seen.append((rec, tree)))
    assert len(seen) == st.steps == len(st.step_log)
    assert sum(rec["emitted"] for rec, _ in seen) == len(o)
    assert {"step", "state", "route", "tree_size", "accepted", "emitted"} <= set(seen[0][0])
    assert all(tree is None or len(tree) <= 64 for _, tree in seen)


def test_sampled_mode_matches_sampled_vanilla():
    tok = Tokenizer.from_texts([render_call("GetUserToken", {"username": "bob"}), "Sure, done. bob alice"])
    engine = Engine(tok, FORGOT_DOC)
    ctx = engine.context("token for bob")
    corpus = [ctx + tok.encode(TOOL_CALL_OPEN + render_call("GetUserToken", {"username": "bob"}) + TOOL_CALL_CLOSE)]
    model = NgramModel(corpus, tok.vocab_size, order=4, alpha=0.01)
    for seed in range(5):
        cfg = EngineConfig(mode="sampled", seed=seed, max_tokens=40)
        o, _ = engine.generate(model, "token for bob", engine.new_store(), cfg)
        v, _ = engine.generate_vanilla(model, "token for bob", cfg)
        assert o == v


def test_schema_violation_demotes_and_recovers():
    tok = Tokenizer.from_texts([render_call("GetUserToken", {"username": "bob"}), "Nope Sure"])
    engine = Engine(tok, FORGOT_DOC)
    bad = TOOL_CALL_OPEN + '{"name": "Nope", "parameters": {}}' + TOOL_CALL_CLOSE
    good = TOOL_CALL_OPEN + render_call("GetUserToken", {"username": "bob"}) + TOOL_CALL_CLOSE
    gold = tok.encode(bad + good) + [tok.eos_id]
    model = ScriptedModel({tuple(engine.context("q")): gold}, tok.vocab_size, tok.eos_id)
    store = engine.new_store()
    o, st = engine.generate(model, "q", store, EngineConfig())
    assert o == gold
    assert st.demotions == 1 and st.inserts == 1
    assert check_format_adherence(tok.decode(store.entries[0].y.tolist())).adherent


def test_context_layout(repetition_workload):
    w = repetition_workload
    ctx, q = build_context(w.tokenizer, w.schema, "hello")
    text = w.tokenizer.decode(ctx)
    assert text.endswith("\nUser: hello\nAssistant: ")
    assert w.tokenizer.decode(q) == "hello"


def test_module_level_generate(repetition_workload):
    w = repetition_workload
    r = w.records[0]
    o, _ = generate(w.model, r.query, w.doc, None, tokenizer=w.tokenizer)
    assert o == w.gold[r.query]
    assert pld_context_match([1, 2, 3, 4, 5, 6, 1, 2, 3, 4, 5], RetrievalConfig())[0].tokens == (6, 1, 2, 3, 4, 5)


def test_max_tokens_one_is_one_pass(repetition_workload):
    w = repetition_workload
    o, st = w.engine.generate(w.model, w.records[0].query, w.engine.new_store(), EngineConfig(max_tokens=1))
    assert len(o) == 1 and st.forward_passes == 1


def test_forward_pass_dominance_and_histogram(repetition_workload):
    w = repetition_workload
    store = w.engine.new_store()
    for r in w.records[:20]:
        o, st = w.engine.generate(w.model, r.query, store, EngineConfig())
        _, van = w.engine.generate_vanilla(w.model, r.query)
        assert st.forward_passes <= van.forward_passes
        assert st.emitted_tokens == sum(n * c for n, c in st.acceptance_histogram.items()) == len(o)
        assert st.mat == st.emitted_tokens / st.forward_passes


def test_fence_inside_call_demotes_losslessly():
    tok = Tokenizer.from_texts([render_call("GetUserToken", {"username": "bob"}), "```json"])
    engine = Engine(tok, FORGOT_DOC)
    text = TOOL_CALL_OPEN + '```json\n' + render_call("GetUserToken", {"username": "bob"}) + "\n```" + TOOL_CALL_CLOSE
    gold = tok.encode(text) + [tok.eos_id]
    model = ScriptedModel({tuple(engine.context("q")): gold}, tok.vocab_size, tok.eos_id)
    store = engine.new_store()
    o, st = engine.generate(model, "q", store, EngineConfig())
    assert o == gold == engine.generate_vanilla(model, "q")[0]
    assert st.demotions == 1 and len(store) == 0


def test_recycling_rows_match_replay_of_verified_nodes():
    tok = Tokenizer.from_texts([render_call("GetUserToken", {"username": "bob"}), "Sure, done. bob alice"])
    engine = Engine(tok, FORGOT_DOC)
    call = TOOL_CALL_OPEN + render_call("GetUserToken", {"username": "bob"}) + TOOL_CALL_CLOSE
    ctx = engine.context("token for bob")
    model = NgramModel([ctx + tok.encode("Sure, " + call)], tok.vocab_size, order=3, alpha=0.05)
    matrix = AdjacencyMatrix(tok.vocab_size)
    trace = []
    o, _ = engine.generate(model, "token for bob", None, EngineConfig(disable_both=True, max_tokens=60),
                           matrix=matrix, on_step=lambda rec, tree: trace.append((rec, tree)))
    expected = {}
    done = 0
    for rec, tree in trace:
        seq = ctx + o[:done]
        nodes = [(seq[-1], [])] if tree is None else \
            [(t, tree.rooted(seq[-1]).path_tokens(i)[1:]) for i, t in enumerate(tree.rooted(seq[-1]).tokens)]
        for t, path in nodes:
            expected[t] = int(np.argmax(model.next_distribution(seq + path)))
        done += rec["emitted"]
    assert expected
    for t, top in expected.items():
        assert matrix.row(t)[0] == top
