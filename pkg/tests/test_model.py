import numpy as np
import pytest

from oracles import ngram_prob, recursive_trees
from tooldraft.errors import EmptyInput, MaskShapeMismatch
from tooldraft.model import ForwardCounter, HashedBagEmbedding, NgramModel, ScriptedModel, embed, forward_tree
from tooldraft.tree import DraftTree, closure_mask


def make_tree(tokens, parent):
    return DraftTree(list(tokens), list(parent), closure_mask(parent), [], ["recycling"] * len(tokens))


def random_corpus(rng, vocab, n_seqs=6, length=25):
    return [list(rng.integers(0, vocab, length)) for _ in range(n_seqs)]


def test_scripted_single_node_is_point_mass_on_gold():
    model = ScriptedModel({(5, 6): [7, 8]}, vocab_size=10)
    counter = ForwardCounter()
    d = forward_tree(model, [5], make_tree([6], [-1]), counter)
    assert d.shape == (1, 10)
    assert d[0, 7] == 1.0 and d[0].sum() == 1.0
    assert counter.count == 1


def test_scripted_past_gold_or_unknown_prompt_gives_eos():
    model = ScriptedModel({(5,): [7]}, vocab_size=10, eos_id=0)
    assert model.next_distribution([5, 7])[0] == 1.0
    assert model.next_distribution([9])[0] == 1.0


def test_balanced_tree_counts_one_pass():
    rng = np.random.default_rng(1)
    model = NgramModel(random_corpus(rng, 8), 8)
    counter = ForwardCounter()
    parent = [-1, 0, 0, 1, 1, 2, 2]
    d = forward_tree(model, [1, 2], make_tree([3, 4, 5, 6, 7, 1, 2], parent), counter)
    assert d.shape == (7, 8)
    assert counter.count == 1
    forward_tree(model, [1, 2], make_tree([3], [-1]), counter)
    assert counter.count == 2


def test_mask_shape_mismatch():
    model = NgramModel([[0, 1, 2]], 3)
    bad = DraftTree([1, 2], [-1, 0], np.ones((3, 3), dtype=bool), [], ["x", "x"])
    with pytest.raises(MaskShapeMismatch):
        forward_tree(model, [0], bad)


def test_two_branch_tree_matches_per_branch_sequential():
    rng = np.random.default_rng(2)
    model = NgramModel(random_corpus(rng, 6), 6, order=3)
    ctx = [1, 2, 3]
    tokens, parent = [4, 5, 0, 1], [-1, 0, -1, 2]
    d = forward_tree(model, ctx, make_tree(tokens, parent))
    np.testing.assert_array_equal(d[1], model.next_distribution(ctx + [4, 5]))
    np.testing.assert_array_equal(d[3], model.next_distribution(ctx + [0, 1]))


@pytest.mark.parametrize("order", [1, 2, 3, 4])
def test_ngram_matches_direct_counting(order):
    rng = np.random.default_rng(order)
    corpus = random_corpus(rng, 5, n_seqs=4, length=15)
    model = NgramModel(corpus, 5, order=order, alpha=0.1)
    for history in ([], [1], [2, 3], [4, 0, 1], [3, 3, 3, 3]):
        p = model.next_distribution(history)
        expected = [ngram_prob(corpus, 5, order, 0.1, history, t) for t in range(5)]
        np.testing.assert_allclose(p, expected, rtol=0, atol=1e-12)
        assert abs(p.sum() - 1) < 1e-9 and (p > 0).all()


def test_ngram_invariant_to_corpus_shuffling():
    rng = np.random.default_rng(3)
    corpus = random_corpus(rng, 7)
    a = NgramModel(corpus, 7)
    b = NgramModel(list(reversed(corpus)), 7)
    for h in ([], [1], [1, 2], [6, 5, 4]):
        np.testing.assert_array_equal(a.next_distribution(h), b.next_distribution(h))


def test_forward_tree_equals_sequential_on_small_trees():
    rng = np.random.default_rng(4)
    model = NgramModel(random_corpus(rng, 12), 12, order=3)
    for n in range(1, 6):
        for parent in recursive_trees(n):
            tokens = list(rng.integers(0, 12, n))
            tree = make_tree(tokens, parent)
            d = forward_tree(model, [3, 4], tree)
            for i in range(n):
                path = []
                j = i
                while j != -1:
                    path.append(tokens[j])
                    j = parent[j]
                np.testing.assert_array_equal(d[i], model.next_distribution([3, 4] + path[::-1]))


def test_embedding_is_deterministic_and_unit_norm():
    emb = HashedBagEmbedding()
    a = embed([1, 2, 3], emb)
    assert a.shape == (256,)
    np.testing.assert_array_equal(a, embed([1, 2, 3], emb))
    assert abs(np.linalg.norm(a) - 1) < 1e-12
    assert float(a @ a) == pytest.approx(1.0)


def test_one_changed_token_lowers_similarity():
    emb = HashedBagEmbedding()
    a, b = embed([1, 2, 3, 4], emb), embed([1, 2, 3, 5], emb)
    assert emb.bucket(4) != emb.bucket(5)
    assert float(a @ b) < 1.0


def test_disjoint_questions_without_collisions_are_orthogonal():
    emb = HashedBagEmbedding()
    # pick tokens whose buckets are pairwise distinct
    chosen, used = [], set()
    for t in range(1000):
        if emb.bucket(t) not in used:
            chosen.append(t)
            used.add(emb.bucket(t))
        if len(chosen) == 8:
            break
    a, b = embed(chosen[:4], emb), embed(chosen[4:], emb)
    assert float(a @ b) == 0.0


def test_empty_question_rejected():
    with pytest.raises(EmptyInput):
        embed([], HashedBagEmbedding())
