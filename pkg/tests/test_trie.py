import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from eco.kb import KnowledgeBase, Vocabulary, linearize_entity
from eco.trie import (DegenerateDistributionError, InvalidPrefixError, StaleTrieError,
                      allowed_tokens, build_trie, constrain, dump_trie, enumerate_paths)


def test_train_trie_shape(train_trie, train_vocab):
    v = train_vocab
    assert allowed_tokens(train_trie, []) == [v.id("[day]")]
    assert allowed_tokens(train_trie, v.encode("[day]")) == sorted(v.ids(["friday", "saturday"]))
    prefix = v.encode("[day] saturday [departure]")
    assert allowed_tokens(train_trie, prefix) == sorted(v.ids(["cambridge", "kings"]))
    assert allowed_tokens(train_trie, v.encode("[day] friday [departure]")) == [v.id("peterborough")]
    # the shared prefix "[day] saturday [departure]" is stored once
    shared = train_trie.walk(prefix)
    assert len(train_trie.children[shared]) == 2
    assert len(enumerate_paths(train_trie)) == 3


def test_full_entity_allows_only_eos(train_trie, train_vocab):
    v = train_vocab
    assert allowed_tokens(train_trie, v.encode("[day] saturday [departure] kings lynn")) == [v.eos_id]


def test_invalid_prefix(train_trie, train_vocab):
    with pytest.raises(InvalidPrefixError):
        allowed_tokens(train_trie, train_vocab.encode("[departure]"))
    assert train_trie.step(train_trie.root, train_vocab.id("friday")) == -1


def test_single_entity_chain():
    kb = KnowledgeBase(["name", "area"], [{"name": "a b", "area": "north"}])
    vocab = Vocabulary.build([], [kb])
    trie = build_trie(kb, vocab)
    paths = enumerate_paths(trie)
    assert paths == [tuple(linearize_entity(kb[0], kb.schema, vocab))]
    assert all(len(c) <= 1 for c in trie.children)


def test_paths_equal_linearizations(reference_corpus):
    kb, _ = reference_corpus
    vocab = Vocabulary.build([], [kb])
    trie = build_trie(kb, vocab)
    lin = {tuple(linearize_entity(e, kb.schema, vocab)) for e in kb}
    assert set(enumerate_paths(trie)) == lin
    assert len(trie) <= sum(len(s) for s in lin) + 1


def test_stale_trie_is_rejected(restaurant_kb):
    vocab = Vocabulary.build([], [restaurant_kb])
    trie = build_trie(restaurant_kb, vocab)
    trie.check_source(restaurant_kb.fingerprint())
    other = KnowledgeBase(restaurant_kb.schema, [e.values for e in restaurant_kb][:-1], "restaurant")
    with pytest.raises(StaleTrieError):
        trie.check_source(other.fingerprint())


def test_constrain_hand_example():
    out = constrain(np.array([0.5, 0.3, 0.2]), [1, 2])
    np.testing.assert_allclose(out, [0.0, 0.6, 0.4], rtol=0, atol=1e-15)


def test_constrain_uniform_and_full_support():
    d = np.full(10, 0.1)
    np.testing.assert_allclose(constrain(d, [2, 5, 7, 9]), np.where(np.isin(np.arange(10), [2, 5, 7, 9]), 0.25, 0))
    p = np.random.default_rng(1).dirichlet(np.ones(8))
    np.testing.assert_allclose(constrain(p, list(range(8))), p, rtol=1e-15)


def test_constrain_degenerate():
    with pytest.raises(DegenerateDistributionError):
        constrain(np.array([1.0, 0.0, 0.0]), [1, 2])


def test_constrain_batched_mask():
    d = np.array([[0.5, 0.3, 0.2], [0.1, 0.1, 0.8]])
    mask = np.array([[False, True, True], [True, False, False]])
    np.testing.assert_allclose(constrain(d, mask), [[0, 0.6, 0.4], [1, 0, 0]])


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(2, 30), elements=st.floats(1e-6, 1.0)),
       st.data())
def test_constrain_properties(weights, data):
    dist = weights / weights.sum()
    allowed = sorted(data.draw(st.sets(st.integers(0, len(dist) - 1), min_size=1)))
    out = constrain(dist, allowed)
    outside = np.setdiff1d(np.arange(len(dist)), allowed)
    assert abs(out.sum() - 1) < 1e-9
    assert np.all(out[outside] == 0)
    assert int(out.argmax()) in allowed
    np.testing.assert_allclose(constrain(out, allowed), out, rtol=1e-12)
    a = allowed[0]
    for b in allowed[1:]:
        assert abs(out[b] / out[a] - dist[b] / dist[a]) <= 1e-9 * max(1.0, dist[b] / dist[a])


def test_dump_trie_is_json(train_trie, train_vocab):
    import json
    obj = json.loads(dump_trie(train_trie, train_vocab))
    assert obj["nodes"][0]["children"] == {"[day]": 1}
    assert sum(n["terminal"] for n in obj["nodes"]) == 3
