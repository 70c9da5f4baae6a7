import numpy as np
import pytest

from conftest import TRAIN_ENTITIES
from eco.autodiff import no_grad
from eco.generation import (DecodeConfig, decode_entities, generate_batch, generate_entity,
                            generate_response)
from eco.kb import KnowledgeBase, Vocabulary, linearize_entity
from eco.model import ModelConfig, encode, init_params
from eco.trie import StaleTrieError, build_trie


def _params(vocab, seed=0):
    return init_params(len(vocab), ModelConfig(d_model=8, d_ff=16, max_len=16), seed=seed)


def test_train_trie_decodes_stay_on_trie(train_vocab, train_trie):
    v = train_vocab
    valid = {tuple(v.encode(s) + [v.eos_id]) for s in TRAIN_ENTITIES}
    params = _params(v)
    rng = np.random.default_rng(0)
    ctx = rng.integers(6, len(v), size=(10_000, 4))
    with no_grad():
        g, mask = encode(params, ctx, [4] * len(ctx))
        out = decode_entities(params, g, mask, [train_trie] * len(ctx),
                              DecodeConfig(mode="topk", k=3, max_entity_len=8), rng)
    assert {tuple(o) for o in out} <= valid
    assert len({tuple(o) for o in out}) == 3  # sampling reaches every branch


def test_single_entity_trie_is_forced():
    kb = KnowledgeBase(["name", "area"], [{"name": "only one", "area": "north"}])
    vocab = Vocabulary.build(["hello there"], [kb])
    trie = build_trie(kb, vocab)
    for seed in range(3):
        ent = generate_entity(_params(vocab, seed), trie, vocab.encode("hello"), vocab.encode("there"),
                              DecodeConfig(max_entity_len=8), kb.fingerprint(), vocab)
        assert ent == linearize_entity(kb[0], kb.schema, vocab)


def test_stale_trie_refused(restaurant_kb):
    vocab = Vocabulary.build([], [restaurant_kb])
    trie = build_trie(restaurant_kb, vocab)
    with pytest.raises(StaleTrieError):
        generate_entity(_params(vocab), trie, [], [6], DecodeConfig(), "0" * 16, vocab)


def test_response_truncation_and_determinism(restaurant_kb):
    vocab = Vocabulary.build(["a b c d e f"], [restaurant_kb])
    params = _params(vocab)
    one = generate_response(params, [6, 7], [8], [9, 2], DecodeConfig(max_response_len=1), vocab)
    assert len(one) == 1
    cfg = DecodeConfig(mode="topk", k=4, max_response_len=10, seed=5)
    a = generate_response(params, [6, 7], [8], [9, 2], cfg, vocab)
    b = generate_response(params, [6, 7], [8], [9, 2], cfg, vocab)
    assert a == b


def test_tokens_mode_is_composition(restaurant_kb):
    vocab = Vocabulary.build(["i want food"], [restaurant_kb])
    trie = build_trie(restaurant_kb, vocab)
    params = _params(vocab, 4)
    cfg = DecodeConfig(max_entity_len=12, max_response_len=8)
    ctx, utt = vocab.encode("<usr> i want"), vocab.encode("food")
    ents, resps = generate_batch(params, [ctx + utt], [trie], cfg, vocab, "tokens")
    ent = generate_entity(params, trie, ctx, utt, cfg, vocab=vocab)
    assert ents[0] == ent
    assert resps[0] == generate_response(params, ctx, utt, ent, cfg, vocab)


def test_one_hot_entity_logits_mode_equals_tokens_mode():
    # a single-entity trie renormalizes every step to a one-hot distribution
    kb = KnowledgeBase(["name", "food"], [{"name": "cotto", "food": "british"}])
    vocab = Vocabulary.build(["i want british food"], [kb])
    trie = build_trie(kb, vocab)
    params = _params(vocab, 2)
    cfg = DecodeConfig(max_entity_len=6, max_response_len=8)
    ctx = [vocab.encode("i want british food")]
    assert generate_batch(params, ctx, [trie], cfg, vocab, "tokens") == \
        generate_batch(params, ctx, [trie], cfg, vocab, "logits")


def test_unconstrained_decoding_leaves_the_kb(restaurant_kb):
    vocab = Vocabulary.build(["i want food"], [restaurant_kb])
    valid = {tuple(linearize_entity(e, restaurant_kb.schema, vocab)) for e in restaurant_kb}
    params = _params(vocab, 1)
    rng = np.random.default_rng(1)
    ctx = rng.integers(6, len(vocab), size=(200, 4))
    with no_grad():
        g, mask = encode(params, ctx, [4] * 200)
        out = decode_entities(params, g, mask, [None] * 200, DecodeConfig(max_entity_len=12))
    assert sum(tuple(o) in valid for o in out) < 200


def test_decode_config_validation():
    with pytest.raises(ValueError):
        DecodeConfig(mode="beam")
    with pytest.raises(ValueError):
        DecodeConfig(k=0)
    with pytest.raises(ValueError):
        DecodeConfig(temperature=0)
    with pytest.raises(ValueError):
        DecodeConfig(max_response_len=0)
