import math

import numpy as np
import pytest

from _tiny import tiny_problem
from eco.autodiff import Tensor, no_grad
from eco.model import (ModelConfig, decode_entity_step, encode, encode_with_entity, entity_loss,
                       init_params, load_checkpoint, logit_concat, pad_batch, save_checkpoint,
                       token_nll)
from eco.training import TrainFlags, joint_loss


def test_uniform_loss_is_log_v():
    V = 7
    d = np.full((4, V), 1 / V)
    assert float(token_nll(d, [0, 3, 6, 2]).data) == pytest.approx(math.log(V), abs=1e-12)


def test_one_hot_loss_is_zero():
    d = np.eye(3)[[2, 0, 1]]
    assert float(token_nll(d, [2, 0, 1]).data) == 0.0


def test_three_token_hand_oracle():
    d = np.array([[0.7, 0.2, 0.1], [0.25, 0.25, 0.5], [0.1, 0.6, 0.3]])
    gold = [0, 2, 1]
    hand = -(math.log(0.7) + math.log(0.5) + math.log(0.6)) / 3
    assert abs(float(token_nll(d, gold).data) - hand) < 1e-12
    assert float(entity_loss(d, None).data) == 0.0


def test_logit_concat_selection_and_convexity(rng):
    W = Tensor(rng.normal(size=(5, 3)))
    one_hot = Tensor(np.eye(5)[[3]][None])
    np.testing.assert_array_equal(logit_concat(one_hot, W).data[0, 0], W.data[3])
    half = np.zeros((1, 1, 5))
    half[0, 0, [1, 4]] = 0.5
    np.testing.assert_allclose(logit_concat(Tensor(half), W).data[0, 0], (W.data[1] + W.data[4]) / 2)


def test_encode_shapes_and_determinism():
    p = init_params(20, ModelConfig(d_model=8, d_ff=16, max_len=16), seed=0)
    ids = pad_batch([[4, 7, 9], [4, 8]])
    h1, m1 = encode(p, ids, [3, 2])
    h2, _ = encode(p, ids, [3, 2])
    assert h1.shape == (2, 3, 8)
    np.testing.assert_array_equal(m1, [[True, True, True], [True, True, False]])
    np.testing.assert_array_equal(h1.data, h2.data)


def test_entity_ids_and_one_hot_repr_agree():
    p = init_params(20, ModelConfig(d_model=8, d_ff=16, max_len=16), seed=1)
    cu, ent = pad_batch([[4, 7, 9], [4, 8]]), pad_batch([[10, 11, 2], [12, 2]])
    a, ma = encode_with_entity(p, cu, [3, 2], entity_ids=ent, entity_lengths=[3, 2])
    rep = logit_concat(Tensor(np.eye(20)[ent]), p.W_e)
    b, mb = encode_with_entity(p, cu, [3, 2], entity_repr=rep, entity_lengths=[3, 2])
    np.testing.assert_array_equal(ma, mb)
    np.testing.assert_allclose(a.data[ma], b.data[mb], atol=1e-14)


def test_empty_entity_segment_equals_encode():
    p = init_params(20, ModelConfig(d_model=8, d_ff=16, max_len=16), seed=1)
    cu = pad_batch([[4, 7, 9]])
    h, _ = encode(p, cu, [3])
    h2, _ = encode_with_entity(p, cu, [3], entity_ids=np.zeros((1, 0), dtype=int), entity_lengths=[0])
    np.testing.assert_array_equal(h.data, h2.data)
    with pytest.raises(ValueError):
        encode_with_entity(p, cu, [3])


def test_zero_output_layer_gives_uniform():
    p = init_params(12, ModelConfig(d_model=8, d_ff=16, max_len=16), seed=2)
    p.dec_entity["out_proj"].data[:] = 0
    g, m = encode(p, pad_batch([[4, 5]]), [2])
    dist = decode_entity_step(p, [6, 7], g, m)
    np.testing.assert_allclose(dist, np.full(12, 1 / 12), atol=1e-15)
    p2 = init_params(12, ModelConfig(d_model=8, d_ff=16, max_len=16), seed=2)
    d2 = decode_entity_step(p2, [6], *encode(p2, pad_batch([[4, 5]]), [2]))
    assert np.all(d2 > 0) and abs(d2.sum() - 1) < 1e-12


def _we_grad(stop: bool):
    """W_e gradient when LogitConcat is the only use of W_e."""
    kb, vocab, trie, params, samples = tiny_problem()
    W_e = params.W_e
    dists = Tensor(np.full((1, 3, len(vocab)), 1 / len(vocab)))
    W_e.grad = None
    rep = logit_concat(dists, W_e, stop_gradient=stop)
    (rep * rep).sum().backward()
    return W_e.grad


def test_stop_grad_on_embedding_is_exact_zero():
    g = _we_grad(stop=True)
    assert g is None or not np.any(g)
    assert np.any(_we_grad(stop=False))


def test_joint_loss_parts():
    kb, vocab, trie, params, samples = tiny_problem()
    labeled = [s for s in samples if s.entity is not None]
    unlabeled = [s for s in samples if s.entity is None]
    only_u = joint_loss(params, unlabeled, trie, TrainFlags(), vocab)
    assert only_u.entity == 0.0 and only_u.n_labeled == 0
    assert float(only_u.total.data) == pytest.approx(only_u.response)
    only_l = joint_loss(params, labeled, trie, TrainFlags(), vocab)
    assert float(only_l.total.data) == pytest.approx(only_l.entity + only_l.response)
    with pytest.raises(ValueError):
        joint_loss(params, [], trie)


def test_checkpoint_round_trip(tmp_path):
    kb, vocab, trie, params, samples = tiny_problem()
    path = tmp_path / "ck.json"
    save_checkpoint(path, params, vocab.itos, {"seed": 3})
    loaded, itos, meta = load_checkpoint(path)
    assert itos == vocab.itos and meta["seed"] == 3
    for (n1, t1), (n2, t2) in zip(params.named(), loaded.named()):
        assert n1 == n2
        np.testing.assert_array_equal(t1.data, t2.data)
    with no_grad():
        a = joint_loss(params, samples, trie, TrainFlags(), vocab).total.data
        b = joint_loss(loaded, samples, trie, TrainFlags(), vocab).total.data
    assert a == b


def test_constrained_softmax_matches_renormalization_and_survives_underflow(rng):
    from eco.autodiff import numerical_grad, parameter
    from eco.model import constrained_dists, constrained_softmax

    logits = rng.normal(size=(3, 4, 7))
    masks = rng.random((3, 4, 7)) < 0.5
    masks[..., 0] = True
    a = constrained_softmax(Tensor(logits), masks).data
    b = constrained_dists(Tensor(logits).softmax(-1), masks).data
    np.testing.assert_allclose(a, b, atol=1e-14)

    # allowed tokens 80 nats below the best one: ~1e-35 mass, P/Z cannot cope
    peaked = np.array([[[0.0, -80.0, -81.0]]])
    allowed = np.array([[[False, True, True]]])
    with pytest.raises(Exception):
        constrained_dists(Tensor(peaked).softmax(-1), allowed)
    out = constrained_softmax(Tensor(peaked), allowed).data[0, 0]
    np.testing.assert_allclose(out, [0.0, 1 / (1 + math.exp(-1)), 1 / (1 + math.e)], atol=1e-12)

    x = parameter(rng.normal(size=(2, 5)))
    m = np.array([[1, 0, 1, 1, 0], [0, 1, 1, 0, 0]], dtype=bool)
    w = rng.normal(size=(2, 5))
    f = lambda: float((constrained_softmax(x, m).data * w).sum())
    (constrained_softmax(x, m) * w).sum().backward()
    np.testing.assert_allclose(x.grad, numerical_grad(f, x), atol=1e-8)
