"""Shared-encoder / two-decoder sequence model on top of :mod:`eco.autodiff`.

One embedding matrix ``W_e`` (vocab x d) serves the input lookup, the tied
output projections of both decoders and the LogitConcat product. The encoder
is a single self-attention block; each decoder is a causal self-attention
block followed by cross-attention over the encoder states.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .autodiff import Tensor, concat, embed, no_grad, parameter, pick, stop_grad, where
from .trie import DegenerateDistributionError

log = logging.getLogger(__name__)

NEG_INF = -1e9


@dataclass
class ModelConfig:
    d_model: int = 24
    d_ff: int = 48
    max_len: int = 256
    max_entity_len: int = 16
    max_response_len: int = 32
    init_scale: float = 0.08


_ATTN = ("wq", "wk", "wv", "wo")


class ModelParams:
    """All trainable tensors. ``encoder`` is one dict used by every encode call."""

    def __init__(self, W_e: Tensor, encoder: dict, dec_entity: dict, dec_response: dict,
                 config: ModelConfig):
        self.W_e = W_e
        self.encoder = encoder
        self.dec_entity = dec_entity
        self.dec_response = dec_response
        self.config = config

    @property
    def vocab_size(self) -> int:
        return self.W_e.shape[0]

    def named(self) -> Iterator[tuple[str, Tensor]]:
        yield "W_e", self.W_e
        for prefix, group in (("enc", self.encoder), ("dec_e", self.dec_entity),
                              ("dec_r", self.dec_response)):
            for k in sorted(group):
                yield f"{prefix}.{k}", group[k]

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named()]

    def zero_grad(self) -> None:
        for t in self.tensors():
            t.grad = None

    def copy(self) -> "ModelParams":
        def dup(group):
            return {k: parameter(v.data.copy(), v.name) for k, v in group.items()}
        return ModelParams(parameter(self.W_e.data.copy(), "W_e"), dup(self.encoder),
                           dup(self.dec_entity), dup(self.dec_response), self.config)

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.named()}

    def to_json(self) -> dict:
        return {
            "config": asdict(self.config),
            "params": {k: {"shape": list(t.shape), "data": t.data.ravel().tolist()}
                       for k, t in self.named()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelParams":
        cfg = ModelConfig(**obj["config"])
        groups = {"enc": {}, "dec_e": {}, "dec_r": {}}
        W_e = None
        for name, rec in obj["params"].items():
            t = parameter(np.asarray(rec["data"], dtype=np.float64).reshape(rec["shape"]), name)
            if name == "W_e":
                W_e = t
            else:
                g, k = name.split(".", 1)
                groups[g][k] = t
        return cls(W_e, groups["enc"], groups["dec_e"], groups["dec_r"], cfg)


def _block_params(rng, d: int, d_ff: int, n_pos: int, scale: float, prefix: str,
                  cross: bool) -> dict:
    def u(*shape):
        return rng.uniform(-scale, scale, size=shape)
    p = {"pos": u(n_pos, d)}
    for k in _ATTN:
        p[f"self_{k}"] = u(d, d)
    if cross:
        for k in _ATTN:
            p[f"cross_{k}"] = u(d, d)
    p.update(ff_w1=u(d, d_ff), ff_b1=np.zeros(d_ff), ff_w2=u(d_ff, d), ff_b2=np.zeros(d))
    return {k: parameter(v, f"{prefix}.{k}") for k, v in p.items()}


def init_params(vocab_size: int, config: ModelConfig | None = None, seed: int = 0) -> ModelParams:
    config = config or ModelConfig()
    rng = np.random.default_rng(seed)
    d, s = config.d_model, config.init_scale
    W_e = parameter(rng.uniform(-s, s, size=(vocab_size, d)), "W_e")
    enc = _block_params(rng, d, config.d_ff, config.max_len + config.max_entity_len, s, "enc", False)
    decs = []
    for name, n_pos in (("dec_e", config.max_entity_len + 1), ("dec_r", config.max_response_len + 1)):
        p = _block_params(rng, d, config.d_ff, n_pos, s, name, True)
        p["out_proj"] = parameter(rng.uniform(-s, s, size=(d, d)), f"{name}.out_proj")
        p["out_bias"] = parameter(np.zeros(vocab_size), f"{name}.out_bias")
        decs.append(p)
    return ModelParams(W_e, enc, decs[0], decs[1], config)


# ---------------------------------------------------------------------------
# building blocks


def _attention(q_in: Tensor, kv_in: Tensor, p: dict, kind: str, key_mask: np.ndarray,
               causal: bool = False) -> Tensor:
    q = q_in @ p[f"{kind}_wq"]
    k = kv_in @ p[f"{kind}_wk"]
    v = kv_in @ p[f"{kind}_wv"]
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(q.shape[-1]))
    allowed = key_mask[:, None, :]
    if causal:
        tq = q.shape[1]
        allowed = allowed & np.tri(tq, kv_in.shape[1], dtype=bool)[None]
    attn = (scores + np.where(allowed, 0.0, NEG_INF)).softmax(-1)
    return (attn @ v) @ p[f"{kind}_wo"]


def _feed_forward(x: Tensor, p: dict) -> Tensor:
    return (x @ p["ff_w1"] + p["ff_b1"]).tanh() @ p["ff_w2"] + p["ff_b2"]


def lengths_mask(lengths: Sequence[int], width: int) -> np.ndarray:
    return np.arange(width)[None, :] < np.asarray(lengths)[:, None]


def pad_batch(seqs: Sequence[Sequence[int]], pad: int = 0, width: int | None = None) -> np.ndarray:
    width = width if width is not None else max((len(s) for s in seqs), default=0)
    out = np.full((len(seqs), max(width, 1)), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


def _encode_vectors(params: ModelParams, x: Tensor, positions: np.ndarray,
                    mask: np.ndarray) -> Tensor:
    enc = params.encoder
    h = x + embed(enc["pos"], positions)
    h = h + _attention(h, h, enc, "self", mask)
    return h + _feed_forward(h, enc)


def encode(params: ModelParams, ids: np.ndarray, lengths: Sequence[int]) -> tuple[Tensor, np.ndarray]:
    """Hidden states for a right-padded batch of token ids.

    Returns ``(H, mask)`` with ``H`` of shape (B, T, d) and a boolean key mask.
    """
    ids = np.asarray(ids)
    mask = lengths_mask(lengths, ids.shape[1])
    positions = np.broadcast_to(np.arange(ids.shape[1]), ids.shape)
    return _encode_vectors(params, embed(params.W_e, ids), positions, mask), mask


def logit_concat(dists: Tensor, W_e: Tensor, stop_gradient: bool = True) -> Tensor:
    """Soft entity representation ``dists @ W_e`` with W_e gradient-stopped."""
    return dists @ (stop_grad(W_e) if stop_gradient else W_e)


def encode_with_entity(params: ModelParams, cu_ids: np.ndarray, cu_lengths: Sequence[int],
                       entity_ids: np.ndarray | None = None,
                       entity_repr: Tensor | None = None,
                       entity_lengths: Sequence[int] | None = None) -> tuple[Tensor, np.ndarray]:
    """Encode ``[C;U]`` followed by an entity segment.

    The entity segment is either token ids (embedded through ``W_e``) or a
    precomputed representation of shape (B, K, d). Padding between the two
    blocks is masked out and positions stay contiguous per row.
    """
    if (entity_ids is None) == (entity_repr is None):
        raise ValueError("pass exactly one of entity_ids / entity_repr")
    cu_ids = np.asarray(cu_ids)
    cu_lengths = np.asarray(cu_lengths)
    ent = embed(params.W_e, np.asarray(entity_ids)) if entity_ids is not None else entity_repr
    k = ent.shape[1]
    if entity_lengths is None:
        entity_lengths = np.full(len(cu_lengths), k)
    entity_lengths = np.asarray(entity_lengths)
    if k == 0 or not entity_lengths.any():
        return encode(params, cu_ids, cu_lengths)
    t1 = cu_ids.shape[1]
    x = concat([embed(params.W_e, cu_ids), ent], axis=1)
    positions = np.concatenate(
        [np.broadcast_to(np.arange(t1), (len(cu_lengths), t1)),
         cu_lengths[:, None] + np.arange(k)[None, :]], axis=1)
    mask = np.concatenate([lengths_mask(cu_lengths, t1), lengths_mask(entity_lengths, k)], axis=1)
    positions = np.where(mask, positions, 0)
    return _encode_vectors(params, x, positions, mask), mask


def decoder_logits(params: ModelParams, dec: dict, y_in: np.ndarray, y_lengths: Sequence[int],
                   memory: Tensor, memory_mask: np.ndarray) -> Tensor:
    """Teacher-forced logits (B, K, V) for decoder inputs ``y_in``."""
    y_in = np.asarray(y_in)
    mask = lengths_mask(y_lengths, y_in.shape[1])
    positions = np.broadcast_to(np.arange(y_in.shape[1]), y_in.shape)
    x = embed(params.W_e, y_in) + embed(dec["pos"], positions)
    x = x + _attention(x, x, dec, "self", mask | ~mask.any(1, keepdims=True), causal=True)
    x = x + _attention(x, memory, dec, "cross", memory_mask)
    x = x + _feed_forward(x, dec)
    return (x @ dec["out_proj"]) @ params.W_e.T + dec["out_bias"]


def memory_kv(dec: dict, memory: Tensor) -> tuple[np.ndarray, np.ndarray]:
    """Cross-attention keys and values of a fixed memory, for step-wise decoding."""
    m = memory.data
    return m @ dec["cross_wk"].data, m @ dec["cross_wv"].data


def _last_attention(q_in: np.ndarray, k: np.ndarray, v: np.ndarray, p: dict, kind: str,
                    key_mask: np.ndarray) -> np.ndarray:
    q = q_in @ p[f"{kind}_wq"].data
    scores = np.einsum("bd,btd->bt", q, k) / np.sqrt(q.shape[-1])
    scores = np.where(key_mask, scores, scores + NEG_INF)
    scores = np.exp(scores - scores.max(-1, keepdims=True))
    attn = scores / scores.sum(-1, keepdims=True)
    return np.einsum("bt,btd->bd", attn, v) @ p[f"{kind}_wo"].data


def next_token_logits(params: ModelParams, dec: dict, y_in: np.ndarray,
                      mem_kv: tuple[np.ndarray, np.ndarray], memory_mask: np.ndarray) -> np.ndarray:
    """Logits (B, V) for the position after full-length prefixes ``y_in``.

    Forward-only equivalent of ``decoder_logits(...)[:, -1]`` that skips
    every computation the last position does not depend on.
    """
    y_in = np.asarray(y_in)
    positions = np.arange(y_in.shape[1])
    x = params.W_e.data[y_in] + dec["pos"].data[positions][None]
    k, v = x @ dec["self_wk"].data, x @ dec["self_wv"].data
    last = x[:, -1]
    last = last + _last_attention(last, k, v, dec, "self", np.ones(y_in.shape, dtype=bool))
    last = last + _last_attention(last, mem_kv[0], mem_kv[1], dec, "cross", memory_mask)
    hid = np.tanh(last @ dec["ff_w1"].data + dec["ff_b1"].data)
    last = last + hid @ dec["ff_w2"].data + dec["ff_b2"].data
    return (last @ dec["out_proj"].data) @ params.W_e.data.T + dec["out_bias"].data


def shift_right(targets: Sequence[Sequence[int]], bos: int = 1) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """(decoder inputs, padded targets, lengths) for teacher forcing."""
    lengths = [len(t) for t in targets]
    y_out = pad_batch(targets)
    y_in = pad_batch([[bos] + list(t[:-1]) for t in targets], width=y_out.shape[1])
    return y_in, y_out, lengths


def decode_entity_step(params: ModelParams, prefix: Sequence[int], g: Tensor,
                       g_mask: np.ndarray | None = None, bos: int = 1) -> np.ndarray:
    """Next-token distribution of the entity decoder for one sequence."""
    if g_mask is None:
        g_mask = np.ones(g.shape[:2], dtype=bool)
    y_in = np.asarray([[bos] + list(prefix)])
    with no_grad():
        logits = decoder_logits(params, params.dec_entity, y_in, [y_in.shape[1]], g, g_mask)
        return logits.softmax(-1).data[0, -1]


# ---------------------------------------------------------------------------
# losses


def sequence_nll(logprobs: Tensor, targets: np.ndarray, lengths: Sequence[int]) -> Tensor:
    """Per-row mean token NLL, shape (B,)."""
    mask = lengths_mask(lengths, np.asarray(targets).shape[1]).astype(np.float64)
    tok = -pick(logprobs, np.asarray(targets)) * mask
    return tok.sum(axis=1) * (1.0 / np.maximum(mask.sum(axis=1), 1.0))


def token_nll(step_dists, gold: Sequence[int]) -> Tensor:
    """Mean NLL of ``gold`` under step distributions (K, V); probabilities, not logits."""
    d = step_dists if isinstance(step_dists, Tensor) else Tensor(step_dists)
    if len(gold) == 0:
        return Tensor(0.0)
    return -(pick(d, np.asarray(gold)).log()).mean()


def entity_loss(step_dists, gold: Sequence[int] | None) -> Tensor:
    """Entity cross-entropy; unlabeled samples (``gold is None``) contribute 0."""
    if gold is None:
        return Tensor(0.0)
    return token_nll(step_dists, gold)


def response_loss(step_dists, gold: Sequence[int]) -> Tensor:
    return token_nll(step_dists, gold)


def constrained_dists(probs: Tensor, masks: np.ndarray) -> Tensor:
    """Differentiable trie renormalization of (B, K, V) step distributions."""
    kept = probs * masks.astype(np.float64)
    z = kept.sum(axis=-1, keepdims=True)
    if np.any(z.data < 1e-30):
        raise DegenerateDistributionError("constrained step with no probability mass")
    return kept / z


def constrained_softmax(logits: Tensor, masks: np.ndarray) -> Tensor:
    """softmax(logits) renormalized over ``masks``, computed on masked logits.

    Equal to ``constrained_dists(logits.softmax(-1), masks)`` but it keeps
    working when the allowed tokens' probability underflows, which happens
    once a trained decoder is confident about a token the trie forbids.
    """
    masks = np.asarray(masks, dtype=bool)
    if not masks.any(axis=-1).all():
        raise DegenerateDistributionError("constrained step with no allowed token")
    return where(masks, logits, -1e30).softmax(-1)


def global_norm_clip(tensors: Sequence[Tensor], max_norm: float) -> float:
    total = np.sqrt(sum(float((t.grad ** 2).sum()) for t in tensors if t.grad is not None))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for t in tensors:
            if t.grad is not None:
                t.grad *= scale
    return total


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, tensors: Sequence[Tensor]) -> None:
        self.step_count += 1
        b1t = 1 - self.beta1 ** self.step_count
        b2t = 1 - self.beta2 ** self.step_count
        for t in tensors:
            if t.grad is None:
                continue
            key = id(t)
            m = self.m.get(key)
            if m is None:
                m = self.m[key] = np.zeros_like(t.data)
                self.v[key] = np.zeros_like(t.data)
            v = self.v[key]
            m *= self.beta1
            m += (1 - self.beta1) * t.grad
            v *= self.beta2
            v += (1 - self.beta2) * t.grad ** 2
            t.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def save_checkpoint(path: str | Path, params: ModelParams, vocab_tokens: Sequence[str],
                    extra: dict | None = None) -> None:
    obj = {"version": 1, "vocab": list(vocab_tokens), **(extra or {}), **params.to_json()}
    Path(path).write_text(json.dumps(obj))


def load_checkpoint(path: str | Path) -> tuple[ModelParams, list[str], dict]:
    obj = json.loads(Path(path).read_text())
    if obj.get("version") != 1:
        raise ValueError(f"unsupported checkpoint version {obj.get('version')}")
    params = ModelParams.from_json(obj)
    meta = {k: v for k, v in obj.items() if k not in ("params", "vocab", "config")}
    return params, obj["vocab"], meta
