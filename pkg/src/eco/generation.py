"""Autoregressive decoding: trie-constrained entities and free responses."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Tensor, no_grad, softmax
from .augment import Dialog
from .kb import Vocabulary
from .model import (ModelParams, constrained_softmax, decoder_logits, encode, encode_with_entity,
                    logit_concat, memory_kv, next_token_logits, pad_batch)
from .samples import context_words, truncate_left
from .trie import EntityTrie


@dataclass(frozen=True)
class DecodeConfig:
    mode: str = "greedy"          # "greedy" or "topk"
    k: int = 5
    temperature: float = 1.0
    max_entity_len: int = 16
    max_response_len: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("greedy", "topk"):
            raise ValueError(f"unknown decode mode {self.mode!r}")
        if self.k < 1 or self.temperature <= 0:
            raise ValueError("k must be >= 1 and temperature > 0")
        if self.max_entity_len < 1 or self.max_response_len < 1:
            raise ValueError("decode lengths must be >= 1")


def _choose(probs: np.ndarray, cfg: DecodeConfig, rng: np.random.Generator) -> np.ndarray:
    """Next token per row. Greedy ties go to the lowest id (np.argmax)."""
    if cfg.mode == "greedy":
        return probs.argmax(axis=-1)
    out = np.empty(len(probs), dtype=np.int64)
    for i, p in enumerate(probs):
        top = np.argsort(-p, kind="stable")[:cfg.k]
        w = p[top]
        out[i] = top[rng.choice(len(top), p=w / w.sum())]
    return out


def _autoregress(params: ModelParams, dec: dict, memory: Tensor, memory_mask: np.ndarray,
                 max_steps: int, cfg: DecodeConfig, rng: np.random.Generator, eos: int, bos: int,
                 tries: Sequence[EntityTrie | None] | None = None) -> list[list[int]]:
    n = memory.shape[0]
    seqs: list[list[int]] = [[] for _ in range(n)]
    nodes = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    mem_kv = memory_kv(dec, memory)
    with no_grad():
        for _ in range(max_steps):
            if len(active) == 0:
                break
            y_in = np.asarray([[bos] + seqs[i] for i in active])
            logits = next_token_logits(params, dec, y_in, (mem_kv[0][active], mem_kv[1][active]),
                                       memory_mask[active])
            if not np.isfinite(logits).all():
                raise FloatingPointError("non-finite decoder logits")
            logits = logits / cfg.temperature
            if tries is not None:
                # renormalizing softmax over the allowed set == softmax of masked logits;
                # the logit form survives allowed mass that underflows in probability space
                mask = np.ones_like(logits, dtype=bool)
                for row, i in enumerate(active):
                    if tries[i] is not None:
                        mask[row] = False
                        mask[row, list(tries[i].children[nodes[i]])] = True
                logits = np.where(mask, logits, -np.inf)
            probs = softmax(logits)
            toks = _choose(probs, cfg, rng)
            keep = []
            for row, i in enumerate(active):
                tok = int(toks[row])
                seqs[i].append(tok)
                if tries is not None and tries[i] is not None:
                    nodes[i] = tries[i].children[nodes[i]][tok]
                if tok != eos:
                    keep.append(i)
            active = np.asarray(keep, dtype=np.int64)
    if tries is not None:
        for i in active:
            # EOS is always reachable on a trie path of bounded depth
            assert tries[i] is None, "constrained decode hit max length before EOS"
    return seqs


def decode_entities(params: ModelParams, g: Tensor, g_mask: np.ndarray,
                    tries: Sequence[EntityTrie | None], cfg: DecodeConfig,
                    rng: np.random.Generator | None = None, eos: int = 2, bos: int = 1) -> list[list[int]]:
    """Batched entity generation; rows whose trie is None decode unconstrained."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    return _autoregress(params, params.dec_entity, g, g_mask, cfg.max_entity_len, cfg, rng,
                        eos, bos, tries=list(tries))


def decode_responses(params: ModelParams, h: Tensor, h_mask: np.ndarray, cfg: DecodeConfig,
                     rng: np.random.Generator | None = None, eos: int = 2, bos: int = 1) -> list[list[int]]:
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    return _autoregress(params, params.dec_response, h, h_mask, cfg.max_response_len, cfg, rng, eos, bos)


def path_masks(seqs: Sequence[Sequence[int]], tries: Sequence[EntityTrie | None], width: int,
               vocab_size: int) -> np.ndarray:
    """Allowed-token masks (B, width, V) along each generated path.

    Steps past the end of a sequence, off-trie steps and rows without a
    trie get an all-true mask.
    """
    masks = np.ones((len(seqs), width, vocab_size), dtype=bool)
    for b, (seq, trie) in enumerate(zip(seqs, tries)):
        if trie is None:
            continue
        node = trie.root
        for k, tok in enumerate(seq):
            if node < 0:
                break
            masks[b, k] = False
            masks[b, k, list(trie.children[node])] = True
            node = trie.step(node, tok)
    return masks


def entity_step_dists(params: ModelParams, g: Tensor, g_mask: np.ndarray,
                      seqs: Sequence[Sequence[int]], tries: Sequence[EntityTrie | None],
                      bos: int = 1) -> Tensor:
    """Teacher-forced (and, where a trie is given, renormalized) step distributions along ``seqs``."""
    lengths = [len(s) for s in seqs]
    y_in = pad_batch([[bos] + list(s[:-1]) for s in seqs])
    logits = decoder_logits(params, params.dec_entity, y_in, lengths, g, g_mask)
    if all(t is None for t in tries):
        return logits.softmax(-1)
    return constrained_softmax(logits, path_masks(seqs, tries, y_in.shape[1], params.vocab_size))


def select_trie(tries: Mapping[str, EntityTrie] | EntityTrie | None, domain: str) -> EntityTrie | None:
    if tries is None or isinstance(tries, EntityTrie):
        return tries
    return tries.get(domain)


def _encode_contexts(params: ModelParams, contexts: Sequence[Sequence[int]]):
    cu = pad_batch(contexts)
    lengths = [len(c) for c in contexts]
    g, mask = encode(params, cu, lengths)
    return cu, lengths, g, mask


def generate_entity(params: ModelParams, trie: EntityTrie | None, context: Sequence[int],
                    utterance: Sequence[int], cfg: DecodeConfig, kb_hash: str = "",
                    vocab: Vocabulary | None = None) -> list[int]:
    """One entity for ``[context; utterance]``; unconstrained when ``trie`` is None."""
    if trie is not None:
        trie.check_source(kb_hash)
    eos = vocab.eos_id if vocab else 2
    bos = vocab.bos_id if vocab else 1
    with no_grad():
        _, _, g, mask = _encode_contexts(params, [list(context) + list(utterance)])
        return decode_entities(params, g, mask, [trie], cfg, eos=eos, bos=bos)[0]


def generate_response(params: ModelParams, context: Sequence[int], utterance: Sequence[int],
                      entity: Sequence[int], cfg: DecodeConfig,
                      vocab: Vocabulary | None = None) -> list[int]:
    eos = vocab.eos_id if vocab else 2
    bos = vocab.bos_id if vocab else 1
    cu = list(context) + list(utterance)
    with no_grad():
        h, mask = encode_with_entity(params, pad_batch([cu]), [len(cu)],
                                     entity_ids=pad_batch([list(entity)]),
                                     entity_lengths=[len(entity)])
        return decode_responses(params, h, mask, cfg, eos=eos, bos=bos)[0]


@dataclass
class TurnPrediction:
    dialog_id: str
    turn: int
    entity: list[int]
    response: list[int]

    def to_json(self, vocab: Vocabulary) -> dict:
        return {"dialog_id": self.dialog_id, "turn": self.turn,
                "generated_entity": vocab.decode(self.entity),
                "generated_response": vocab.decode(self.response)}


def generate_batch(params: ModelParams, contexts: Sequence[Sequence[int]],
                   tries: Sequence[EntityTrie | None], cfg: DecodeConfig, vocab: Vocabulary,
                   eval_mode: str = "tokens",
                   rng: np.random.Generator | None = None) -> tuple[list[list[int]], list[list[int]]]:
    """Entities and responses for a batch of ``[C;U]`` id sequences.

    ``eval_mode="tokens"`` feeds the generated entity ids to the response
    encoder; ``"logits"`` feeds the soft LogitConcat representation instead.
    """
    if eval_mode not in ("tokens", "logits"):
        raise ValueError(f"unknown eval mode {eval_mode!r}")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    eos, bos = vocab.eos_id, vocab.bos_id
    with no_grad():
        cu, lengths, g, mask = _encode_contexts(params, contexts)
        entities = decode_entities(params, g, mask, tries, cfg, rng, eos, bos)
        ent_len = [len(e) for e in entities]
        if eval_mode == "tokens":
            h, hmask = encode_with_entity(params, cu, lengths, entity_ids=pad_batch(entities),
                                          entity_lengths=ent_len)
        else:
            dists = entity_step_dists(params, g, mask, entities, tries, bos)
            h, hmask = encode_with_entity(params, cu, lengths,
                                          entity_repr=logit_concat(dists, params.W_e),
                                          entity_lengths=ent_len)
        responses = decode_responses(params, h, hmask, cfg, rng, eos, bos)
    return entities, responses


def generate_turn(params: ModelParams, tries, dialog: Dialog, t: int, cfg: DecodeConfig,
                  vocab: Vocabulary, eval_mode: str = "tokens") -> tuple[list[int], list[int]]:
    """Entity and response for turn ``t`` of ``dialog`` given its gold history."""
    cu = truncate_left(vocab.ids(context_words(dialog, t)), params.config.max_len)
    ents, resps = generate_batch(params, [cu], [select_trie(tries, dialog.domain)], cfg, vocab,
                                 eval_mode)
    return ents[0], resps[0]


def generate_corpus(params: ModelParams, dialogs: Sequence[Dialog], tries, cfg: DecodeConfig,
                    vocab: Vocabulary, eval_mode: str = "tokens",
                    batch_size: int = 64) -> list[TurnPrediction]:
    """Predictions for every turn of every dialog (gold history as context)."""
    items = []
    for d in dialogs:
        for t in range(len(d.turns)):
            cu = truncate_left(vocab.ids(context_words(d, t)), params.config.max_len)
            items.append((d.id, t, cu, select_trie(tries, d.domain)))
    rng = np.random.default_rng(cfg.seed)
    out = []
    for start in range(0, len(items), batch_size):
        chunk = items[start:start + batch_size]
        ents, resps = generate_batch(params, [c[2] for c in chunk], [c[3] for c in chunk], cfg,
                                     vocab, eval_mode, rng)
        for (did, t, _, _), e, r in zip(chunk, ents, resps):
            out.append(TurnPrediction(did, t, e, r))
    return out
