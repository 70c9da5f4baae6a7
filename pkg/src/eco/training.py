"""Joint entity/response objective and the training loop."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .autodiff import Tensor, concat, embed, no_grad
from .augment import AugmentReport, Dialog, Template, augment_batch
from .generation import DecodeConfig, decode_entities, entity_step_dists, select_trie
from .kb import KnowledgeBase, Vocabulary
from .model import (Adam, ModelParams, decoder_logits, encode, encode_with_entity,
                    global_norm_clip, logit_concat, pad_batch, save_checkpoint, sequence_nll,
                    shift_right)
from .samples import TurnSample, corpus_samples
from .trie import EntityTrie

log = logging.getLogger(__name__)


@dataclass
class TrainFlags:
    """Ablation switches."""
    no_trie: bool = False            # no trie constraint anywhere
    no_logit_concat: bool = False    # d_tr entities enter as constant ids
    no_stop_grad: bool = False       # let LogitConcat update W_e
    trie_in_training: bool = True    # constrain LogitConcat entity generation


@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 16
    p: int = 12
    seed: int = 0
    clip_norm: float = 1.0
    eval_every: int = 5
    au_only: bool = False
    tr_only: bool = False
    flags: TrainFlags = field(default_factory=TrainFlags)

    def __post_init__(self):
        if self.au_only and self.tr_only:
            raise ValueError("au_only and tr_only are mutually exclusive")


@dataclass
class LossParts:
    total: Tensor
    entity: float
    response: float
    n_labeled: int
    n_rows: int


def joint_loss(params: ModelParams, batch: Sequence[TurnSample],
               tries: Mapping[str, EntityTrie] | EntityTrie | None,
               flags: TrainFlags | None = None, vocab: Vocabulary | None = None) -> LossParts:
    """Entity loss on labeled turns plus response loss on every turn.

    Labeled turns feed their gold entity to the response encoder. Unlabeled
    turns generate an entity greedily (trie-constrained unless disabled) and
    feed its step distributions through LogitConcat, or its ids as
    constants when LogitConcat is off.
    """
    if not batch:
        raise ValueError("empty batch")
    flags = flags or TrainFlags()
    eos = vocab.eos_id if vocab else 2
    bos = vocab.bos_id if vocab else 1
    labeled = [s for s in batch if s.entity is not None]
    unlabeled = [s for s in batch if s.entity is None]
    rows = labeled + unlabeled
    n, nl = len(rows), len(labeled)
    cu = pad_batch([s.cu for s in rows])
    cu_len = [len(s.cu) for s in rows]
    g, gmask = encode(params, cu, cu_len)
    total = Tensor(0.0)
    l_en = 0.0
    parts, ent_len = [], []

    if labeled:
        y_in, y_out, y_len = shift_right([s.entity for s in labeled], bos)
        logits = decoder_logits(params, params.dec_entity, y_in, y_len, g[:nl], gmask[:nl])
        en = sequence_nll(logits.log_softmax(-1), y_out, y_len).mean()
        total = total + en
        l_en = float(en.data)
        parts.append(embed(params.W_e, pad_batch([s.entity for s in labeled])))
        ent_len += y_len

    if unlabeled:
        g_u, gmask_u = g[nl:], gmask[nl:]
        use_trie = not flags.no_trie and flags.trie_in_training
        row_tries = [select_trie(tries, s.domain) if use_trie else None for s in unlabeled]
        with no_grad():
            gen = decode_entities(params, Tensor(g_u.data), gmask_u, row_tries,
                                  DecodeConfig(max_entity_len=params.config.max_entity_len),
                                  eos=eos, bos=bos)
        if flags.no_logit_concat:
            parts.append(embed(params.W_e, pad_batch(gen)))
        else:
            dists = entity_step_dists(params, g_u, gmask_u, gen, row_tries, bos)
            parts.append(logit_concat(dists, params.W_e, stop_gradient=not flags.no_stop_grad))
        ent_len += [len(e) for e in gen]

    width = max(p.shape[1] for p in parts)
    parts = [p if p.shape[1] == width else
             concat([p, Tensor(np.zeros((p.shape[0], width - p.shape[1], p.shape[2])))], axis=1)
             for p in parts]
    ent = parts[0] if len(parts) == 1 else concat(parts, axis=0)
    h, hmask = encode_with_entity(params, cu, cu_len, entity_repr=ent, entity_lengths=ent_len)
    l_re = _response_nll(params, rows, h, hmask, bos).sum() * (1.0 / n)
    total = total + l_re
    return LossParts(total, l_en, float(l_re.data), nl, n)


def _response_nll(params: ModelParams, rows: Sequence[TurnSample], h: Tensor, hmask: np.ndarray,
                  bos: int) -> Tensor:
    y_in, y_out, y_len = shift_right([s.response for s in rows], bos)
    logits = decoder_logits(params, params.dec_response, y_in, y_len, h, hmask)
    return sequence_nll(logits.log_softmax(-1), y_out, y_len)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    entity_loss: float
    response_loss: float
    n_samples: int
    seconds: float
    dev: dict | None = None
    checkpoint: str | None = None


@dataclass
class TrainResult:
    params: ModelParams
    best_params: ModelParams
    initial_loss: float
    history: list[EpochRecord]
    best_epoch: int | None
    augment_report: AugmentReport | None = None

    @property
    def final_loss(self) -> float:
        return self.history[-1].train_loss if self.history else self.initial_loss


def epoch_training_dialogs(d_tr: Sequence[Dialog], templates: Mapping[str, Sequence[Template]],
                           kbs: Mapping[str, KnowledgeBase], cfg: TrainConfig, epoch: int,
                           report: AugmentReport | None = None) -> list[Dialog]:
    """D_tr joined with a fresh epoch-seeded augmentation (per the au/tr switches)."""
    d_au: list[Dialog] = []
    if not cfg.tr_only:
        for dom in sorted(templates):
            d_au += augment_batch(templates[dom], kbs[dom], p=cfg.p,
                                  rng_seed=cfg.seed * 100003 + epoch, report=report)
    d_tr_part = [] if cfg.au_only else [d.unlabeled() for d in d_tr]
    return d_tr_part + d_au


def bucketed_batches(samples: Sequence[TurnSample], batch_size: int, rng: np.random.Generator,
                     pool: int = 50) -> list[list[int]]:
    """Shuffled batches of similar context length (less padding per batch).

    Samples are shuffled, cut into pools of ``pool`` batches, sorted by
    length within each pool and chunked; the batch order is shuffled again.
    """
    order = rng.permutation(len(samples))
    span = batch_size * pool
    batches = []
    for start in range(0, len(order), span):
        chunk = sorted(order[start:start + span], key=lambda i: len(samples[i].cu))
        batches += [chunk[j:j + batch_size] for j in range(0, len(chunk), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


def _pooled(sums: np.ndarray) -> tuple[float, float]:
    """(L_en, L_re) over a whole set from per-batch (L_en * n_labeled, L_re * n_rows, n_labeled, n_rows).

    L_en is a mean over a batch's labeled rows, so weighting whole-batch
    totals by batch size would make the result depend on how labeled and
    unlabeled rows happen to fall into batches.
    """
    en = sums[0] / sums[2] if sums[2] else 0.0
    re = sums[1] / sums[3] if sums[3] else 0.0
    return float(en), float(re)


def _batch_sums(parts: LossParts) -> np.ndarray:
    return np.array([parts.entity * parts.n_labeled, parts.response * parts.n_rows,
                     parts.n_labeled, parts.n_rows], dtype=np.float64)


def mean_loss(params: ModelParams, samples: Sequence[TurnSample], tries, flags: TrainFlags,
              vocab: Vocabulary, batch_size: int = 64) -> float:
    """Joint loss over ``samples``: labeled-row mean entity NLL plus all-row mean response NLL."""
    sums = np.zeros(4)
    with no_grad():
        for start in range(0, len(samples), batch_size):
            sums += _batch_sums(joint_loss(params, samples[start:start + batch_size], tries, flags, vocab))
    return sum(_pooled(sums))


def train(params: ModelParams, d_tr: Sequence[Dialog], templates: Mapping[str, Sequence[Template]],
          kbs: Mapping[str, KnowledgeBase], tries: Mapping[str, EntityTrie], vocab: Vocabulary,
          cfg: TrainConfig, evaluate: Callable[[ModelParams], dict] | None = None,
          checkpoint_dir: str | Path | None = None, checkpoint_meta: dict | None = None,
          ) -> TrainResult:
    """Train in place; returns the final and best (by dev ``score``) parameters.

    ``evaluate`` is called every ``cfg.eval_every`` epochs (and after the last
    one) and must return a dict carrying a ``score`` entry.
    """
    rng = np.random.default_rng([cfg.seed, 17])
    opt = Adam(lr=cfg.lr)
    tensors = params.tensors()
    max_len = params.config.max_len
    first = corpus_samples(epoch_training_dialogs(d_tr, templates, kbs, cfg, 1), vocab, kbs, max_len)
    initial = mean_loss(params, first, tries, cfg.flags, vocab)
    history: list[EpochRecord] = []
    best_score, best_epoch, best_params = -math.inf, None, params.copy()
    report = AugmentReport()
    log.info("initial loss %.4f over %d turns", initial, len(first))

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        dialogs = epoch_training_dialogs(d_tr, templates, kbs, cfg, epoch,
                                         report if epoch == 1 else None)
        samples = first if epoch == 1 else corpus_samples(dialogs, vocab, kbs, max_len)
        sums = np.zeros(4)
        for b, idx in enumerate(bucketed_batches(samples, cfg.batch_size, rng)):
            batch = [samples[i] for i in idx]
            params.zero_grad()
            parts = joint_loss(params, batch, tries, cfg.flags, vocab)
            loss = float(parts.total.data)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {b}")
            parts.total.backward()
            global_norm_clip(tensors, cfg.clip_norm)
            opt.step(tensors)
            sums += _batch_sums(parts)
        en, re = _pooled(sums)
        rec = EpochRecord(epoch, en + re, en, re, len(samples), time.perf_counter() - t0)
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            if checkpoint_dir is not None:
                path = Path(checkpoint_dir) / f"epoch{epoch:03d}.json"
                save_checkpoint(path, params, vocab.itos, {**(checkpoint_meta or {}), "epoch": epoch})
                rec.checkpoint = str(path)
            if evaluate is not None:
                rec.dev = evaluate(params)
                if rec.dev["score"] > best_score:
                    best_score, best_epoch, best_params = rec.dev["score"], epoch, params.copy()
        log.info("epoch %d loss %.4f (en %.4f re %.4f) %.1fs", epoch, rec.train_loss,
                 rec.entity_loss, rec.response_loss, rec.seconds)
        history.append(rec)

    if evaluate is None:
        best_params, best_epoch = params.copy(), (cfg.epochs or None)
    return TrainResult(params, best_params, initial, history, best_epoch, report)
