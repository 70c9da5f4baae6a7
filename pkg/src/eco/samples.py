"""Turning dialogs into per-turn model inputs."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .augment import Dialog
from .kb import SYS, USR, KnowledgeBase, Vocabulary, linearize_entity

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TurnSample:
    dialog_id: str
    turn: int
    domain: str
    cu: tuple[int, ...]             # context + current user utterance
    response: tuple[int, ...]       # gold response ids, EOS-terminated
    entity: tuple[int, ...] | None  # gold linearized entity, EOS-terminated


def context_words(dialog: Dialog, t: int) -> list[str]:
    """``<usr> U_1 <sys> R_1 ... <usr> U_t`` for turn ``t`` (0-based)."""
    words: list[str] = []
    for prev in dialog.turns[:t]:
        words += [USR, *prev.user, SYS, *prev.response]
    words += [USR, *dialog.turns[t].user]
    return words


def truncate_left(ids: Sequence[int], max_len: int) -> tuple[int, ...]:
    if len(ids) > max_len:
        log.warning("input of %d tokens truncated to the most recent %d", len(ids), max_len)
        return tuple(ids[-max_len:])
    return tuple(ids)


def dialog_samples(dialog: Dialog, vocab: Vocabulary, kbs: Mapping[str, KnowledgeBase],
                   max_len: int = 256) -> list[TurnSample]:
    kb = kbs.get(dialog.domain)
    out = []
    for t, turn in enumerate(dialog.turns):
        entity = None
        if turn.gold_entity is not None and kb is not None:
            entity = tuple(linearize_entity(kb[turn.gold_entity], kb.schema, vocab))
        out.append(TurnSample(
            dialog.id, t, dialog.domain,
            truncate_left(vocab.ids(context_words(dialog, t)), max_len),
            tuple(vocab.ids(turn.response)) + (vocab.eos_id,),
            entity,
        ))
    return out


def corpus_samples(dialogs: Iterable[Dialog], vocab: Vocabulary,
                   kbs: Mapping[str, KnowledgeBase], max_len: int = 256) -> list[TurnSample]:
    return [s for d in dialogs for s in dialog_samples(d, vocab, kbs, max_len)]
