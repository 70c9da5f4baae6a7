"""Prefix trie over linearized KB entities and constrained renormalization."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .kb import KnowledgeBase, Vocabulary, linearize_entity


class InvalidPrefixError(KeyError):
    pass


class DegenerateDistributionError(ValueError):
    pass


class StaleTrieError(RuntimeError):
    pass


@dataclass
class EntityTrie:
    """Arena-backed trie. Node 0 is the root; ``token[0]`` is -1."""

    token: list[int] = field(default_factory=lambda: [-1])
    children: list[dict[int, int]] = field(default_factory=lambda: [{}])
    terminal: list[bool] = field(default_factory=lambda: [False])
    eos_id: int = 2
    source_kb_hash: str = ""

    root = 0

    def __len__(self) -> int:
        return len(self.token)

    def insert(self, seq: Sequence[int]) -> None:
        if not seq or seq[-1] != self.eos_id or self.eos_id in seq[:-1]:
            raise ValueError("entity sequences must end with exactly one EOS")
        node = self.root
        for tok in seq:
            if self.terminal[node]:
                raise ValueError("sequence continues past EOS")
            nxt = self.children[node].get(tok)
            if nxt is None:
                nxt = len(self.token)
                self.token.append(tok)
                self.children.append({})
                self.terminal.append(tok == self.eos_id)
                self.children[node][tok] = nxt
            node = nxt

    def walk(self, prefix: Iterable[int], node: int = 0) -> int:
        for tok in prefix:
            try:
                node = self.children[node][tok]
            except KeyError:
                raise InvalidPrefixError(f"token {tok} is not a child of trie node {node}") from None
        return node

    def step(self, node: int, tok: int) -> int:
        """Child of ``node`` along ``tok``, or -1 when off the trie."""
        if node < 0:
            return -1
        return self.children[node].get(tok, -1)

    def allowed_at(self, node: int) -> list[int]:
        return sorted(self.children[node])

    def check_source(self, kb_hash: str) -> None:
        if kb_hash and self.source_kb_hash != kb_hash:
            raise StaleTrieError(
                f"trie built from KB {self.source_kb_hash}, decoding against {kb_hash}")

    def to_json(self, vocab: Vocabulary | None = None) -> dict:
        name = (lambda t: vocab.itos[t]) if vocab is not None else str
        nodes = []
        for i, tok in enumerate(self.token):
            nodes.append({
                "id": i,
                "token": None if i == self.root else name(tok),
                "terminal": self.terminal[i],
                "children": {name(t): c for t, c in sorted(self.children[i].items())},
            })
        return {"version": 1, "source_kb_hash": self.source_kb_hash, "nodes": nodes}


def build_trie(kb: KnowledgeBase, vocab: Vocabulary) -> EntityTrie:
    if len(kb) == 0:
        raise ValueError("cannot build a trie from an empty KB")
    trie = EntityTrie(eos_id=vocab.eos_id, source_kb_hash=kb.fingerprint())
    for e in kb:
        trie.insert(linearize_entity(e, kb.schema, vocab))
    return trie


def allowed_tokens(trie: EntityTrie, prefix: Sequence[int]) -> list[int]:
    """Sorted token ids that may follow ``prefix``."""
    return trie.allowed_at(trie.walk(prefix))


def enumerate_paths(trie: EntityTrie) -> list[tuple[int, ...]]:
    """All root-to-terminal token sequences (depth-first, sorted by token id)."""
    out = []
    stack = [(trie.root, ())]
    while stack:
        node, path = stack.pop()
        if trie.terminal[node]:
            out.append(path)
            continue
        for tok, child in sorted(trie.children[node].items(), reverse=True):
            stack.append((child, path + (tok,)))
    return out


def allowed_mask(trie: EntityTrie, nodes: Sequence[int], vocab_size: int) -> np.ndarray:
    """Boolean (len(nodes), vocab_size) mask of permitted next tokens per node."""
    mask = np.zeros((len(nodes), vocab_size), dtype=bool)
    for row, node in enumerate(nodes):
        if node >= 0:
            mask[row, list(trie.children[node])] = True
    return mask


def constrain(dist: np.ndarray, allowed: Sequence[int] | np.ndarray) -> np.ndarray:
    """Zero out tokens outside ``allowed`` and renormalize the rest.

    ``allowed`` is either a list of token ids or a boolean mask with the same
    shape as ``dist`` (batched rows are renormalized independently).
    """
    dist = np.asarray(dist, dtype=np.float64)
    allowed = np.asarray(allowed)
    if allowed.dtype == bool:
        mask = allowed
    else:
        mask = np.zeros(dist.shape[-1], dtype=bool)
        mask[allowed.astype(int)] = True
    kept = np.where(mask, dist, 0.0)
    z = kept.sum(axis=-1, keepdims=True)
    if np.any(z < 1e-30):
        raise DegenerateDistributionError("allowed tokens carry (almost) no probability mass")
    return kept / z


def dump_trie(trie: EntityTrie, vocab: Vocabulary) -> str:
    return json.dumps(trie.to_json(vocab), indent=1)
