"""Dialog metrics: BLEU, Inform, Success, Score, F1 and entity Consistency."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .kb import KnowledgeBase, UserGoal, goal_matches, split_words

Pair = tuple[str, tuple[str, ...]]


def _words(text) -> list[str]:
    return split_words(text) if isinstance(text, str) else list(text)


def _lexicon(kb: KnowledgeBase) -> tuple[dict[tuple[str, ...], str], int]:
    cached = getattr(kb, "_lexicon_cache", None)
    if cached is None:
        by_value: dict[tuple[str, ...], str] = {}
        for attr in kb.schema.attributes:  # schema order decides cross-attribute clashes
            for a, v in sorted(kb.value_lexicon):
                if a == attr:
                    by_value.setdefault(v, a)
        cached = (by_value, max((len(v) for v in by_value), default=0))
        kb._lexicon_cache = cached
    return cached


def extract_info(text, kb: KnowledgeBase) -> set[Pair]:
    """KB (attribute, value) pairs mentioned in ``text``.

    All lexicon hits are collected, then accepted longest first (leftmost
    among equal lengths) as long as they do not overlap an accepted hit.
    """
    words = _words(text)
    lex, longest = _lexicon(kb)
    hits = []
    for i in range(len(words)):
        for n in range(min(longest, len(words) - i), 0, -1):
            v = tuple(words[i:i + n])
            if v in lex:
                hits.append((-n, i, v))
    taken = [False] * len(words)
    out = set()
    for neg_n, i, v in sorted(hits):
        if any(taken[i:i - neg_n]):
            continue
        taken[i:i - neg_n] = [True] * -neg_n
        out.add((lex[v], v))
    return out


def consistent_scan(pairs: Iterable[Pair], kb: KnowledgeBase) -> bool:
    """Reference definition: some entity carries every pair."""
    pairs = list(pairs)
    return any(all(e.values[a] == " ".join(v) for a, v in pairs) for e in kb)


def consistent_indexed(pairs: Iterable[Pair], kb: KnowledgeBase) -> bool:
    ids = None
    for a, v in pairs:
        hit = kb.entities_with(a, " ".join(v))
        ids = hit if ids is None else ids & hit
        if not ids:
            return False
    return True


def turn_consistency(user, response, kb: KnowledgeBase) -> int | None:
    """1/0 for a turn, None when nothing was extracted."""
    pairs = extract_info(user, kb) | extract_info(response, kb)
    if not pairs:
        return None
    return int(consistent_indexed(pairs, kb))


def consistency(turns: Sequence[tuple], kb: KnowledgeBase, empty_as_consistent: bool = True) -> float:
    """Mean turn score over ``(user, response)`` pairs.

    Turns with no extracted information score 1 by default; with
    ``empty_as_consistent=False`` they are left out of the average.
    """
    scores = []
    for user, response in turns:
        s = turn_consistency(user, response, kb)
        if s is None:
            if not empty_as_consistent:
                continue
            s = 1
        scores.append(s)
    return sum(scores) / len(scores) if scores else 1.0


def f1_counts(prediction, reference, kb: KnowledgeBase) -> tuple[int, int, int]:
    p, r = extract_info(prediction, kb), extract_info(reference, kb)
    return len(p & r), len(p), len(r)


def f1_from_counts(tp: int, n_pred: int, n_ref: int) -> float:
    if n_pred == 0 and n_ref == 0:
        return 1.0
    if tp == 0:
        return 0.0
    prec, rec = tp / n_pred, tp / n_ref
    return 2 * prec * rec / (prec + rec)


def f1(predictions: Sequence, references: Sequence, kb: KnowledgeBase) -> float:
    """Micro F1 over extracted (attribute, value) pairs, pooled over turns."""
    if len(predictions) != len(references):
        raise ValueError(f"{len(predictions)} predictions vs {len(references)} references")
    tp = n_pred = n_ref = 0
    for p, r in zip(predictions, references):
        a, b, c = f1_counts(p, r, kb)
        tp, n_pred, n_ref = tp + a, n_pred + b, n_ref + c
    return f1_from_counts(tp, n_pred, n_ref)


def inform_success(responses: Sequence, goal: UserGoal, kb: KnowledgeBase) -> tuple[int, int]:
    provided: set[Pair] = set()
    for r in responses:
        provided |= extract_info(r, kb)
    named = {" ".join(v) for a, v in provided if a == "name"}
    offered = [e for e in kb if e.name in named and goal_matches(e, goal)]
    if not offered:
        return 0, 0
    for e in offered:
        if all(r == "name" or (r, e.value_words(r)) in provided for r in goal.requests):
            return 1, 1
    return 1, 0


def _ngrams(words: Sequence[str], n: int) -> Counter:
    return Counter(tuple(words[i:i + n]) for i in range(len(words) - n + 1))


def bleu(predictions: Sequence, references: Sequence, max_n: int = 4) -> float:
    """Corpus BLEU (0-100), add-one smoothing on orders >= 2, brevity penalty."""
    if len(predictions) != len(references):
        raise ValueError("predictions and references must align")
    if not predictions:
        raise ValueError("empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for p, r in zip(predictions, references):
        p, r = _words(p), _words(r)
        hyp_len += len(p)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            hp, rf = _ngrams(p, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rf[g]) for g, c in hp.items())
            totals[n - 1] += max(len(p) - n + 1, 0)
    if hyp_len == 0 or matches[0] == 0:
        return 0.0
    log_p = math.log(matches[0] / totals[0])
    for n in range(1, max_n):
        log_p += math.log((matches[n] + 1) / (totals[n] + 1))
    bp = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p / max_n)


def score(bleu_value: float, inform: float, success: float) -> float:
    """Overall score on the 0-100 scale."""
    return bleu_value + (inform + success) / 2


def goal_bucket(goal: UserGoal, kb: KnowledgeBase) -> str:
    return "single" if len(kb.matching(goal)) == 1 else "multi"


@dataclass
class MetricsReport:
    bleu: float
    inform: float
    success: float
    score: float
    f1: float
    consistency: float
    entity_validity: float | None = None
    n_dialogs: int = 0
    n_turns: int = 0
    per_domain: dict = field(default_factory=dict)
    split: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = asdict(self)
        for k in ("bleu", "inform", "success", "score", "f1", "consistency", "entity_validity"):
            if out[k] is not None:
                out[k] = round(out[k], 2)
        return out

    def row(self) -> dict:
        return {k: getattr(self, k) for k in ("bleu", "inform", "success", "score", "f1", "consistency")}


@dataclass
class DialogResult:
    dialog_id: str
    domain: str
    bucket: str
    inform: int
    success: int
    f1_counts: tuple[int, int, int]
    turn_scores: list[int | None]
    valid_entities: list[bool] = field(default_factory=list)


def score_dialog(dialog_id: str, domain: str, users: Sequence, responses: Sequence,
                 references: Sequence, goal: UserGoal, kb: KnowledgeBase,
                 valid_entities: Sequence[bool] = ()) -> DialogResult:
    inf, suc = inform_success(responses, goal, kb)
    counts = [f1_counts(p, r, kb) for p, r in zip(responses, references)]
    tot = tuple(sum(c[i] for c in counts) for i in range(3))
    turns = [turn_consistency(u, r, kb) for u, r in zip(users, responses)]
    return DialogResult(dialog_id, domain, goal_bucket(goal, kb), inf, suc, tot, turns,
                        list(valid_entities))


def aggregate(results: Sequence[DialogResult], bleu_value: float,
              empty_as_consistent: bool = True) -> dict:
    """Metrics (0-100 scale) over a group of dialog results."""
    if not results:
        return {"n": 0}
    inf = 100.0 * sum(r.inform for r in results) / len(results)
    suc = 100.0 * sum(r.success for r in results) / len(results)
    tp, n_pred, n_ref = (sum(r.f1_counts[i] for r in results) for i in range(3))
    turns = [s for r in results for s in r.turn_scores]
    turns = [(1 if s is None else s) for s in turns if s is not None or empty_as_consistent]
    valid = [v for r in results for v in r.valid_entities]
    return {
        "n": len(results),
        "bleu": bleu_value,
        "inform": inf,
        "success": suc,
        "score": score(bleu_value, inf, suc),
        "f1": 100.0 * f1_from_counts(tp, n_pred, n_ref),
        "consistency": 100.0 * (sum(turns) / len(turns) if turns else 1.0),
        "entity_validity": 100.0 * sum(valid) / len(valid) if valid else None,
    }


def matched_entity_split(goals: Sequence[UserGoal], kb: KnowledgeBase,
                         results: Sequence[DialogResult]) -> dict:
    """Inform / Success / F1 for dialogs whose goal matches one vs several entities."""
    if len(goals) != len(results):
        raise ValueError("goals and results must align")
    buckets: dict[str, list[DialogResult]] = {"single": [], "multi": []}
    for g, r in zip(goals, results):
        buckets[goal_bucket(g, kb)].append(r)
    total = len(results)
    out = {}
    for name, group in buckets.items():
        agg = aggregate(group, 0.0) if group else {"n": 0}
        out[name] = {"n": len(group), "percentage": 100.0 * len(group) / total if total else 0.0,
                     **{k: agg[k] for k in ("inform", "success", "f1") if k in agg}}
    return out


def build_report(results: Sequence[DialogResult], predictions: Sequence, references: Sequence,
                 empty_as_consistent: bool = True) -> MetricsReport:
    b = bleu(predictions, references)
    agg = aggregate(results, b, empty_as_consistent)
    per_domain = {}
    for dom in sorted({r.domain for r in results}):
        group = [r for r in results if r.domain == dom]
        per_domain[dom] = {k: v for k, v in aggregate(group, b, empty_as_consistent).items()
                           if k != "bleu" and k != "score"}
    split = {"single": [], "multi": []}
    for r in results:
        split[r.bucket].append(r)
    split_table = {}
    for name, group in split.items():
        a = aggregate(group, 0.0, empty_as_consistent) if group else {}
        split_table[name] = {"n": len(group),
                             "percentage": 100.0 * len(group) / len(results) if results else 0.0,
                             **{k: a[k] for k in ("inform", "success", "f1") if k in a}}
    return MetricsReport(b, agg["inform"], agg["success"], agg["score"], agg["f1"],
                         agg["consistency"], agg["entity_validity"], len(results),
                         sum(len(r.turn_scores) for r in results), per_domain, split_table)
