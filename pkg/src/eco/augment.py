"""Template extraction (DELEX) and KB-driven resampling (RELEX)."""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .kb import (FORMAT_VERSION, Entity, KnowledgeBase, SchemaError, UserGoal,
                 goal_matches, normalize, placeholder, split_words)

log = logging.getLogger(__name__)

SIDES = ("user", "response")


@dataclass(frozen=True, order=True)
class Span:
    side: str
    start: int
    end: int  # exclusive
    attribute: str

    def to_json(self) -> dict:
        return {"side": self.side, "start": self.start, "end": self.end, "attribute": self.attribute}


@dataclass(frozen=True)
class DialogTurn:
    user: tuple[str, ...]
    response: tuple[str, ...]
    spans: tuple[Span, ...] = ()
    gold_entity: int | None = None

    def __post_init__(self):
        spans = tuple(sorted(self.spans))
        object.__setattr__(self, "spans", spans)
        last_end = {s: -1 for s in SIDES}
        for sp in spans:
            if sp.side not in SIDES:
                raise ValueError(f"bad span side {sp.side!r}")
            n = len(getattr(self, sp.side))
            if not 0 <= sp.start < sp.end <= n:
                raise ValueError(f"span {sp} out of range for {n} tokens")
            if sp.start < last_end[sp.side]:
                raise ValueError(f"overlapping spans on the {sp.side} side")
            last_end[sp.side] = sp.end

    def words(self, side: str) -> tuple[str, ...]:
        return getattr(self, side)

    def span_value(self, span: Span) -> str:
        return " ".join(self.words(span.side)[span.start:span.end])

    def mentioned(self) -> list[tuple[str, str]]:
        return [(sp.attribute, self.span_value(sp)) for sp in self.spans]

    def unlabeled(self) -> "DialogTurn":
        return replace(self, gold_entity=None)

    def to_json(self) -> dict:
        return {
            "user": " ".join(self.user),
            "response": " ".join(self.response),
            "spans": [s.to_json() for s in self.spans],
            "gold_entity": self.gold_entity,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "DialogTurn":
        spans = tuple(Span(s["side"], int(s["start"]), int(s["end"]), s["attribute"])
                      for s in obj.get("spans", ()))
        return cls(tuple(split_words(obj["user"])), tuple(split_words(obj["response"])),
                   spans, obj.get("gold_entity"))


@dataclass(frozen=True)
class Dialog:
    id: str
    domain: str
    goal: UserGoal
    turns: tuple[DialogTurn, ...]

    def __post_init__(self):
        if not self.turns:
            raise ValueError(f"dialog {self.id} has no turns")

    @property
    def labeled(self) -> bool:
        return any(t.gold_entity is not None for t in self.turns)

    def unlabeled(self) -> "Dialog":
        return replace(self, turns=tuple(t.unlabeled() for t in self.turns))

    def content(self) -> tuple:
        """Everything except the id and gold labels; used for round-trip checks."""
        return (self.domain, dict(self.goal.constraints), tuple(self.goal.requests),
                tuple(t.unlabeled() for t in self.turns))

    def to_json(self) -> dict:
        return {"id": self.id, "domain": self.domain, "goal": self.goal.to_json(),
                "turns": [t.to_json() for t in self.turns]}

    @classmethod
    def from_json(cls, obj: Mapping) -> "Dialog":
        return cls(str(obj["id"]), obj.get("domain", "default"),
                   UserGoal.from_json(obj.get("goal", {})),
                   tuple(DialogTurn.from_json(t) for t in obj["turns"]))


@dataclass(frozen=True)
class Template:
    id: str
    domain: str
    goal: UserGoal
    turns: tuple[DialogTurn, ...]
    matched_attributes: frozenset[str]
    # KB entities consistent with every value the source dialog mentioned
    source_entities: tuple[int, ...] = ()

    def to_json(self) -> dict:
        return {"id": self.id, "domain": self.domain, "goal": self.goal.to_json(),
                "turns": [{"user": " ".join(t.user), "response": " ".join(t.response)}
                          for t in self.turns],
                "matched_attributes": sorted(self.matched_attributes),
                "source_entities": list(self.source_entities)}


@dataclass
class AugmentReport:
    templates: int = 0
    generated: int = 0
    skipped: Counter = field(default_factory=Counter)
    skipped_ids: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"templates": self.templates, "generated": self.generated,
                "skipped": dict(self.skipped), "skipped_ids": self.skipped_ids}


@dataclass
class TrainingSets:
    d_tr: list[Dialog]
    d_au: list[Dialog]

    @property
    def d_fn(self) -> list[Dialog]:
        return self.d_tr + self.d_au


def _consistent_entities(pairs: Iterable[tuple[str, str]], kb: KnowledgeBase) -> list[int]:
    pairs = list(pairs)
    return [e.id for e in kb if all(e.values[a] == normalize(v) for a, v in pairs)]


def delex_dialog(dialog: Dialog, kb: KnowledgeBase) -> Template | None:
    """Template for one dialog, or None when it cannot be delexicalized."""
    spans = [sp for t in dialog.turns for sp in t.spans]
    for sp in spans:
        if sp.attribute not in kb.schema:
            raise SchemaError(f"dialog {dialog.id}: span attribute {sp.attribute!r} not in schema")
    if not spans:
        return None
    pairs = [p for t in dialog.turns for p in t.mentioned()]
    candidates = _consistent_entities(pairs, kb)
    if not candidates:
        return None
    turns = []
    for t in dialog.turns:
        sides = {}
        for side in SIDES:
            words = list(t.words(side))
            for sp in sorted((s for s in t.spans if s.side == side), reverse=True):
                words[sp.start:sp.end] = [placeholder(sp.attribute)]
            sides[side] = tuple(words)
        turns.append(DialogTurn(sides["user"], sides["response"]))
    return Template(dialog.id, dialog.domain, dialog.goal, tuple(turns),
                    frozenset(sp.attribute for sp in spans), tuple(candidates))


def delex(dialogs: Iterable[Dialog], kb: KnowledgeBase,
          report: AugmentReport | None = None) -> list[Template]:
    """Templates for every dialog whose mentioned values all fit one KB entity."""
    out = []
    for d in dialogs:
        if kb.domain != "default" and d.domain != kb.domain:
            reason = "domain"
            tm = None
        else:
            tm = delex_dialog(d, kb)
            reason = "no_spans" if not any(t.spans for t in d.turns) else "no_entity_match"
        if tm is None:
            if report is not None:
                report.skipped[reason] += 1
                report.skipped_ids.append(d.id)
            continue
        out.append(tm)
    if report is not None:
        report.templates += len(out)
    return out


def relex(template: Template, entity: Entity, kb: KnowledgeBase) -> Dialog | None:
    """Fill every placeholder with ``entity``'s value; None if a value is missing."""
    schema = kb.schema
    for attr in template.matched_attributes:
        if entity.values.get(attr, "none") == "none":
            log.info("template %s: entity %d has no %s value, skipped", template.id, entity.id, attr)
            return None
    turns = []
    for t in template.turns:
        sides, spans = {}, []
        for side in SIDES:
            words = []
            for tok in t.words(side):
                attr = schema.placeholder_to_attribute(tok)
                if attr is None:
                    words.append(tok)
                    continue
                value = entity.value_words(attr)
                spans.append(Span(side, len(words), len(words) + len(value), attr))
                words.extend(value)
            sides[side] = tuple(words)
        turns.append(DialogTurn(sides["user"], sides["response"], tuple(spans),
                                entity.id if spans else None))
    # the replacement entity's values become the goal's constraint values
    constraints = {a: entity.values[a] for a in template.goal.constraints}
    goal = UserGoal(constraints, tuple(template.goal.requests))
    return Dialog(f"{template.id}+e{entity.id}", template.domain, goal, tuple(turns))


def augment_batch(templates: Sequence[Template], kb: KnowledgeBase,
                  goals: Sequence[UserGoal] | None = None, p: int = 12, rng_seed: int = 0,
                  report: AugmentReport | None = None) -> list[Dialog]:
    """Relex each template with up to ``p`` distinct goal-matching entities.

    ``goals`` overrides the template goals (aligned by position). Each template
    draws from its own RNG stream seeded by ``(rng_seed, index)``.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if goals is not None and len(goals) != len(templates):
        raise ValueError("goals must align with templates")
    out = []
    for i, tm in enumerate(templates):
        goal = goals[i] if goals is not None else tm.goal
        pool = [e for e in kb if goal_matches(e, goal)]
        if not pool:
            if report is not None:
                report.skipped["empty_goal_match"] += 1
                report.skipped_ids.append(tm.id)
            continue
        rng = np.random.default_rng([rng_seed, i])
        picks = rng.choice(len(pool), size=min(p, len(pool)), replace=False)
        for j in picks:
            d = relex(tm, pool[int(j)], kb)
            if d is None:
                if report is not None:
                    report.skipped["missing_value"] += 1
                continue
            out.append(d)
    if report is not None:
        report.generated += len(out)
    return out


def build_training_sets(d_tr: Sequence[Dialog], templates: Sequence[Template], kb: KnowledgeBase,
                        goals: Sequence[UserGoal] | None = None, p: int = 12, seed: int = 0,
                        report: AugmentReport | None = None) -> TrainingSets:
    d_au = augment_batch(templates, kb, goals, p, seed, report)
    return TrainingSets([d.unlabeled() for d in d_tr], d_au)


def save_dialogs(path: str | Path, dialogs: Iterable[Dialog]) -> None:
    with open(path, "w") as f:
        f.write(json.dumps({"format": "eco-dialogs", "version": FORMAT_VERSION}) + "\n")
        for d in dialogs:
            f.write(json.dumps(d.to_json()) + "\n")


def load_dialogs(path: str | Path) -> list[Dialog]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "format" in obj and "turns" not in obj:
                continue  # header
            out.append(Dialog.from_json(obj))
    return out
