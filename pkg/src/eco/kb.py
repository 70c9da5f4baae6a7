"""Knowledge base, user goals, vocabulary and word-level tokenization."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
USR, SYS = "<usr>", "<sys>"
SPECIAL_TOKENS = (PAD, BOS, EOS, UNK, USR, SYS)
NONE_VALUE = "none"
FORMAT_VERSION = 1


class SchemaError(ValueError):
    """An entity or annotation does not conform to the KB schema."""


def placeholder(attribute: str) -> str:
    return f"[{attribute}]"


def is_placeholder(token: str) -> bool:
    return len(token) > 2 and token[0] == "[" and token[-1] == "]"


def split_words(text: str) -> list[str]:
    """Lowercase whitespace split; placeholders survive as single tokens."""
    return text.lower().split()


def normalize(text: str) -> str:
    return " ".join(split_words(text))


@dataclass(frozen=True)
class AttributeSchema:
    attributes: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.attributes)) != len(self.attributes):
            raise SchemaError(f"duplicate attribute names in {self.attributes}")
        if "name" not in self.attributes:
            raise SchemaError("schema must contain a 'name' attribute")

    @property
    def placeholder_tokens(self) -> tuple[str, ...]:
        return tuple(placeholder(a) for a in self.attributes)

    def placeholder_to_attribute(self, token: str) -> str | None:
        if is_placeholder(token) and token[1:-1] in self.attributes:
            return token[1:-1]
        return None

    def __contains__(self, attribute: str) -> bool:
        return attribute in self.attributes

    def __len__(self) -> int:
        return len(self.attributes)


@dataclass(frozen=True)
class Entity:
    id: int
    values: Mapping[str, str]

    def value_words(self, attribute: str) -> tuple[str, ...]:
        return tuple(split_words(self.values[attribute]))

    @property
    def name(self) -> str:
        return self.values["name"]


@dataclass(frozen=True)
class UserGoal:
    constraints: Mapping[str, str] = field(default_factory=dict)
    requests: tuple[str, ...] = ()

    def validate(self, schema: AttributeSchema) -> None:
        for attr in list(self.constraints) + list(self.requests):
            if attr not in schema:
                raise SchemaError(f"goal attribute {attr!r} not in schema")
        overlap = set(self.constraints) & set(self.requests)
        if overlap - {"name"}:
            raise SchemaError(f"constraints and requests overlap on {sorted(overlap)}")

    def to_json(self) -> dict:
        return {"constraints": dict(self.constraints), "requests": list(self.requests)}

    @classmethod
    def from_json(cls, obj: Mapping) -> "UserGoal":
        constraints = {k: normalize(v) for k, v in obj.get("constraints", {}).items()}
        return cls(constraints, tuple(obj.get("requests", ())))


class KnowledgeBase:
    """An immutable list of entities sharing one attribute schema."""

    def __init__(self, schema: Sequence[str] | AttributeSchema,
                 entities: Iterable[Mapping[str, str]], domain: str = "default"):
        if not isinstance(schema, AttributeSchema):
            schema = AttributeSchema(tuple(schema))
        self.schema = schema
        self.domain = domain
        ents = []
        for i, raw in enumerate(entities):
            extra = set(raw) - set(schema.attributes)
            if extra:
                raise SchemaError(f"entity {i} has attributes outside the schema: {sorted(extra)}")
            values = {}
            for attr in schema.attributes:
                v = normalize(str(raw.get(attr, "") or ""))
                values[attr] = v if v else NONE_VALUE
            if values["name"] == NONE_VALUE:
                raise SchemaError(f"entity {i} has no name")
            ents.append(Entity(i, values))
        names = [e.name for e in ents]
        if len(set(names)) != len(names):
            raise SchemaError("entity names must be unique")
        self.entities: tuple[Entity, ...] = tuple(ents)
        self.value_lexicon: frozenset[tuple[str, tuple[str, ...]]] = frozenset(
            (a, e.value_words(a)) for e in ents for a in schema.attributes
            if e.values[a] != NONE_VALUE
        )
        self._index: dict[tuple[str, str], frozenset[int]] = {}
        for e in ents:
            for a in schema.attributes:
                key = (a, e.values[a])
                self._index[key] = self._index.get(key, frozenset()) | {e.id}

    def __len__(self) -> int:
        return len(self.entities)

    def __iter__(self):
        return iter(self.entities)

    def __getitem__(self, i: int) -> Entity:
        return self.entities[i]

    def by_name(self, name: str) -> Entity | None:
        ids = self._index.get(("name", normalize(name)))
        return self.entities[min(ids)] if ids else None

    def entities_with(self, attribute: str, value: str) -> frozenset[int]:
        """Ids of entities whose ``attribute`` equals ``value`` (hash index)."""
        return self._index.get((attribute, value), frozenset())

    def matching(self, goal: UserGoal) -> list[Entity]:
        return [e for e in self.entities if goal_matches(e, goal)]

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_json(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "domain": self.domain,
            "schema": list(self.schema.attributes),
            "entities": [dict(e.values) for e in self.entities],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "KnowledgeBase":
        return cls(obj["schema"], obj["entities"], obj.get("domain", "default"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgeBase":
        return cls.from_json(json.loads(Path(path).read_text()))


def goal_matches(entity: Entity, goal: UserGoal) -> bool:
    return all(entity.values.get(a) == normalize(v) for a, v in goal.constraints.items())


def load_goals(path: str | Path) -> list[dict]:
    """Read a goal file; returns records with ``dialog_id`` (may be None) and ``goal``."""
    obj = json.loads(Path(path).read_text())
    records = obj["goals"] if isinstance(obj, dict) else obj
    return [{"dialog_id": r.get("dialog_id"), "goal": UserGoal.from_json(r)} for r in records]


class Vocabulary:
    """Token <-> id bijection with reserved ids at the bottom of the range."""

    def __init__(self, tokens: Sequence[str]):
        self.itos: list[str] = list(tokens)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")
        for i, t in enumerate(SPECIAL_TOKENS):
            if self.itos[i] != t:
                raise ValueError("special tokens must occupy the lowest ids")

    pad_id = 0
    bos_id = 1
    eos_id = 2
    unk_id = 3
    usr_id = 4
    sys_id = 5

    @classmethod
    def build(cls, texts: Iterable[str], kbs: Iterable[KnowledgeBase] = ()) -> "Vocabulary":
        kbs = list(kbs)
        placeholders = sorted({p for kb in kbs for p in kb.schema.placeholder_tokens})
        words = set()
        for kb in kbs:
            for e in kb:
                for a in kb.schema.attributes:
                    words.update(e.value_words(a))
        for text in texts:
            words.update(w for w in split_words(text) if not is_placeholder(w))
        words -= set(SPECIAL_TOKENS)
        return cls(list(SPECIAL_TOKENS) + placeholders + sorted(words))

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, self.unk_id)

    def ids(self, words: Iterable[str]) -> list[int]:
        return [self.stoi.get(w, self.unk_id) for w in words]

    def tokens(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[int(i)] for i in ids]

    def encode(self, text: str) -> list[int]:
        return self.ids(split_words(text))

    def decode(self, ids: Iterable[int], strip_special: bool = True) -> str:
        toks = self.tokens(ids)
        if strip_special:
            toks = [t for t in toks if t not in (PAD, BOS, EOS)]
        return " ".join(toks)

    def to_json(self) -> list[str]:
        return list(self.itos)


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    return vocab.encode(text)


def detokenize(ids: Iterable[int], vocab: Vocabulary) -> str:
    return vocab.decode(ids)


def linearize_words(entity: Entity, schema: AttributeSchema) -> list[str]:
    """``[a1] v1 [a2] v2 ... [aK] vK <eos>`` in schema order."""
    missing = [a for a in schema.attributes if a not in entity.values]
    if missing or set(entity.values) - set(schema.attributes):
        raise SchemaError(f"entity {entity.id} does not conform to schema {schema.attributes}")
    out = []
    for a in schema.attributes:
        out.append(placeholder(a))
        out.extend(entity.value_words(a))
    out.append(EOS)
    return out


def linearize_entity(entity: Entity, schema: AttributeSchema, vocab: Vocabulary) -> list[int]:
    return vocab.ids(linearize_words(entity, schema))
