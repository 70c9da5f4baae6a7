"""Scripted restaurant-booking corpus with exact span annotations.

Each dialog is built around one KB entity: the user states a few
constraints, the system recommends the entity, the user asks for some of
its attributes and (sometimes) says goodbye.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .augment import Dialog, DialogTurn, Span, save_dialogs
from .kb import FORMAT_VERSION, KnowledgeBase, UserGoal

NAMES = [
    "gourmet kitchen", "golden wok", "curry garden", "the nirala", "bedouin", "cotto",
    "meze bar", "pipasha", "graffiti", "ugly duckling", "saffron brasserie", "royal spice",
    "la margherita", "hotel du vin", "rice house", "the gandhi", "yippee noodle bar", "zizzi",
    "kohinoor", "loch fyne", "fitzbillies", "midsummer house", "charlie chan", "dojo noodle bar",
    "the copper kettle", "nandos", "clowns cafe", "la raza", "efes", "anatolia",
]
POOLS = {
    "area": ["north", "south", "east", "west", "centre"],
    "food": ["italian", "chinese", "indian", "north american", "thai", "british", "french",
             "turkish"],
    "pricerange": ["cheap", "moderate", "expensive"],
    "postcode": ["cb11ab", "cb21rq", "cb30ad", "cb41nl", "cb58pa", "cb23jx", "cb17dy", "cb43ax"],
    "phone": ["01223 351880", "01223 566188", "01223 308871", "01223 323361", "01223 315232",
              "01223 248882"],
}
ATTRIBUTE_ORDER = ["name", "area", "food", "pricerange", "postcode", "phone"]
CONSTRAINABLE = ("area", "food", "pricerange")

OPENERS = ["i am looking for a restaurant", "i need a place to eat", "can you find me a restaurant",
           "i want to find a restaurant"]
CONSTRAINT_PHRASES = {
    "area": ["in the {} area", "in the {}"],
    "food": ["serving {} food", "that serves {} food"],
    "pricerange": ["in the {} price range", "that is {}"],
}
RECOMMENDATIONS = ["{name} is a {food} restaurant in the {area} .",
                   "how about {name} ? it serves {food} food in the {area} .",
                   "i recommend {name} , a {pricerange} {food} place in the {area} .",
                   "{name} would be a good choice ."]
ASK = {
    "area": ["what area is it in ?", "which part of town is {name} in ?"],
    "food": ["what type of food do they serve ?", "what food does {name} serve ?"],
    "pricerange": ["what is the price range ?", "what price range is {name} in ?"],
    "postcode": ["what is the postcode ?", "can i get the postcode of {name} ?"],
    "phone": ["what is the phone number ?", "can i have the phone number of {name} ?"],
}
ANSWER = {
    "area": ["it is in the {area} .", "{name} is in the {area} area ."],
    "food": ["they serve {food} food .", "{name} serves {food} food ."],
    "pricerange": ["it is in the {pricerange} price range .", "{name} is {pricerange} ."],
    "postcode": ["the postcode is {postcode} .", "the postcode of {name} is {postcode} ."],
    "phone": ["the phone number is {phone} .", "you can call {name} on {phone} ."],
}
GOODBYE = ("thank you , goodbye", "you are welcome . goodbye !")


@dataclass
class SyntheticSpec:
    n_entities: int = 20
    n_attributes: int = 4
    n_dialogs: int = 200
    min_turns: int = 2
    max_turns: int = 4
    seed: int = 7
    domain: str = "restaurant"

    def validate(self) -> None:
        if self.n_entities < 1:
            raise ValueError("need at least one entity")
        if self.n_entities > len(NAMES):
            raise ValueError(f"at most {len(NAMES)} entities supported")
        if not 2 <= self.n_attributes <= len(ATTRIBUTE_ORDER):
            raise ValueError(f"n_attributes must be in [2, {len(ATTRIBUTE_ORDER)}]")
        if self.n_dialogs < 0 or not 1 <= self.min_turns <= self.max_turns:
            raise ValueError("bad dialog counts")


def _fill(template: str, values: dict) -> list[tuple[str, str | None]]:
    """Split a surface template into (text, attribute-or-None) segments."""
    out = []
    for word in template.split():
        if word.startswith("{") and word.endswith("}"):
            attr = word[1:-1]
            out.append((values[attr], attr))
        else:
            out.append((word, None))
    return out


def _render(segments, side: str) -> tuple[tuple[str, ...], list[Span]]:
    words, spans = [], []
    for text, attr in segments:
        toks = text.split()
        if attr is not None:
            spans.append(Span(side, len(words), len(words) + len(toks), attr))
        words.extend(toks)
    return tuple(words), spans


def _turn(user_segments, response_segments) -> DialogTurn:
    u, su = _render(user_segments, "user")
    r, sr = _render(response_segments, "response")
    return DialogTurn(u, r, tuple(su + sr))


def make_kb(spec: SyntheticSpec, rng: np.random.Generator) -> KnowledgeBase:
    schema = ATTRIBUTE_ORDER[:spec.n_attributes]
    names = rng.choice(len(NAMES), size=spec.n_entities, replace=False)
    entities = []
    for i in names:
        e = {"name": NAMES[int(i)]}
        for attr in schema[1:]:
            pool = POOLS[attr]
            e[attr] = pool[int(rng.integers(len(pool)))]
        entities.append(e)
    return KnowledgeBase(schema, entities, spec.domain)


def make_dialog(idx: int, kb: KnowledgeBase, spec: SyntheticSpec, rng: np.random.Generator) -> Dialog:
    entity = kb[int(rng.integers(len(kb)))]
    values = dict(entity.values)
    attrs = [a for a in kb.schema.attributes if a != "name"]
    constrainable = [a for a in attrs if a in CONSTRAINABLE]
    n_c = int(rng.integers(1, min(2, len(constrainable)) + 1))
    constraints = sorted(rng.choice(constrainable, size=n_c, replace=False).tolist(),
                         key=attrs.index)
    remaining = [a for a in attrs if a not in constraints]
    n_turns = int(rng.integers(spec.min_turns, spec.max_turns + 1))
    n_req = min(len(remaining), n_turns - 1)
    if n_req and n_req == n_turns - 1 and rng.random() < 0.5:
        n_req -= 1  # leave room for a goodbye turn
    requests = sorted(rng.choice(remaining, size=n_req, replace=False).tolist(),
                      key=attrs.index) if n_req else []

    def pick(options):
        return options[int(rng.integers(len(options)))]

    phrases = [pick(CONSTRAINT_PHRASES[a]).replace("{}", "{" + a + "}") for a in constraints]
    user = pick(OPENERS) + " " + " and ".join(phrases)
    rec_options = [r for r in RECOMMENDATIONS
                   if all(f"{{{a}}}" not in r or a in values for a in CONSTRAINABLE)]
    turns = [_turn(_fill(user, values), _fill(pick(rec_options), values))]
    for a in requests:
        turns.append(_turn(_fill(pick(ASK[a]), values), _fill(pick(ANSWER[a]), values)))
    if len(turns) < n_turns:
        turns.append(_turn(_fill(GOODBYE[0], values), _fill(GOODBYE[1], values)))
    goal = UserGoal({a: values[a] for a in constraints}, tuple(requests))
    return Dialog(f"{spec.domain}-{idx:04d}", spec.domain, goal, tuple(turns[:spec.max_turns]))


def synthesize(spec: SyntheticSpec) -> tuple[KnowledgeBase, list[Dialog]]:
    """KB and dialogs, a pure function of ``spec``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    kb = make_kb(spec, rng)
    dialogs = [make_dialog(i, kb, spec, rng) for i in range(spec.n_dialogs)]
    return kb, dialogs


def source_entity(dialog: Dialog, kb: KnowledgeBase) -> int:
    """Id of the entity a synthetic dialog was built from (it names it)."""
    for t in dialog.turns:
        for sp in t.spans:
            if sp.attribute == "name":
                return kb.by_name(t.span_value(sp)).id
    raise ValueError(f"dialog {dialog.id} never names its entity")


def write_corpus(out_dir: str | Path, spec: SyntheticSpec) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kb, dialogs = synthesize(spec)
    paths = {"kb": out_dir / "kb.json", "dialogs": out_dir / "dialogs.jsonl",
             "goals": out_dir / "goals.json"}
    kb.save(paths["kb"])
    save_dialogs(paths["dialogs"], dialogs)
    goals = [{"dialog_id": d.id, **d.goal.to_json()} for d in dialogs]
    paths["goals"].write_text(json.dumps({"version": FORMAT_VERSION, "spec": asdict(spec),
                                          "goals": goals}, indent=1) + "\n")
    return paths
