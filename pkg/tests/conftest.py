import numpy as np
import pytest

from eco.kb import KnowledgeBase, Vocabulary
from eco.synth import SyntheticSpec, synthesize
from eco.trie import EntityTrie

TRAIN_ENTITIES = [
    "[day] saturday [departure] cambridge",
    "[day] saturday [departure] kings lynn",
    "[day] friday [departure] peterborough",
]


@pytest.fixture
def train_vocab():
    words = {w for s in TRAIN_ENTITIES for w in s.split()}
    placeholders = sorted(w for w in words if w.startswith("["))
    return Vocabulary(["<pad>", "<bos>", "<eos>", "<unk>", "<usr>", "<sys>"] + placeholders
                      + sorted(words - set(placeholders)))


@pytest.fixture
def train_trie(train_vocab):
    trie = EntityTrie(eos_id=train_vocab.eos_id)
    for s in TRAIN_ENTITIES:
        trie.insert(train_vocab.encode(s) + [train_vocab.eos_id])
    return trie


@pytest.fixture
def restaurant_kb():
    return KnowledgeBase(
        ["name", "area", "food", "pricerange"],
        [
            {"name": "Gourmet Kitchen", "area": "west", "food": "North American", "pricerange": "expensive"},
            {"name": "Golden Wok", "area": "north", "food": "chinese", "pricerange": "moderate"},
            {"name": "Pizza Hut", "area": "centre", "food": "italian", "pricerange": "cheap"},
            {"name": "Curry Garden", "area": "centre", "food": "indian", "pricerange": "expensive"},
            {"name": "Cotto", "area": "centre", "food": "british", "pricerange": "moderate"},
        ],
        domain="restaurant",
    )


@pytest.fixture
def train_kb():
    return KnowledgeBase(
        ["name", "day", "departure"],
        [
            {"name": "tr1", "day": "saturday", "departure": "cambridge"},
            {"name": "tr2", "day": "saturday", "departure": "kings lynn"},
            {"name": "tr3", "day": "friday", "departure": "kings"},
        ],
        domain="train",
    )


@pytest.fixture(scope="session")
def reference_corpus():
    return synthesize(SyntheticSpec())


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    from _accept import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
