import json

import pytest

from eco.augment import delex, load_dialogs
from eco.kb import KnowledgeBase, load_goals
from eco.metrics import consistency
from eco.synth import SyntheticSpec, source_entity, synthesize, write_corpus


def test_reference_corpus_shape(reference_corpus):
    kb, dialogs = reference_corpus
    assert len(kb) == 20 and kb.schema.attributes == ("name", "area", "food", "pricerange")
    assert len(dialogs) == 200
    assert all(2 <= len(d.turns) <= 4 for d in dialogs)


def test_every_dialog_is_consistent_and_templated(reference_corpus):
    kb, dialogs = reference_corpus
    for d in dialogs:
        assert consistency([(t.user, t.response) for t in d.turns], kb) == 1.0
    assert len(delex(dialogs, kb)) == 200


def test_goals_match_their_source_entity(reference_corpus):
    kb, dialogs = reference_corpus
    for d in dialogs:
        assert source_entity(d, kb) in {e.id for e in kb.matching(d.goal)}


def test_written_files_are_deterministic(tmp_path):
    a = write_corpus(tmp_path / "a", SyntheticSpec(n_dialogs=30))
    b = write_corpus(tmp_path / "b", SyntheticSpec(n_dialogs=30))
    for key in ("kb", "dialogs", "goals"):
        assert a[key].read_bytes() == b[key].read_bytes()
    assert len(load_dialogs(a["dialogs"])) == 30
    assert len(load_goals(a["goals"])) == 30
    KnowledgeBase.load(a["kb"])
    assert json.loads(a["goals"].read_text())["spec"]["n_dialogs"] == 30


def test_seed_changes_corpus():
    _, d1 = synthesize(SyntheticSpec(n_dialogs=10, seed=1))
    _, d2 = synthesize(SyntheticSpec(n_dialogs=10, seed=2))
    assert [d.content() for d in d1] != [d.content() for d in d2]


@pytest.mark.parametrize("bad", [dict(n_entities=0), dict(n_entities=99), dict(n_attributes=1),
                                 dict(min_turns=3, max_turns=2)])
def test_bad_specs(bad):
    with pytest.raises(ValueError):
        synthesize(SyntheticSpec(**bad))
