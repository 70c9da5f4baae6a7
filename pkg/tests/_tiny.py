"""A deliberately tiny KB, corpus and model for exact gradient checks."""
from eco.augment import Dialog, DialogTurn, Span
from eco.kb import KnowledgeBase, UserGoal, Vocabulary
from eco.model import ModelConfig, init_params
from eco.samples import corpus_samples
from eco.trie import build_trie


def tiny_world():
    """(kb, vocab, trie, dialogs): one labeled and one unlabeled dialog."""
    kb = KnowledgeBase(["name", "food"], [
        {"name": "cotto", "food": "british"},
        {"name": "golden wok", "food": "chinese"},
        {"name": "pizza hut", "food": "italian"},
    ], "restaurant")

    def turn(u, r, spans=(), gold=None):
        return DialogTurn(tuple(u.split()), tuple(r.split()), tuple(spans), gold)

    labeled = Dialog("a", "restaurant", UserGoal({"food": "chinese"}), (
        turn("chinese food please", "golden wok serves chinese",
             [Span("user", 0, 1, "food"), Span("response", 0, 2, "name"),
              Span("response", 3, 4, "food")], 1),
        turn("thanks", "bye"),
    ))
    unlabeled = Dialog("b", "restaurant", UserGoal({"food": "british"}), (
        turn("british food", "cotto is british"),
    ))
    dialogs = [labeled, unlabeled]
    vocab = Vocabulary.build([" ".join(t.user + t.response) for d in dialogs for t in d.turns], [kb])
    return kb, vocab, build_trie(kb, vocab), dialogs


def tiny_problem(seed: int = 3, d_model: int = 8, d_ff: int = 16, init_scale: float = 0.08):
    kb, vocab, trie, dialogs = tiny_world()
    cfg = ModelConfig(d_model=d_model, d_ff=d_ff, max_len=16, max_entity_len=8, max_response_len=6,
                      init_scale=init_scale)
    params = init_params(len(vocab), cfg, seed=seed)
    samples = corpus_samples(dialogs, vocab, {"restaurant": kb}, cfg.max_len)
    return kb, vocab, trie, params, samples
