# %% [markdown]
# # A knowledge base and its entity trie
#
# Entities are linearized as ``[attr] value ... <eos>`` and every linearization
# is inserted into a prefix tree. At decode time the tree says which tokens may
# follow the prefix generated so far, and the model's distribution is
# renormalized over just those tokens.

# %%
import numpy as np

from eco import KnowledgeBase, Vocabulary, build_trie, constrain, linearize_entity
from eco.trie import allowed_tokens, enumerate_paths

kb = KnowledgeBase(
    ["name", "area", "food"],
    [
        {"name": "cotto", "area": "centre", "food": "british"},
        {"name": "golden wok", "area": "north", "food": "chinese"},
        {"name": "gourmet kitchen", "area": "west", "food": "north american"},
    ],
    domain="restaurant",
)
vocab = Vocabulary.build([], [kb])
print(len(kb), "entities,", len(vocab), "tokens")

# %%
for e in kb:
    print(vocab.decode(linearize_entity(e, kb.schema, vocab), strip_special=False))

# %%
trie = build_trie(kb, vocab)
print(len(trie), "nodes,", len(enumerate_paths(trie)), "paths")

prefix = vocab.ids(["[name]"])
print("after [name]:", vocab.tokens(allowed_tokens(trie, prefix)))
prefix = vocab.ids(["[name]", "golden"])
print("after [name] golden:", vocab.tokens(allowed_tokens(trie, prefix)))

# %% [markdown]
# Renormalization keeps the relative odds of the allowed tokens and puts
# zero mass everywhere else.

# %%
rng = np.random.default_rng(0)
p = rng.dirichlet(np.ones(len(vocab)))
allowed = allowed_tokens(trie, vocab.ids(["[name]"]))
q = constrain(p, allowed)
print("mass kept:", q[allowed].sum(), " outside:", np.delete(q, allowed).sum())
print("ratios preserved:", np.allclose(q[allowed] / q[allowed[0]], p[allowed] / p[allowed[0]]))
