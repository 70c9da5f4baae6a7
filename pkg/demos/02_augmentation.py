# %% [markdown]
# # DELEX and RELEX
#
# A labeled dialog is turned into a template by swapping every KB value for
# its attribute placeholder. Relexicalizing the template with another entity
# that satisfies the user's goal gives a new dialog whose gold entity is known.

# %%
from eco.augment import AugmentReport, augment_batch, delex, relex
from eco.metrics import consistency
from eco.synth import SyntheticSpec, source_entity, synthesize

kb, dialogs = synthesize(SyntheticSpec(n_entities=10, n_dialogs=20, seed=3))
d = dialogs[0]
for t in d.turns:
    print("U:", " ".join(t.user))
    print("S:", " ".join(t.response))

# %%
report = AugmentReport()
templates = delex(dialogs, kb, report)
tm = templates[0]
for t in tm.turns:
    print("U:", " ".join(t.user))
    print("S:", " ".join(t.response))

# %% [markdown]
# Relexicalizing with the entity the dialog came from gives the dialog back.

# %%
back = relex(tm, kb[source_entity(d, kb)], kb)
print("round trip exact:", back.content() == d.content())

# %%
augmented = augment_batch(templates, kb, p=3, rng_seed=0, report=report)
print(len(templates), "templates ->", len(augmented), "augmented dialogs")
turns = [(t.user, t.response) for a in augmented for t in a.turns]
print("Consistency of augmented turns:", consistency(turns, kb))
print(report.to_json())
