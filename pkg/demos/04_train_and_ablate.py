# %% [markdown]
# # Training on a synthetic corpus and comparing ablations
#
# A deliberately small run: twenty epochs on a 10-entity corpus, then the full
# system against the variant without the trie. On this budget the numbers are
# noisy; entity validity is the column that separates the two reliably.

# %%
from eco.pipeline import ExperimentConfig, format_table, run_ablation, run_experiment

cfg = ExperimentConfig(synthetic={"n_entities": 10, "n_dialogs": 80, "seed": 7},
                       epochs=20, eval_every=5, p=4, max_response_len=16)
outcome = run_experiment(cfg, logits_too=True)
tr = outcome.train
print(f"loss {tr.initial_loss:.3f} -> {tr.final_loss:.3f}, best epoch {tr.best_epoch}, "
      f"{outcome.seconds:.1f}s")
keys = ("bleu", "inform", "success", "score", "f1", "consistency", "entity_validity")
for label, rep in (("tokens", outcome.test_report), ("logits", outcome.test_report_logits)):
    print(f"test ({label}):", {k: rep.to_json()[k] for k in keys})

# %%
table = run_ablation(cfg, ["ECO", "w/o trie", "w/ LogitEval"], seeds=[7, 8])
print(format_table(table))
