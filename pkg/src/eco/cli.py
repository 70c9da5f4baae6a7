"""``eco`` command line: synth, augment, trie dump, train, generate, eval, pipeline, ablate."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .augment import AugmentReport, build_training_sets, delex, load_dialogs, save_dialogs
from .generation import DecodeConfig, generate_corpus
from .kb import KnowledgeBase, Vocabulary, load_goals, split_words
from .model import load_checkpoint, save_checkpoint, init_params
from .pipeline import (ABLATIONS, ExperimentConfig, entity_is_valid, evaluate_predictions,
                       format_table, load_corpus, model_config, predict_and_evaluate, run_ablation,
                       run_experiment)
from .synth import SyntheticSpec, write_corpus
from .training import train
from .trie import build_trie, dump_trie

log = logging.getLogger("eco")


def _seed(args_seed: int) -> int:
    env = os.environ.get("ECO_SEED")
    return int(env) if env else args_seed


def _load_kbs(paths) -> dict[str, KnowledgeBase]:
    kbs = {}
    for p in paths:
        kb = KnowledgeBase.load(p)
        kbs[kb.domain] = kb
    return kbs


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "out_dir", None):
        cfg = replace(cfg, out_dir=args.out_dir)
    return cfg.with_env()


def cmd_synth(args) -> int:
    spec = SyntheticSpec(n_entities=args.n_entities, n_attributes=args.n_attributes,
                         n_dialogs=args.n_dialogs, seed=_seed(args.seed), domain=args.domain)
    paths = write_corpus(args.out, spec)
    print(json.dumps({k: str(v) for k, v in paths.items()}))
    return 0


def cmd_augment(args) -> int:
    kb = KnowledgeBase.load(args.kb)
    dialogs = load_dialogs(args.dialogs)
    report = AugmentReport()
    templates = delex(dialogs, kb, report)
    sets = build_training_sets(dialogs, templates, kb, p=args.p, seed=_seed(args.seed), report=report)
    save_dialogs(args.out, sets.d_fn)
    rep = {"d_tr": len(sets.d_tr), "d_au": len(sets.d_au), "d_fn": len(sets.d_fn), **report.to_json()}
    if args.report:
        Path(args.report).write_text(json.dumps(rep, indent=1) + "\n")
    print(json.dumps({k: v for k, v in rep.items() if k != "skipped_ids"}))
    return 0


def cmd_trie_dump(args) -> int:
    kb = KnowledgeBase.load(args.kb)
    texts = []
    if args.dialogs:
        texts = [" ".join(t.user + t.response) for d in load_dialogs(args.dialogs) for t in d.turns]
    vocab = Vocabulary.build(texts, [kb])
    text = dump_trie(build_trie(kb, vocab), vocab)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    corpus = load_corpus(cfg)
    params = init_params(len(corpus.vocab), model_config(cfg, corpus), seed=cfg.seed)
    out = Path(cfg.out_dir or ".")
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    meta = {"kb_hashes": corpus.kb_hashes, "seed": cfg.seed, "experiment": asdict(cfg)}

    def dev_eval(p):
        return predict_and_evaluate(p, corpus, corpus.dev, cfg)[1].to_json() if corpus.dev else {"score": 0.0}

    result = train(params, corpus.train, corpus.templates, corpus.kbs, corpus.tries, corpus.vocab,
                   cfg.train_config(), evaluate=dev_eval, checkpoint_dir=out / "checkpoints",
                   checkpoint_meta=meta)
    save_checkpoint(out / "best.json", result.best_params, corpus.vocab.itos,
                    {**meta, "epoch": result.best_epoch})
    summary = {"initial_loss": result.initial_loss, "final_loss": result.final_loss,
               "best_epoch": result.best_epoch, "epochs": [asdict(r) for r in result.history]}
    (out / "train_history.json").write_text(json.dumps(summary, indent=1) + "\n")
    print(json.dumps({k: summary[k] for k in ("initial_loss", "final_loss", "best_epoch")}))
    return 0


def cmd_generate(args) -> int:
    params, itos, meta = load_checkpoint(args.ckpt)
    vocab = Vocabulary(itos)
    kbs = _load_kbs(args.kb)
    tries = None
    if not args.no_trie:
        tries = {d: build_trie(kb, vocab) for d, kb in kbs.items()}
        for d, trie in tries.items():
            trie.check_source(meta.get("kb_hashes", {}).get(d, ""))
    dialogs = load_dialogs(args.dialogs)
    max_ent = params.config.max_entity_len
    cfg = DecodeConfig(mode=args.mode, k=args.k, temperature=args.temperature,
                       max_entity_len=max_ent, max_response_len=args.max_response_len,
                       seed=_seed(args.seed))
    preds = generate_corpus(params, dialogs, tries, cfg, vocab, args.eval_mode)
    with open(args.out, "w") as f:
        for p in preds:
            rec = p.to_json(vocab)
            dom = next(d.domain for d in dialogs if d.id == p.dialog_id)
            rec["entity_valid"] = entity_is_valid(p.entity, vocab, kbs.get(dom))
            f.write(json.dumps(rec) + "\n")
    print(json.dumps({"turns": len(preds), "out": args.out}))
    return 0


def cmd_eval(args) -> int:
    kbs = _load_kbs(args.kb)
    refs = load_dialogs(args.refs)
    responses, valid = {}, {}
    with open(args.preds) as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            key = (rec["dialog_id"], int(rec["turn"]))
            responses[key] = split_words(rec["generated_response"])
            if "entity_valid" in rec:
                valid[key] = bool(rec["entity_valid"])
    goals = None
    if args.goals:
        goals = {r["dialog_id"]: r["goal"] for r in load_goals(args.goals) if r["dialog_id"]}
    report = evaluate_predictions(refs, responses, kbs, goals, valid or None,
                                  empty_as_consistent=not args.exclude_empty)
    out = {"version": 1, **report.to_json()}
    if args.report:
        Path(args.report).write_text(json.dumps(out, indent=1) + "\n")
    print(json.dumps({k: out[k] for k in ("bleu", "inform", "success", "score", "f1", "consistency")}))
    return 0


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    outcome = run_experiment(cfg, logits_too=args.logits_too)
    print(json.dumps(outcome.test_report.to_json()))
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    table = run_ablation(cfg, args.variants or list(ABLATIONS), args.seeds)
    if args.out:
        Path(args.out).write_text(json.dumps(table, indent=1) + "\n")
    print(format_table(table))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eco", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic KB, dialog corpus and goals")
    p.add_argument("--out", required=True)
    p.add_argument("--n-entities", type=int, default=20)
    p.add_argument("--n-attributes", type=int, default=4)
    p.add_argument("--n-dialogs", type=int, default=200)
    p.add_argument("--domain", default="restaurant")
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("augment", help="DELEX + RELEX; writes D_fn as JSONL")
    p.add_argument("--kb", required=True)
    p.add_argument("--dialogs", required=True)
    p.add_argument("--p", type=int, default=12)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("trie", help="trie utilities")
    tsub = p.add_subparsers(dest="trie_command", required=True)
    d = tsub.add_parser("dump", help="JSON adjacency of the entity trie")
    d.add_argument("--kb", required=True)
    d.add_argument("--dialogs")
    d.add_argument("--out")
    d.set_defaults(func=cmd_trie_dump)

    for name, fn, help_ in (("train", cmd_train, "train and checkpoint"),
                            ("pipeline", cmd_pipeline, "augment, train, generate and evaluate")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config")
        p.add_argument("--out-dir")
        if name == "pipeline":
            p.add_argument("--logits-too", action="store_true",
                           help="also report LogitConcat-at-inference metrics")
        p.set_defaults(func=fn)

    p = sub.add_parser("generate", help="decode entities and responses for a dialog file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--kb", required=True, action="append")
    p.add_argument("--dialogs", required=True)
    p.add_argument("--mode", choices=("greedy", "topk"), default="greedy")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--max-response-len", type=int, default=32)
    p.add_argument("--eval-mode", choices=("tokens", "logits"), default="tokens")
    p.add_argument("--no-trie", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="score predictions against reference dialogs")
    p.add_argument("--preds", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--kb", required=True, action="append")
    p.add_argument("--goals")
    p.add_argument("--report")
    p.add_argument("--exclude-empty", action="store_true",
                   help="leave turns without KB values out of Consistency")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="ablation matrix over seeds (mean and std per metric)")
    p.add_argument("--config")
    p.add_argument("--seeds", type=int, nargs="+", default=[7])
    p.add_argument("--variants", nargs="+", choices=list(ABLATIONS))
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - report the failing stage and exit non-zero
        log.error("%s failed: %s", args.command, exc)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
