"""End-to-end experiment: augment, build tries, train, generate, evaluate, ablate."""
from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .augment import AugmentReport, Dialog, Template, delex, load_dialogs, save_dialogs
from .generation import DecodeConfig, TurnPrediction, generate_corpus
from .kb import EOS, KnowledgeBase, UserGoal, Vocabulary, linearize_words, load_goals
from .metrics import MetricsReport, build_report, score_dialog
from .model import ModelConfig, ModelParams, init_params, save_checkpoint
from .synth import SyntheticSpec, synthesize
from .training import TrainConfig, TrainFlags, TrainResult, epoch_training_dialogs, train
from .trie import EntityTrie, build_trie, dump_trie

log = logging.getLogger(__name__)

ABLATIONS = {
    "ECO": {},
    "w/ au": {"au_only": True},
    "w/ tr": {"tr_only": True},
    "w/o trie": {"no_trie": True},
    "w/o LogitConcat": {"no_logit_concat": True},
    "w/ LogitEval": {"logit_eval": True},
}
TABLE_COLUMNS = ("bleu", "inform", "success", "score", "f1", "consistency")


@dataclass
class ExperimentConfig:
    kb: list[str] = field(default_factory=list)
    dialogs: str | None = None
    goals: str | None = None
    out_dir: str | None = None
    # model
    d_model: int = 24
    d_ff: int = 48
    max_len: int = 256
    # training
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 16
    p: int = 12
    seed: int = 7
    eval_every: int = 5
    dev_fraction: float = 0.1
    test_fraction: float = 0.1
    # decoding
    decode_mode: str = "greedy"
    top_k: int = 5
    temperature: float = 1.0
    max_response_len: int = 32
    # ablations
    no_trie: bool = False
    no_logit_concat: bool = False
    logit_eval: bool = False
    au_only: bool = False
    tr_only: bool = False
    # built-in corpus when no files are given
    synthetic: dict | None = None

    def __post_init__(self):
        if self.au_only and self.tr_only:
            raise ValueError("au_only and tr_only cannot both be set")

    def check_paths(self) -> None:
        for p in [*self.kb, self.dialogs, self.goals]:
            if p is not None and not Path(p).exists():
                raise FileNotFoundError(p)

    @classmethod
    def from_json(cls, obj: Mapping) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names - {"version"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        obj = {k: v for k, v in obj.items() if k in names}
        if isinstance(obj.get("kb"), str):
            obj["kb"] = [obj["kb"]]
        return cls(**obj)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_json(json.loads(Path(path).read_text()))

    def with_env(self) -> "ExperimentConfig":
        seed = os.environ.get("ECO_SEED")
        return replace(self, seed=int(seed)) if seed else self

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, lr=self.lr, batch_size=self.batch_size, p=self.p,
                           seed=self.seed, eval_every=self.eval_every, au_only=self.au_only,
                           tr_only=self.tr_only,
                           flags=TrainFlags(no_trie=self.no_trie,
                                            no_logit_concat=self.no_logit_concat))

    @property
    def eval_mode(self) -> str:
        return "logits" if self.logit_eval else "tokens"


@dataclass
class Corpus:
    kbs: dict[str, KnowledgeBase]
    train: list[Dialog]
    dev: list[Dialog]
    test: list[Dialog]
    goals: dict[str, UserGoal]
    vocab: Vocabulary
    tries: dict[str, EntityTrie]
    templates: dict[str, list[Template]]
    augment_report: AugmentReport

    @property
    def max_entity_len(self) -> int:
        return max(len(linearize_words(e, kb.schema)) for kb in self.kbs.values() for e in kb)

    @property
    def kb_hashes(self) -> dict[str, str]:
        return {d: kb.fingerprint() for d, kb in self.kbs.items()}


def split_dialogs(dialogs: Sequence[Dialog], dev_fraction: float, test_fraction: float):
    """Deterministic tail split: [train | dev | test]."""
    n = len(dialogs)
    n_test = int(round(n * test_fraction))
    n_dev = int(round(n * dev_fraction))
    n_train = n - n_dev - n_test
    return list(dialogs[:n_train]), list(dialogs[n_train:n_train + n_dev]), list(dialogs[n_train + n_dev:])


def build_vocab(dialogs: Sequence[Dialog], kbs: Sequence[KnowledgeBase]) -> Vocabulary:
    texts = (" ".join(t.user + t.response) for d in dialogs for t in d.turns)
    return Vocabulary.build(texts, kbs)


def load_corpus(cfg: ExperimentConfig) -> Corpus:
    if cfg.dialogs is None:
        spec = SyntheticSpec(**(cfg.synthetic or {}))
        kb, dialogs = synthesize(spec)
        kbs = {kb.domain: kb}
    else:
        cfg.check_paths()
        kbs = {}
        for path in cfg.kb:
            kb = KnowledgeBase.load(path)
            kbs[kb.domain] = kb
        dialogs = load_dialogs(cfg.dialogs)
    goals = {d.id: d.goal for d in dialogs}
    if cfg.goals is not None:
        for rec in load_goals(cfg.goals):
            if rec["dialog_id"] is not None:
                goals[rec["dialog_id"]] = rec["goal"]
    train_d, dev_d, test_d = split_dialogs(dialogs, cfg.dev_fraction, cfg.test_fraction)
    vocab = build_vocab(dialogs, list(kbs.values()))
    tries = {dom: build_trie(kb, vocab) for dom, kb in kbs.items()}
    report = AugmentReport()
    templates = {dom: delex([d for d in train_d if d.domain == dom], kb, report)
                 for dom, kb in kbs.items()}
    return Corpus(kbs, train_d, dev_d, test_d, goals, vocab, tries, templates, report)


def entity_is_valid(entity: Sequence[int], vocab: Vocabulary, kb: KnowledgeBase | None) -> bool:
    if kb is None:
        return False
    words = tuple(vocab.tokens(entity))
    valid = getattr(kb, "_linearized_cache", None)
    if valid is None:
        valid = {tuple(linearize_words(e, kb.schema)) for e in kb}
        kb._linearized_cache = valid
    return words in valid


def evaluate_predictions(dialogs: Sequence[Dialog], responses: Mapping[tuple[str, int], Sequence[str]],
                         kbs: Mapping[str, KnowledgeBase], goals: Mapping[str, UserGoal] | None = None,
                         valid: Mapping[tuple[str, int], bool] | None = None,
                         empty_as_consistent: bool = True) -> MetricsReport:
    """Metrics for per-turn predicted responses keyed by (dialog_id, turn)."""
    results, preds, refs = [], [], []
    for d in dialogs:
        kb = kbs.get(d.domain)
        if kb is None:
            continue
        rs = [list(responses[(d.id, t)]) for t in range(len(d.turns))]
        gold = [list(turn.response) for turn in d.turns]
        goal = (goals or {}).get(d.id, d.goal)
        v = [valid[(d.id, t)] for t in range(len(d.turns))] if valid is not None else ()
        results.append(score_dialog(d.id, d.domain, [t.user for t in d.turns], rs, gold, goal, kb, v))
        preds += rs
        refs += gold
    return build_report(results, preds, refs, empty_as_consistent)


def predict_and_evaluate(params: ModelParams, corpus: Corpus, dialogs: Sequence[Dialog],
                         cfg: ExperimentConfig, eval_mode: str | None = None,
                         ) -> tuple[list[TurnPrediction], MetricsReport]:
    dcfg = decode_config(cfg, corpus)
    tries = None if cfg.no_trie else corpus.tries
    preds = generate_corpus(params, dialogs, tries, dcfg, corpus.vocab, eval_mode or cfg.eval_mode)
    domain = {d.id: d.domain for d in dialogs}
    responses = {(p.dialog_id, p.turn): corpus.vocab.tokens(_strip_eos(p.response, corpus.vocab))
                 for p in preds}
    valid = {(p.dialog_id, p.turn): entity_is_valid(p.entity, corpus.vocab,
                                                    corpus.kbs.get(domain[p.dialog_id]))
             for p in preds}
    return preds, evaluate_predictions(dialogs, responses, corpus.kbs, corpus.goals, valid)


def _strip_eos(ids: Sequence[int], vocab: Vocabulary) -> list[int]:
    return [i for i in ids if i not in (vocab.eos_id, vocab.pad_id, vocab.bos_id)]


def decode_config(cfg: ExperimentConfig, corpus: Corpus) -> DecodeConfig:
    return DecodeConfig(mode=cfg.decode_mode, k=cfg.top_k, temperature=cfg.temperature,
                        max_entity_len=corpus.max_entity_len,
                        max_response_len=cfg.max_response_len, seed=cfg.seed)


def model_config(cfg: ExperimentConfig, corpus: Corpus) -> ModelConfig:
    return ModelConfig(d_model=cfg.d_model, d_ff=cfg.d_ff, max_len=cfg.max_len,
                       max_entity_len=corpus.max_entity_len,
                       max_response_len=max(cfg.max_response_len,
                                            max(len(t.response) + 1 for d in corpus.train
                                                for t in d.turns)))


@dataclass
class RunOutcome:
    config: ExperimentConfig
    train: TrainResult
    test_report: MetricsReport
    test_report_logits: MetricsReport | None
    predictions: list[TurnPrediction]
    seconds: float

    def to_json(self, vocab: Vocabulary) -> dict:
        return {
            "version": 1,
            "config": asdict(self.config),
            "initial_loss": self.train.initial_loss,
            "final_loss": self.train.final_loss,
            "best_epoch": self.train.best_epoch,
            "epochs": [asdict(r) for r in self.train.history],
            "augmentation": self.train.augment_report.to_json() if self.train.augment_report else None,
            "test": self.test_report.to_json(),
            "test_logit_eval": self.test_report_logits.to_json() if self.test_report_logits else None,
            "seconds": round(self.seconds, 1),
        }


def run_experiment(cfg: ExperimentConfig, corpus: Corpus | None = None,
                   logits_too: bool = False) -> RunOutcome:
    """Train one configuration and evaluate its best dev checkpoint on the test split."""
    t0 = time.perf_counter()
    corpus = corpus or load_corpus(cfg)
    params = init_params(len(corpus.vocab), model_config(cfg, corpus), seed=cfg.seed)
    out = Path(cfg.out_dir) if cfg.out_dir else None
    ckpt_dir = None
    if out is not None:
        ckpt_dir = out / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        _write_stage_artifacts(out, cfg, corpus)
    tries = None if cfg.no_trie else corpus.tries

    def dev_eval(p: ModelParams) -> dict:
        if not corpus.dev:
            return {"score": 0.0}
        return predict_and_evaluate(p, corpus, corpus.dev, cfg)[1].to_json()

    result = train(params, corpus.train, corpus.templates, corpus.kbs, corpus.tries if tries else {},
                   corpus.vocab, cfg.train_config(), evaluate=dev_eval, checkpoint_dir=ckpt_dir,
                   checkpoint_meta={"kb_hashes": corpus.kb_hashes, "seed": cfg.seed,
                                    "experiment": asdict(cfg)})
    best = result.best_params
    preds, report = predict_and_evaluate(best, corpus, corpus.test, cfg)
    logits_report = None
    if logits_too and cfg.eval_mode == "tokens":
        logits_report = predict_and_evaluate(best, corpus, corpus.test, cfg, "logits")[1]
    outcome = RunOutcome(cfg, result, report, logits_report, preds, time.perf_counter() - t0)
    if out is not None:
        save_checkpoint(out / "best.json", best, corpus.vocab.itos,
                        {"kb_hashes": corpus.kb_hashes, "seed": cfg.seed, "epoch": result.best_epoch,
                         "experiment": asdict(cfg)})
        with open(out / "predictions.jsonl", "w") as f:
            for p in preds:
                f.write(json.dumps(p.to_json(corpus.vocab)) + "\n")
        (out / "report.json").write_text(json.dumps(outcome.to_json(corpus.vocab), indent=1) + "\n")
    return outcome


def _write_stage_artifacts(out: Path, cfg: ExperimentConfig, corpus: Corpus) -> None:
    for dom, kb in corpus.kbs.items():
        kb.save(out / f"kb_{dom}.json")
        (out / f"trie_{dom}.json").write_text(dump_trie(corpus.tries[dom], corpus.vocab) + "\n")
    save_dialogs(out / "train.jsonl", corpus.train)
    save_dialogs(out / "dev.jsonl", corpus.dev)
    save_dialogs(out / "test.jsonl", corpus.test)
    dfn = epoch_training_dialogs(corpus.train, corpus.templates, corpus.kbs, cfg.train_config(), 1)
    save_dialogs(out / "dfn_epoch1.jsonl", dfn)
    (out / "augment_report.json").write_text(json.dumps(corpus.augment_report.to_json(), indent=1) + "\n")


def run_ablation(cfg: ExperimentConfig, variants: Sequence[str] = tuple(ABLATIONS),
                 seeds: Sequence[int] = (7,)) -> dict:
    """Mean and standard deviation of every metric per ablation variant."""
    corpus = load_corpus(cfg)
    rows: dict[str, list[dict]] = {v: [] for v in variants}
    cache: dict[tuple, RunOutcome] = {}
    for seed in seeds:
        for v in variants:
            overrides = dict(ABLATIONS[v])
            logit_eval = overrides.pop("logit_eval", False)
            run_cfg = replace(cfg, seed=seed, out_dir=None, **overrides)
            key = (seed, tuple(sorted(overrides.items())))
            if key not in cache:
                cache[key] = run_experiment(run_cfg, corpus, logits_too=True)
            outcome = cache[key]
            rep = outcome.test_report_logits if logit_eval else outcome.test_report
            row = {k: getattr(rep, k) for k in TABLE_COLUMNS}
            row["entity_validity"] = rep.entity_validity
            row["final_loss_ratio"] = outcome.train.final_loss / outcome.train.initial_loss
            rows[v].append(row)
    table = {}
    for v, runs in rows.items():
        table[v] = {}
        for k in runs[0]:
            vals = np.array([r[k] for r in runs], dtype=np.float64)
            table[v][k] = {"mean": float(vals.mean()), "std": float(vals.std()),
                           "runs": vals.tolist()}
    return {"version": 1, "seeds": list(seeds), "table": table}


def format_table(ablation: dict) -> str:
    cols = list(TABLE_COLUMNS) + ["entity_validity"]
    head = f"{'':18s}" + "".join(f"{c:>18s}" for c in cols)
    lines = [head]
    for v, row in ablation["table"].items():
        cells = "".join(f"{row[c]['mean']:>10.2f}±{row[c]['std']:<7.2f}" for c in cols)
        lines.append(f"{v:18s}{cells}")
    return "\n".join(lines)
