"""Entity-consistent end-to-end task-oriented dialog generation in numpy."""
from .kb import (AttributeSchema, Entity, KnowledgeBase, UserGoal, Vocabulary, linearize_entity,
                 tokenize, detokenize)
from .trie import EntityTrie, build_trie, constrain
from .augment import Dialog, DialogTurn, Span, Template, augment_batch, delex, relex
from .model import ModelConfig, ModelParams, init_params
from .generation import DecodeConfig, generate_entity, generate_response, generate_turn
from .metrics import bleu, consistency, extract_info, f1, inform_success, score
from .training import TrainConfig, TrainFlags, joint_loss, train
from .pipeline import ExperimentConfig, run_ablation, run_experiment

__version__ = "0.1.0"

__all__ = [
    "AttributeSchema", "Entity", "KnowledgeBase", "UserGoal", "Vocabulary", "linearize_entity",
    "tokenize", "detokenize", "EntityTrie", "build_trie", "constrain", "Dialog", "DialogTurn",
    "Span", "Template", "augment_batch", "delex", "relex", "ModelConfig", "ModelParams",
    "init_params", "DecodeConfig", "generate_entity", "generate_response", "generate_turn",
    "bleu", "consistency", "extract_info", "f1", "inform_success", "score", "TrainConfig",
    "TrainFlags", "joint_loss", "train", "ExperimentConfig", "run_ablation", "run_experiment",
]
