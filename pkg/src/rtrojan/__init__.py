"""Review-aware profile-injection (shilling) attacks on recommender systems.

The attack copies real user templates, reconstructs them with an autoencoder,
prunes them into sparse fake profiles that push a target item, and writes a
matching review for every fake rating.  A surrogate review-based recommender and
a fake-profile detector steer the generator during bi-level training.
"""

from .attack import AttackConfig, AttackResult, RTrojan, l_imper, l_trans, run_attack
from .baselines import BandwagonAttack, RandomAttack, bandwagon_attack, random_attack
from .data import (
    Dataset,
    ItemAttributes,
    RawInteraction,
    SplitDataset,
    build_dataset,
    dataset_stats,
    leave_one_out_split,
    load_dataset_dir,
    load_item_metadata,
    load_review_corpus,
    sparsity_stats,
    write_dataset_dir,
)
from .detector import DetectorNet, ProfileDetector
from .evaluation import EvaluationReport, detection_accuracy, evaluate_attack, hit_ratio, ndcg
from .generator import RatingGenerator, prune, rescale, round_off, select_fillers
from .profiles import FakeProfileBatch
from .surrogate import DeepCoNNPlusPlus
from .synthetic import generate_synthetic_dataset, pick_unpopular_target
from .templates import TemplateMatrix, rank_templates
from .text import CausalLMBackend, TemplateBackend, build_prompt
from .victims import LightGCN, NCF, WRMF, DeepCoNN, fit_victim, make_victim

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "AttackResult",
    "BandwagonAttack",
    "CausalLMBackend",
    "Dataset",
    "DeepCoNN",
    "DeepCoNNPlusPlus",
    "DetectorNet",
    "EvaluationReport",
    "FakeProfileBatch",
    "ItemAttributes",
    "LightGCN",
    "NCF",
    "ProfileDetector",
    "RTrojan",
    "RandomAttack",
    "RatingGenerator",
    "RawInteraction",
    "SplitDataset",
    "TemplateBackend",
    "TemplateMatrix",
    "WRMF",
    "bandwagon_attack",
    "build_dataset",
    "build_prompt",
    "dataset_stats",
    "detection_accuracy",
    "evaluate_attack",
    "fit_victim",
    "generate_synthetic_dataset",
    "hit_ratio",
    "l_imper",
    "l_trans",
    "leave_one_out_split",
    "load_dataset_dir",
    "load_item_metadata",
    "load_review_corpus",
    "make_victim",
    "ndcg",
    "pick_unpopular_target",
    "prune",
    "random_attack",
    "rank_templates",
    "rescale",
    "round_off",
    "run_attack",
    "select_fillers",
    "sparsity_stats",
    "write_dataset_dir",
]
