"""stratcover: training-set selection versus poisoning attacks on GCNs.

Library + CLI for studying how StratDegree and GreedyCover training
selection change the perturbation budget a greedy poisoning adversary
needs to defeat graph-convolutional vertex classification, including an
adapted attack and two published defenses.
"""

__version__ = "0.1.0"

from .graph import (Graph, NormalizedAdjacency, avg_training_neighbors,
                    degree_vector, flip_edge, normalized_adjacency)
from .data import (Dataset, DataFormatError, SbmConfig, generate_sbm,
                   load_dataset, save_dataset, read_results, write_results)
from .selection import (Split, greedy_cover, make_split,
                        per_class_degree_thresholds, random_split, strat_degree)
from .gcn import (GcnParams, SurrogateParams, TrainConfig, f1_macro,
                  gcn_backward, gcn_forward, gcn_train, margin,
                  surrogate_forward, surrogate_train)
from .attack import (AttackConfig, AttackTrace, EdgeFlip, FeatureOff,
                     attack_target, candidate_perturbations, filter_singletons,
                     filter_training, score_perturbation, select_attackers,
                     unnoticeable_structure)
from .defense import (LowRankFactors, low_rank_gcn_forward,
                      remove_dissimilar_edges, truncated_svd)
from .harness import (DefenseConfig, ExperimentConfig, TargetCounts,
                      budget_vs_success, margin_quantile_curve, required_budget,
                      run_experiment, select_targets)

__all__ = [
    "Graph", "NormalizedAdjacency", "avg_training_neighbors", "degree_vector",
    "flip_edge", "normalized_adjacency",
    "Dataset", "DataFormatError", "SbmConfig", "generate_sbm", "load_dataset",
    "save_dataset", "read_results", "write_results",
    "Split", "greedy_cover", "make_split", "per_class_degree_thresholds",
    "random_split", "strat_degree",
    "GcnParams", "SurrogateParams", "TrainConfig", "f1_macro", "gcn_backward",
    "gcn_forward", "gcn_train", "margin", "surrogate_forward", "surrogate_train",
    "AttackConfig", "AttackTrace", "EdgeFlip", "FeatureOff", "attack_target",
    "candidate_perturbations", "filter_singletons", "filter_training",
    "score_perturbation", "select_attackers", "unnoticeable_structure",
    "LowRankFactors", "low_rank_gcn_forward", "remove_dissimilar_edges",
    "truncated_svd",
    "DefenseConfig", "ExperimentConfig", "TargetCounts", "budget_vs_success",
    "margin_quantile_curve", "required_budget", "run_experiment", "select_targets",
]
