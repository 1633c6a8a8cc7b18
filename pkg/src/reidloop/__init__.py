"""Incremental person re-identification metric learning with selective labeling."""

__version__ = "0.1.0"

from .core import (FeatureRecord, LabeledPair, LabelSource, ModelState,
                   dissimilarity, hinge_loss, hinge_subgradients, l21_norm,
                   margin, objective, pair_margins, similarity, stack_features,
                   truncate_rows)
from .trainer import (EpochSnapshot, EpochStats, TrainerConfig, TrainResult,
                      prox_group_soft_threshold, run_epoch, snapshot, train,
                      train_deterministic)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .selection import (CalibrationError, DEFAULT_CALIBRATOR,
                        DegenerateGraphError, ParticipationVector,
                        PlattCalibrator, ProbeRelevantSet, SimilarityGraph,
                        build_graph, dominant_set, platt_fit,
                        probe_relevant_set, replicator_step, write_edge_list)
from .data import (Dataset, DatasetError, load_dataset, make_synthetic_dataset,
                   save_dataset)
from .evaluation import (CmcResult, EvalReport, ScoreMatrix, cmc,
                         evaluate_model, mean_average_precision,
                         report_for_session, score_all)
from .adaptation import (AdaptationConfig, AdaptationSession, BatchPartition,
                         GroundTruthOracle, LabelOracle, NoisyOracle,
                         SelectionMode, initialize_session, partition,
                         run_adaptation, selection_baselines, simulated_oracle)

__all__ = [
    "FeatureRecord", "LabeledPair", "LabelSource", "ModelState",
    "similarity", "dissimilarity", "margin", "pair_margins", "hinge_loss",
    "hinge_subgradients", "objective", "l21_norm", "stack_features",
    "truncate_rows",
    "TrainerConfig", "EpochSnapshot", "EpochStats", "TrainResult",
    "snapshot", "run_epoch", "prox_group_soft_threshold", "train",
    "train_deterministic",
    "CheckpointError", "save_checkpoint", "load_checkpoint",
    "PlattCalibrator", "DEFAULT_CALIBRATOR", "CalibrationError", "platt_fit",
    "SimilarityGraph", "build_graph", "ParticipationVector", "replicator_step",
    "dominant_set", "DegenerateGraphError", "ProbeRelevantSet",
    "probe_relevant_set", "write_edge_list",
    "Dataset", "DatasetError", "load_dataset", "save_dataset",
    "make_synthetic_dataset",
    "ScoreMatrix", "score_all", "CmcResult", "cmc", "mean_average_precision",
    "EvalReport", "evaluate_model", "report_for_session",
    "AdaptationConfig", "BatchPartition", "partition", "LabelOracle",
    "GroundTruthOracle", "NoisyOracle", "simulated_oracle", "SelectionMode",
    "AdaptationSession", "initialize_session", "run_adaptation",
    "selection_baselines",
]
