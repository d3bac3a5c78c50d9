"""Joint sub-activity and affordance labeling over temporally segmented activity streams."""

from .graph import EdgeType, FeatureDims, NodeKind, SegmentGraph, build_graph
from .inference import (SolverConfig, SolverLimitError, brute_force_oracle, solve_exact,
                        solve_loss_augmented, solve_relaxed)
from .labeling import Labeling, RelaxedLabeling
from .labels import LabelSpace
from .learning import TrainConfig, hamming_loss, solve_restricted_qp, train
from .model import Model, WeightLayout, WeightVector, energy, joint_feature_map, load_model, save_model

__version__ = "0.1.0"

__all__ = [
    "EdgeType", "FeatureDims", "NodeKind", "SegmentGraph", "build_graph",
    "SolverConfig", "SolverLimitError", "brute_force_oracle", "solve_exact",
    "solve_loss_augmented", "solve_relaxed", "Labeling", "RelaxedLabeling", "LabelSpace",
    "TrainConfig", "hamming_loss", "solve_restricted_qp", "train", "Model", "WeightLayout",
    "WeightVector", "energy", "joint_feature_map", "load_model", "save_model",
]
