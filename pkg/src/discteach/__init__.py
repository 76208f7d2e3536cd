"""Discrete machine teaching over multi-hot categorical data.

Build a small perturbed "teacher" set that, merged into clean training
data, retargets a retrained classifier's predictions on chosen samples.
"""

from .data import (
    CandidatePool,
    Dataset,
    DatasetSchema,
    EncodingMode,
    Flip,
    FlipList,
    Instance,
    LabeledInstance,
    Provenance,
    SynthConfig,
    TargetEntry,
    TargetSpec,
    hamming_diff,
    jaccard_distance,
    load_dataset,
    modify,
    save_dataset,
    synth_generate,
)
from .greedy import GreedyConfig, best_subset, perturb_dataset, perturb_instance, top_q_candidates
from .scoring import ScoreSpec, align, g_align, g_dist
from .selection import SelectionPolicy, select_base
from .student import (
    Architecture,
    LogitTrace,
    ModelParams,
    TrainConfig,
    grad_input,
    grad_theta,
    last5_logit_decision,
    loss,
    predict_probs,
    train,
)
from .teaching import TeachingConfig, TeachingReport, check_success, combine, run_teaching
from .baselines import (
    BaselineConfig,
    at_once,
    feature_collision_craft,
    gradient_matching_craft,
    round_to_budget,
    run_baseline,
)

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "BaselineConfig",
    "CandidatePool",
    "Dataset",
    "DatasetSchema",
    "EncodingMode",
    "Flip",
    "FlipList",
    "GreedyConfig",
    "Instance",
    "LabeledInstance",
    "LogitTrace",
    "ModelParams",
    "Provenance",
    "ScoreSpec",
    "SelectionPolicy",
    "SynthConfig",
    "TargetEntry",
    "TargetSpec",
    "TeachingConfig",
    "TeachingReport",
    "TrainConfig",
    "align",
    "at_once",
    "best_subset",
    "check_success",
    "combine",
    "feature_collision_craft",
    "g_align",
    "g_dist",
    "grad_input",
    "grad_theta",
    "gradient_matching_craft",
    "hamming_diff",
    "jaccard_distance",
    "last5_logit_decision",
    "load_dataset",
    "loss",
    "modify",
    "perturb_dataset",
    "perturb_instance",
    "predict_probs",
    "round_to_budget",
    "run_baseline",
    "run_teaching",
    "save_dataset",
    "select_base",
    "synth_generate",
    "top_q_candidates",
    "train",
]
