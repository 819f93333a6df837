"""Semi-supervised survival classification from incomplete categorical data."""
from .boosting import BoostConfig, BoostedTreesClassifier, Ensemble, train_ensemble
from .data import (
    ClinicalPreprocessor,
    ClinicalTable,
    LabelingConfig,
    SurvivalDataset,
    assign_labels,
    drop_near_constant,
    parse_clinical_table,
    preprocess,
    stratify_attributes,
    summarize_dataset,
    suggest_balanced_threshold,
)
from .evaluation import compute_metrics, confusion_matrix, cross_validate, survival_threshold_sweep
from .self_training import SelfTrainConfig, SelfTrainingBoostClassifier, train_model
from .synthetic import SyntheticSpec, generate_synthetic
from .tree import SurrogateTreeClassifier, TreeConfig, grow_tree

__version__ = "0.1.0"
