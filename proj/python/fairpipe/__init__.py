"""Bias-mitigation pipeline: tabular-to-text serialization, counterfactual
augmentation, unlearning, and group-fairness measurement."""

from fairpipe._core import (
    Dataset,
    ToyModel,
    accuracy,
    accuracy_parity,
    augment,
    brute_force_fairness,
    demographic_parity,
    equality_of_odds,
    fairness_report,
    intrinsic_report,
    load_dataset,
    load_toy_model,
    make_toy_model,
    run_intrinsic_eval,
    run_stage,
    serialize_row_text,
    split,
    train_unlearn,
)

__all__ = [
    "Dataset",
    "ToyModel",
    "accuracy",
    "accuracy_parity",
    "augment",
    "brute_force_fairness",
    "demographic_parity",
    "equality_of_odds",
    "fairness_report",
    "intrinsic_report",
    "load_dataset",
    "load_toy_model",
    "make_toy_model",
    "run_intrinsic_eval",
    "run_stage",
    "serialize_row_text",
    "split",
    "train_unlearn",
]
