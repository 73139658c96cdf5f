"""Gradient-boosted regression trees for weighted logistic classification."""
from .model import (
    BoostedModel,
    DegenerateModelError,
    GbtParams,
    ImportanceReport,
    Tree,
    gain_importance,
    predict,
)
from .train import (
    TUNER_BOUNDS,
    Booster,
    cross_validate_rounds,
    logistic_grad_hess,
    logistic_loss,
    random_search,
    stratified_folds,
    train,
    train_arrays,
    training_objective,
)

__all__ = [
    "BoostedModel", "Booster", "DegenerateModelError", "GbtParams", "ImportanceReport",
    "TUNER_BOUNDS", "Tree", "cross_validate_rounds", "gain_importance",
    "logistic_grad_hess", "logistic_loss", "predict", "random_search",
    "stratified_folds", "train", "train_arrays", "training_objective",
]
