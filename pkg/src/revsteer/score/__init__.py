from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .models import ExactLinearModel, FeatureModel, MlpModel, ScoreModel
from .objective import ism_objective, loss_and_gradient, loss_gradient, model_divergence, pointwise_loss
from .training import AdamState, TrainConfig, TrainResult, adam_step, fit_feature_model_closed_form, train

__all__ = [
    "AdamState", "ExactLinearModel", "FeatureModel", "MlpModel", "ScoreModel", "TrainConfig", "TrainResult",
    "adam_step", "fit_feature_model_closed_form", "ism_objective", "load_checkpoint", "loss_and_gradient",
    "loss_gradient", "model_divergence", "pointwise_loss", "read_checkpoint", "save_checkpoint", "train",
]
