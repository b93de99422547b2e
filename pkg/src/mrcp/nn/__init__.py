from .model import CnnModel, CnnSpec, forward, loss_and_gradients, predict, predict_proba
from .train import DEFAULT_RANGES, TrainConfig, grid_search, majority_vote, train_cnn

__all__ = [
    "CnnModel", "CnnSpec", "forward", "loss_and_gradients", "predict", "predict_proba",
    "DEFAULT_RANGES", "TrainConfig", "grid_search", "majority_vote", "train_cnn",
]
