from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .net import FusionNet, NetConfig, init_net, loss_and_grad, predict_proba
from .preprocess import FieldCircle, crop_resize, detect_field_circle, load_png, save_png
from .train import PairSet, TrainConfig, TrainState, train

__all__ = [
    "CheckpointError",
    "FieldCircle",
    "FusionNet",
    "NetConfig",
    "PairSet",
    "TrainConfig",
    "TrainState",
    "crop_resize",
    "detect_field_circle",
    "init_net",
    "load_checkpoint",
    "load_png",
    "loss_and_grad",
    "predict_proba",
    "save_checkpoint",
    "save_png",
    "train",
]
