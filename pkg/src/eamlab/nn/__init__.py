from .mlp import MlpVelocity, input_vjp, param_grad, time_features
from .optim import AdamW
from .tape import Tape, TapeError, Var

__all__ = [
    "AdamW",
    "MlpVelocity",
    "Tape",
    "TapeError",
    "Var",
    "input_vjp",
    "param_grad",
    "time_features",
]
