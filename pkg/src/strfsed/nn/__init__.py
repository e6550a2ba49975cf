"""Minimal numpy neural substrate: primitives, layers, Adam, gradient checks."""
from .functional import (
    batchnorm, bigru, concat, conv2d, dense, gru, maxpool2d, mse_loss, relu, sigmoid,
)
from .gradcheck import check_layer, numeric_grad, relative_error
from .layers import (
    BatchNorm2d, BiGRU, Conv2d, Dense, Layer, MaxPool2d, ReLU, Sequential, Sigmoid, ToSequence,
)
from .optim import Adam, adam_step

__all__ = [
    "Adam", "BatchNorm2d", "BiGRU", "Conv2d", "Dense", "Layer", "MaxPool2d", "ReLU",
    "Sequential", "Sigmoid", "ToSequence", "adam_step", "batchnorm", "bigru", "check_layer",
    "concat", "conv2d", "dense", "gru", "maxpool2d", "mse_loss", "numeric_grad",
    "relative_error", "relu", "sigmoid",
]
