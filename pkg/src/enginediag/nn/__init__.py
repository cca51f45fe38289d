"""Minimal dense-tensor kernel: layers, loss, optimizer, checks.

All training arithmetic runs in float32; the gradient checker rebuilds
graphs in float64 to isolate truncation error.  A layer instance caches
one forward pass for its backward pass, so a graph is driven by exactly
one training loop at a time; inference on frozen parameters is safe from
any number of threads via `forward(training=False)`.
"""

from .layers import (
    BatchNorm,
    Conv1d,
    Conv2d,
    Dropout,
    GlobalAvgPool,
    Linear,
    LogSoftmax,
    MaxPool1d,
    MaxPool2d,
    Parameter,
    ReLU,
    Sequential,
    nll_loss,
)
from .optim import Adam
from .gradcheck import grad_check
from .checkpoint import read_checkpoint, write_checkpoint

__all__ = [
    "Adam", "BatchNorm", "Conv1d", "Conv2d", "Dropout", "GlobalAvgPool",
    "Linear", "LogSoftmax", "MaxPool1d", "MaxPool2d", "Parameter", "ReLU",
    "Sequential", "grad_check", "nll_loss", "read_checkpoint", "write_checkpoint",
]
