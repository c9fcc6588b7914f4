"""Multi-preference transformer for sequential recommendation, with a
preference-editing self-supervised pretraining strategy.

The package is organized as:

- ``tensor`` / ``optim``: numpy-backed autograd engine and Adam optimizer
- ``data``: interaction-log preprocessing, leave-one-out splits, batching
- ``model``: the multi-preference encoder, coverage regularizer and decoder
- ``editing``: pair sampling, preference separation/recombination, SSL losses
- ``training`` / ``checkpoint``: pretrain/finetune loops and persistence
- ``evaluation``: sampled-negative ranking metrics and reports
- ``cli``: the ``multipref`` command-line entry point
"""

from .tensor import (
    ContractError,
    Parameter,
    Tensor,
    backward,
    no_grad,
)
from .optim import Adam, AdamState, ConfigError

__all__ = [
    "Adam",
    "AdamState",
    "ConfigError",
    "ContractError",
    "Parameter",
    "Tensor",
    "backward",
    "no_grad",
]

__version__ = "0.1.0"
