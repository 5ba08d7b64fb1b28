"""From-scratch attention message passing, edge decoding, exact gradients.

No ML framework is involved: forward passes, the full backward pass
(including the softmax-attention Jacobian), and the Adam optimizer are
implemented directly on numpy arrays so the numerics stay auditable and the
gradient check in the test suite is meaningful.
"""

from .params import GradSet, LayerParams, ParamSet, init_params, zeros_like_params
from .forward import (
    EncodeCache,
    attention_coefficients,
    decode_edge,
    decode_pairs,
    encode,
    loss_weighted_bce,
    message_pass_layer,
)
from .backward import backward
from .optim import AdamState, optimizer_step
from .training import EdgeBatch, make_training_batch, train_on_snapshots

__all__ = [
    "AdamState",
    "EdgeBatch",
    "EncodeCache",
    "GradSet",
    "LayerParams",
    "ParamSet",
    "attention_coefficients",
    "backward",
    "decode_edge",
    "decode_pairs",
    "encode",
    "init_params",
    "loss_weighted_bce",
    "make_training_batch",
    "message_pass_layer",
    "optimizer_step",
    "train_on_snapshots",
    "zeros_like_params",
]
