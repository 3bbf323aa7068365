"""Minimal reverse-mode autodiff engine with sparse graph kernels."""
from .tensor import (Tensor, NumericError, matmul, add, mul, sub, relu, leaky_relu,
                     concat_cols, tsum, scale, check_finite)
from .nn import (ForwardContext, BatchNormUpdate, Linear, BatchNorm, dropout,
                 neighbor_mean, gcn_propagate, attention_coefficients, attention_apply,
                 segment_sum, segment_max, BN_MOMENTUM, BN_EPS)
from .optim import (ClassWeights, compute_class_weights, weighted_masked_ce,
                    AdamW, clip_global_norm, cosine_lr,
                    REFERENCE_CLASS_WEIGHTS)

__all__ = [
    "Tensor", "NumericError", "matmul", "add", "mul", "sub", "relu", "leaky_relu",
    "concat_cols", "tsum", "scale", "check_finite",
    "ForwardContext", "BatchNormUpdate", "Linear", "BatchNorm", "dropout",
    "neighbor_mean", "gcn_propagate", "attention_coefficients", "attention_apply",
    "segment_sum", "segment_max", "BN_MOMENTUM", "BN_EPS",
    "ClassWeights", "compute_class_weights", "weighted_masked_ce",
    "AdamW", "clip_global_norm", "cosine_lr", "REFERENCE_CLASS_WEIGHTS",
]
