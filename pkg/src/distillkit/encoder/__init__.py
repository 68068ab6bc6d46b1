"""Transformer encoders with Q/K/V capture and checkpoint serialization."""

from .checkpoint import load_checkpoint, save_checkpoint
from .model import (
    ACT_GEGLU,
    ACT_GELU,
    POS_ABSOLUTE,
    POS_RELATIVE,
    AttentionCapture,
    EncoderWeights,
    ModelConfig,
    bucket_matrix,
    forward,
    init_model,
    is_no_decay,
    mlm_loss,
    param_shapes,
    relative_bucket,
)

__all__ = [
    "ACT_GEGLU",
    "ACT_GELU",
    "POS_ABSOLUTE",
    "POS_RELATIVE",
    "AttentionCapture",
    "EncoderWeights",
    "ModelConfig",
    "bucket_matrix",
    "forward",
    "init_model",
    "is_no_decay",
    "load_checkpoint",
    "mlm_loss",
    "param_shapes",
    "relative_bucket",
    "save_checkpoint",
]
