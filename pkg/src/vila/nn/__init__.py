from vila.nn.encoder import (
    BLK,
    CLS,
    PAD,
    SEP,
    SPECIAL_TOKENS,
    UNK,
    ModelConfig,
    bucketize,
    embed_2d_position,
    encoder_forward,
)
from vila.nn.gradcheck import GradCheckReport, gradcheck
from vila.nn.loss import IGNORE, cross_entropy
from vila.nn.optim import OptimState, optimizer_step, schedule

__all__ = [
    "BLK",
    "CLS",
    "IGNORE",
    "PAD",
    "SEP",
    "SPECIAL_TOKENS",
    "UNK",
    "GradCheckReport",
    "ModelConfig",
    "OptimState",
    "bucketize",
    "cross_entropy",
    "embed_2d_position",
    "encoder_forward",
    "gradcheck",
    "optimizer_step",
    "schedule",
]
