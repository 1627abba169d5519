"""Micro decoder-only language model with training, decoding and checkpoints."""

from .checkpoint import CheckpointError, load, save
from .decode import batch_logprob, greedy_decode, greedy_decode_batch, sequence_logprob
from .model import ModelConfig, ModelParams, forward, init_model, pad_batch
from .template import TokenizedExample, apply_mask, encode_qa, prompt_tokens, qa_layout
from .train import (
    LR_PRESETS,
    OBJECTIVES,
    AdamW,
    DivergenceError,
    TrainResult,
    TrainSettings,
    train,
)

__all__ = [
    "AdamW",
    "CheckpointError",
    "DivergenceError",
    "LR_PRESETS",
    "ModelConfig",
    "ModelParams",
    "OBJECTIVES",
    "TokenizedExample",
    "TrainResult",
    "TrainSettings",
    "apply_mask",
    "batch_logprob",
    "encode_qa",
    "forward",
    "greedy_decode",
    "greedy_decode_batch",
    "init_model",
    "load",
    "pad_batch",
    "prompt_tokens",
    "qa_layout",
    "save",
    "sequence_logprob",
    "train",
]
