"""Character tokenizer, numpy transformer encoder and training loops."""
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .encoder import ModelParams, backward, cast_params, count_params, forward, init_params
from .tokenizer import DEFAULT_VOCAB, TokenBatch, TokenSequence, Vocab, apply_mlm_mask, decode, encode, encode_batch, mask_batch
from .train import OptimizerState, adamw_step, loss, lr_at, run_training

__all__ = [
    "Checkpoint",
    "DEFAULT_VOCAB",
    "ModelParams",
    "OptimizerState",
    "TokenBatch",
    "TokenSequence",
    "Vocab",
    "adamw_step",
    "apply_mlm_mask",
    "backward",
    "cast_params",
    "count_params",
    "decode",
    "encode",
    "encode_batch",
    "forward",
    "init_params",
    "load_checkpoint",
    "loss",
    "lr_at",
    "mask_batch",
    "run_training",
    "save_checkpoint",
]
