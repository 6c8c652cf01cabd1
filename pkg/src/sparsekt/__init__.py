"""Knowledge tracing with k-sparse self-attention over past interactions."""

from .attention import SparseConfig, batched_causal_attention, mask_soft, mask_topk, sparse_output
from .checkpoint import Checkpoint
from .config import TrainConfig
from .data import Dataset, gen_synthetic, load_sequences, make_batches, save_sequences, split
from .metrics import accuracy, auc
from .model import SparseKT
from .training import evaluate, train

__all__ = [
    "Checkpoint",
    "Dataset",
    "SparseConfig",
    "SparseKT",
    "TrainConfig",
    "accuracy",
    "auc",
    "batched_causal_attention",
    "evaluate",
    "gen_synthetic",
    "load_sequences",
    "make_batches",
    "mask_soft",
    "mask_topk",
    "save_sequences",
    "sparse_output",
    "split",
    "train",
]
__version__ = "0.1.0"
