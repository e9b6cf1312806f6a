"""Few-shot action recognition head over precomputed frame and prompt embeddings."""

from .config import ModelConfig
from .data import (
    EmbeddingStore,
    Episode,
    Manifest,
    aggregate_prompts,
    read_store,
    sample_episode,
    synth_dataset,
    write_store,
)
from .engine import (
    EvalResult,
    ModelParams,
    evaluate,
    forward_episode,
    init_model_params,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .errors import FsarError
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "EmbeddingStore",
    "Episode",
    "EvalResult",
    "FsarError",
    "Manifest",
    "ModelConfig",
    "ModelParams",
    "Tensor",
    "aggregate_prompts",
    "evaluate",
    "forward_episode",
    "init_model_params",
    "load_checkpoint",
    "read_store",
    "sample_episode",
    "save_checkpoint",
    "synth_dataset",
    "train",
    "write_store",
]
