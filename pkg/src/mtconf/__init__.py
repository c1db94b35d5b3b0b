"""Source-side confidence estimation toolkit for machine translation."""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    DataError,
    MetricsError,
    MtconfError,
    NumericalError,
    ValidationError,
)
from .subword import SubwordModel, TokenizedSentence, train_subwords
from .model import (
    Checkpoint,
    ModelConfig,
    SequenceScore,
    Translation,
    cross_attention,
    encoder_states,
    input_embedding_gradient,
    sequence_score,
    translate,
)
from .train import TrainConfig, load_parallel_corpus, train_model

__all__ = [
    "Checkpoint",
    "ConfigurationError",
    "DataError",
    "MetricsError",
    "ModelConfig",
    "MtconfError",
    "NumericalError",
    "SequenceScore",
    "SubwordModel",
    "TokenizedSentence",
    "TrainConfig",
    "Translation",
    "ValidationError",
    "cross_attention",
    "encoder_states",
    "input_embedding_gradient",
    "load_parallel_corpus",
    "sequence_score",
    "train_model",
    "train_subwords",
    "translate",
]
