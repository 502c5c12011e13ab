"""Semi-supervised sequence transduction with a four-LSTM sequential autoencoder."""
from .errors import (ContractError, DimensionError, DomainError, NumericalError, OracleError,
                     ParseError, Seq4Error)
from .model import ModelConfig, Seq4Model
from .trainer import Instance, TrainConfig, eval_exact_match, train

__version__ = "0.1.0"

__all__ = [
    "ContractError", "DimensionError", "DomainError", "Instance", "ModelConfig",
    "NumericalError", "OracleError", "ParseError", "Seq4Error", "Seq4Model", "TrainConfig",
    "eval_exact_match", "train",
]
