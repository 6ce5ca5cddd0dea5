"""Dynamic-graph recurrent traffic forecaster with sequence and graph critics, on a numpy autodiff engine."""

from .dagg import EmbeddingBank, GraphGenConfig, build_adjacency
from .errors import ConfigError, ContractError, DivergenceError, InputError, ShapeError, TrendGCNError
from .generator import ModelConfig, TrendGCN

__version__ = "0.1.0"
