"""Context- and action-aware multi-stage LSTMs for action recognition and anticipation."""

from .cam import CamWeights, FeatureMap
from .data import Dataset, GenConfig, Sample
from .errors import ConfigError, DimensionError, EmptySequenceError, FormatError, NonFiniteError
from .losses import LossKind
from .model import ArchVariant, ModelDims, MsLstmModel, Pooling, forward, init_model, predict
from .numkernel import Tensor
from .train import TrainConfig

__version__ = "0.1.0"
