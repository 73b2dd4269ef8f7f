from .arch import RnntConfig
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .layers import LstmStack
from .optim import Optimizer, OptimizerConfig

__all__ = ["Checkpoint", "LstmStack", "Optimizer", "OptimizerConfig", "RnntConfig",
           "load_checkpoint", "save_checkpoint"]
