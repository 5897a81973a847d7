__version__ = "0.1.0"

from .engines import EngineKind
from .engines import GradStore
from .engines import MemoryLedger
from .engines import StepStats
from .engines import run_step
from .engines import sgd_update
from .engines import step_pareprop
from .engines import step_reprop
from .engines import step_vanilla
from .models import Batch
from .models import Model
from .models import ModelConfig
from .models import ModelKind
from .models import build_model
from .models import make_batch
from .tensor import DType
from .tensor import Rng

__all__ = [
    "Batch",
    "DType",
    "EngineKind",
    "GradStore",
    "MemoryLedger",
    "Model",
    "ModelConfig",
    "ModelKind",
    "Rng",
    "StepStats",
    "build_model",
    "make_batch",
    "run_step",
    "sgd_update",
    "step_pareprop",
    "step_reprop",
    "step_vanilla",
]
