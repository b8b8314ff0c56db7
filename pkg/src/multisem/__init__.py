"""Few-shot prototype classification with cascaded multi-semantic fusion."""

from .errors import ConfigurationError, ContractError, DataError, MultisemError
from .estimator import MultiSemanticProtoNet
from .fusion import BranchConfig, FusionModel, parse_branch_config
from .harness import RunConfig, ablate, evaluate, train

__all__ = [
    "BranchConfig", "ConfigurationError", "ContractError", "DataError", "FusionModel",
    "MultiSemanticProtoNet", "MultisemError", "RunConfig", "ablate", "evaluate",
    "parse_branch_config", "train",
]

__version__ = "0.1.0"
