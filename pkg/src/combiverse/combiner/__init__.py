from combiverse.combiner.ablation import AblationReport, ablation_matrix
from combiverse.combiner.checkpoint import latest_checkpoint, load_checkpoint, save_checkpoint
from combiverse.combiner.config import PARAMETER_GROUPS, OptimizerConfig
from combiverse.combiner.export import export_composition, load_composition
from combiverse.combiner.optimize import CombineRun, combine
from combiverse.combiner.variables import PlacementVariables

__all__ = [
    "PARAMETER_GROUPS",
    "AblationReport",
    "CombineRun",
    "OptimizerConfig",
    "PlacementVariables",
    "ablation_matrix",
    "combine",
    "export_composition",
    "latest_checkpoint",
    "load_checkpoint",
    "load_composition",
    "save_checkpoint",
]
