"""Class-specific postprocessing, evaluation and ranking of 3D segmentation label volumes."""
from .metrics import EdgeCasePolicy, LesionMatchConfig, MetricRecord, dice, evaluate_case, hd95, lesion_wise
from .ranking import RankingGrid, RankReport, global_rank, per_patient_rank, rank_cell
from .strategy import StrategySpec, apply_strategy, parse_strategy, preset, serialize_strategy
from .transforms import TransformParams, TransformRegistry, list_transforms, lookup_transform, register_transform
from .volume import DEFAULT_SCHEME, LabelScheme, LabelVolume, load_volume, region_mask, save_volume, set_region
from .voxelops import Connectivity, label_components

__version__ = "0.1.0"
