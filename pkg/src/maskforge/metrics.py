"""Overlap and surface-distance metrics per class, global and lesion-wise."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .volume import DEFAULT_SCHEME, LabelScheme, LabelVolume, VolumeError, region_mask
from .voxelops import Connectivity, dilate, label_components

__all__ = [
    "DICE_METRICS",
    "EdgeCasePolicy",
    "HD_METRICS",
    "LesionMatchConfig",
    "METRICS",
    "MetricRecord",
    "dice",
    "evaluate_case",
    "hd95",
    "lesion_wise",
    "surface_voxels",
]

METRICS = ("dice", "hd95", "lw_dice", "lw_hd95")
DICE_METRICS = frozenset({"dice", "lw_dice"})
HD_METRICS = frozenset({"hd95", "lw_hd95"})


@dataclass(frozen=True)
class EdgeCasePolicy:
    """Scores used when one or both masks are empty."""

    both_empty_dice: float = 1.0
    both_empty_hd: float = 0.0
    one_empty_dice: float = 0.0
    one_empty_hd: float = 374.0

    def __post_init__(self) -> None:
        if not self.one_empty_hd > 0:
            raise ValueError("one_empty_hd penalty must be positive")


@dataclass(frozen=True)
class LesionMatchConfig:
    dilation_iterations: int = 3
    min_lesion_size: int = 0
    unmatched_dice: float = 0.0
    unmatched_hd: float = 374.0

    def __post_init__(self) -> None:
        if min(self.dilation_iterations, self.min_lesion_size, self.unmatched_dice, self.unmatched_hd) < 0:
            raise ValueError("lesion matching parameters must be non-negative")


@dataclass(frozen=True)
class MetricRecord:
    patient_id: str
    strategy_id: str
    class_name: str
    metric: str
    value: float


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise VolumeError(f"mask shapes differ: {a.shape} vs {b.shape}")


def dice(gt: np.ndarray, pred: np.ndarray, policy: EdgeCasePolicy = EdgeCasePolicy()) -> float:
    gt = np.asarray(gt, dtype=bool)
    pred = np.asarray(pred, dtype=bool)
    _check_shapes(gt, pred)
    a, b = int(gt.sum()), int(pred.sum())
    if a == 0 and b == 0:
        return policy.both_empty_dice
    if a == 0 or b == 0:
        return policy.one_empty_dice
    return 2 * int(np.count_nonzero(gt & pred)) / (a + b)


def _surface(mask: np.ndarray) -> np.ndarray:
    # border_value=0: voxels on the volume edge count as surface
    return mask & ~ndimage.binary_erosion(mask, Connectivity.FACE6.structure, border_value=0)


def surface_voxels(mask: np.ndarray) -> np.ndarray:
    """``(n, 3)`` coordinates of foreground voxels with a background or out-of-volume face neighbor."""
    return np.argwhere(_surface(np.asarray(mask, dtype=bool)))


def _directed_p95(src: np.ndarray, dst: np.ndarray, spacing: Sequence[float]) -> float:
    # exact Euclidean distance from every voxel center to the nearest dst voxel center
    dist = ndimage.distance_transform_edt(~dst, sampling=spacing)
    return float(np.percentile(dist[src], 95))


def hd95(
    gt: np.ndarray,
    pred: np.ndarray,
    spacing: Sequence[float] = (1.0, 1.0, 1.0),
    policy: EdgeCasePolicy = EdgeCasePolicy(),
) -> float:
    """Symmetric 95th-percentile surface distance in millimeters.

    Each direction takes the linearly interpolated 95th percentile of
    nearest-surface distances; the result is the larger of the two.
    """
    gt = np.asarray(gt, dtype=bool)
    pred = np.asarray(pred, dtype=bool)
    _check_shapes(gt, pred)
    has_gt, has_pred = gt.any(), pred.any()
    if not has_gt and not has_pred:
        return policy.both_empty_hd
    if not has_gt or not has_pred:
        return policy.one_empty_hd
    s_gt, s_pred = _surface(gt), _surface(pred)
    spacing = tuple(float(s) for s in spacing)
    return max(_directed_p95(s_gt, s_pred, spacing), _directed_p95(s_pred, s_gt, spacing))


def lesion_wise(
    gt: np.ndarray,
    pred: np.ndarray,
    spacing: Sequence[float] = (1.0, 1.0, 1.0),
    config: LesionMatchConfig = LesionMatchConfig(),
    policy: EdgeCasePolicy = EdgeCasePolicy(),
) -> tuple[float, float]:
    """Lesion-wise ``(dice, hd95)`` averaged over GT lesions and false-positive components.

    GT lesions are the 26-connected components of the dilated GT mask,
    restricted to original GT voxels.  A predicted component is matched to
    every GT lesion whose dilated extent it touches; predicted components
    touching no lesion count as false positives.
    """
    gt = np.asarray(gt, dtype=bool)
    pred = np.asarray(pred, dtype=bool)
    _check_shapes(gt, pred)

    grown = label_components(dilate(gt, Connectivity.FACE6, config.dilation_iterations), Connectivity.FULL26)
    pred_lab = label_components(pred, Connectivity.FULL26)

    entries: list[tuple[float, float]] = []
    matched = np.zeros(pred_lab.n + 1, dtype=bool)
    ignored = np.zeros(pred_lab.n + 1, dtype=bool)
    for lesion_id in range(1, grown.n + 1):
        extent = grown.ids == lesion_id
        lesion = extent & gt
        hits = np.unique(pred_lab.ids[extent])
        hits = hits[hits > 0]
        if lesion.sum() < config.min_lesion_size:
            ignored[hits] = True
            continue
        matched[hits] = True
        if hits.size == 0:
            entries.append((config.unmatched_dice, config.unmatched_hd))
            continue
        assigned = pred_lab.select(hits)
        entries.append((dice(lesion, assigned, policy), hd95(lesion, assigned, spacing, policy)))

    false_positives = int(np.count_nonzero(~matched[1:] & ~ignored[1:]))
    entries.extend([(config.unmatched_dice, config.unmatched_hd)] * false_positives)

    if not entries:
        # nothing to score: both empty, or only sub-minimum lesions and their matches
        return policy.both_empty_dice, policy.both_empty_hd
    return math.fsum(e[0] for e in entries) / len(entries), math.fsum(e[1] for e in entries) / len(entries)


def evaluate_case(
    gt_vol: LabelVolume,
    pred_vol: LabelVolume,
    scheme: LabelScheme = DEFAULT_SCHEME,
    metrics: Iterable[str] = ("dice", "hd95"),
    policy: EdgeCasePolicy = EdgeCasePolicy(),
    lesion_config: LesionMatchConfig = LesionMatchConfig(),
    strategy_id: str = "",
    classes: Iterable[str] | None = None,
) -> list[MetricRecord]:
    """One record per (class, metric), in scheme class order then metric order."""
    if gt_vol.dims != pred_vol.dims:
        raise VolumeError(f"{gt_vol.case_id}: dims differ, gt {gt_vol.dims} vs pred {pred_vol.dims}")
    if not np.allclose(gt_vol.spacing, pred_vol.spacing, rtol=1e-5, atol=0):
        raise VolumeError(f"{gt_vol.case_id}: spacing differs, gt {gt_vol.spacing} vs pred {pred_vol.spacing}")
    wanted = set(metrics)
    unknown = wanted - set(METRICS)
    if unknown:
        raise ValueError(f"unknown metric(s): {', '.join(sorted(unknown))}")
    ordered = [m for m in METRICS if m in wanted]
    class_names = scheme.class_names if classes is None else tuple(classes)
    spacing = gt_vol.spacing

    records = []
    for name in class_names:
        labels = scheme.labels_of(name)
        g = region_mask(gt_vol, labels, scheme)
        p = region_mask(pred_vol, labels, scheme)
        values: dict[str, float] = {}
        if "dice" in wanted:
            values["dice"] = dice(g, p, policy)
        if "hd95" in wanted:
            values["hd95"] = hd95(g, p, spacing, policy)
        if wanted & {"lw_dice", "lw_hd95"}:
            values["lw_dice"], values["lw_hd95"] = lesion_wise(g, p, spacing, lesion_config, policy)
        records.extend(MetricRecord(gt_vol.case_id, strategy_id, name, m, values[m]) for m in ordered)
    return records
