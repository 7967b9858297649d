"""Seeded synthetic ground-truth/prediction pairs for sanity-checking strategies.

Each case is a glioma-like phantom: an SNFH ellipsoid around a tumor core
(ET rim, NETC interior) with an adjacent resection cavity.  Scenarios perturb
the prediction (and for ``true-small-rc`` also the ground truth) in one
targeted way:

``clean``
    prediction equals ground truth.
``small-fp-rc``
    1-3 extra RC components of 10-99 voxels in the prediction only.
``true-small-rc``
    a real RC lesion of 10-99 voxels present in both.
``holey-wt``
    1-3 enclosed background pockets carved into the predicted tumor.
``multifocal-rc``
    1-3 extra RC components of varied size (2-4 in total) in the prediction.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .volume import LabelVolume, save_volume
from .voxelops import Connectivity, dilate, erode

__all__ = ["SCENARIOS", "SyntheticCase", "make_case", "write_cases"]

SCENARIOS = ("small-fp-rc", "true-small-rc", "holey-wt", "multifocal-rc", "clean")

DIMS = (40, 40, 32)
SPACING = (1.0, 1.0, 1.0)
NETC, SNFH, ET, RC = 1, 2, 3, 4


@dataclass(frozen=True)
class SyntheticCase:
    case_id: str
    gt: LabelVolume
    pred: LabelVolume


def _ellipsoid(center, radii) -> np.ndarray:
    grid = np.indices(DIMS, dtype=np.float64)
    d = sum(((grid[i] - center[i]) / radii[i]) ** 2 for i in range(3))
    return d <= 1.0


def _phantom(rng: np.random.Generator) -> np.ndarray:
    labels = np.zeros(DIMS, dtype=np.uint8)
    center = np.array([20, 20, 16]) + rng.integers(-2, 3, size=3)
    wt_radii = rng.uniform([8.5, 8.0, 7.0], [10.5, 10.0, 8.5])
    core_radii = wt_radii * rng.uniform(0.45, 0.6)

    labels[_ellipsoid(center, wt_radii)] = SNFH
    core = _ellipsoid(center, core_radii)
    labels[core] = ET
    labels[erode(core, Connectivity.FACE6, 2)] = NETC

    rc_center = center + np.array([wt_radii[0] - 1.5, 0, 0])
    rc = _ellipsoid(rc_center, rng.uniform(4.2, 5.2, size=3))
    labels[rc] = RC
    return labels


def _place_blob(
    rng: np.random.Generator,
    labels: np.ndarray,
    label: int,
    size_range: tuple[int, int],
    max_side: int,
) -> np.ndarray | None:
    """Put a box of ``size_range`` voxels into background, clear of all foreground by one voxel."""
    forbidden = dilate(labels > 0, Connectivity.FULL26, 1)
    for _ in range(500):
        sides = rng.integers(2, max_side + 1, size=3)
        volume = int(np.prod(sides))
        if not size_range[0] <= volume <= size_range[1]:
            continue
        corner = [int(rng.integers(0, DIMS[i] - sides[i] + 1)) for i in range(3)]
        box = tuple(slice(corner[i], corner[i] + sides[i]) for i in range(3))
        if forbidden[box].any():
            continue
        mask = np.zeros(DIMS, dtype=bool)
        mask[box] = True
        labels[mask] = label
        return mask
    return None


def _carve_pockets(rng: np.random.Generator, labels: np.ndarray, count: int) -> int:
    tumor = np.isin(labels, (NETC, SNFH, ET))
    # pocket voxels must keep a tumor voxel on every side
    interior = erode(tumor, Connectivity.FULL26, 2)
    candidates = np.argwhere(interior)
    carved = 0
    for _ in range(count):
        if len(candidates) == 0:
            break
        x, y, z = candidates[rng.integers(len(candidates))]
        side = int(rng.integers(1, 3))
        box = (slice(x, x + side), slice(y, y + side), slice(z, z + side))
        pocket = np.zeros(DIMS, dtype=bool)
        pocket[box] = True
        pocket &= interior
        labels[pocket] = 0
        carved += 1
    return carved


def make_case(scenario: str, index: int, seed: int) -> SyntheticCase:
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
    rng = np.random.default_rng([seed, index, SCENARIOS.index(scenario)])
    gt = _phantom(rng)
    pred = gt.copy()

    if scenario == "small-fp-rc":
        for _ in range(int(rng.integers(1, 4))):
            if _place_blob(rng, pred, RC, (10, 99), 5) is None:
                raise RuntimeError("no room for a false-positive RC component")
    elif scenario == "true-small-rc":
        blob = _place_blob(rng, gt, RC, (10, 99), 5)
        if blob is None:
            raise RuntimeError("no room for a small RC lesion")
        pred[blob] = RC
    elif scenario == "holey-wt":
        _carve_pockets(rng, pred, int(rng.integers(1, 4)))
    elif scenario == "multifocal-rc":
        for _ in range(int(rng.integers(1, 4))):
            if _place_blob(rng, pred, RC, (10, 300), 7) is None:
                raise RuntimeError("no room for an extra RC component")

    case_id = f"case_{index:04d}"
    return SyntheticCase(case_id, LabelVolume(gt, SPACING, case_id), LabelVolume(pred, SPACING, case_id))


def write_cases(scenario: str, cases: int, seed: int, output_dir: str | Path) -> list[str]:
    """Write ``gt/`` and ``pred/`` subdirectories of ``.nii.gz`` files; returns case ids."""
    out = Path(output_dir)
    (out / "gt").mkdir(parents=True, exist_ok=True)
    (out / "pred").mkdir(parents=True, exist_ok=True)
    ids = []
    for i in range(cases):
        case = make_case(scenario, i, seed)
        save_volume(case.gt, out / "gt" / f"{case.case_id}.nii.gz")
        save_volume(case.pred, out / "pred" / f"{case.case_id}.nii.gz")
        ids.append(case.case_id)
    return ids
