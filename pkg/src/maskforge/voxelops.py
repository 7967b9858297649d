"""Lattice primitives on boolean 3D masks.

Connected-component labeling, component selection, hole detection and
binary morphology.  Masks are plain ``bool`` arrays indexed ``[x, y, z]``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "ComponentLabeling",
    "Connectivity",
    "close",
    "dilate",
    "erode",
    "fill_holes_mask",
    "label_components",
    "small_components_mask",
    "top_k_mask",
]


class Connectivity(enum.IntEnum):
    """Voxel adjacency; the value is the neighbor count."""

    FACE6 = 6
    FULL26 = 26

    @property
    def structure(self) -> np.ndarray:
        return ndimage.generate_binary_structure(3, 1 if self is Connectivity.FACE6 else 3)

    @classmethod
    def parse(cls, value: int | str | Connectivity) -> Connectivity:
        if isinstance(value, Connectivity):
            return value
        if isinstance(value, bool):
            raise ValueError(f"invalid connectivity {value!r}")
        if isinstance(value, str):
            key = value.strip().upper()
            if key in cls.__members__:
                return cls[key]
            if not key.isdigit():
                raise ValueError(f"invalid connectivity {value!r}; expected 6 or 26")
            value = int(key)
        try:
            return cls(value)
        except ValueError:
            raise ValueError(f"invalid connectivity {value!r}; expected 6 or 26") from None


@dataclass(frozen=True, eq=False)
class ComponentLabeling:
    """Connected components numbered ``1..n`` largest first.

    Equal-sized components are ordered by their smallest x-fastest linear voxel
    index, so numbering depends only on the mask.
    """

    ids: np.ndarray
    sizes: np.ndarray
    connectivity: Connectivity

    @property
    def n(self) -> int:
        return len(self.sizes)

    @property
    def foreground(self) -> np.ndarray:
        return self.ids > 0

    def select(self, component_ids: np.ndarray) -> np.ndarray:
        """Mask of the union of the given 1-based component ids."""
        keep = np.zeros(self.n + 1, dtype=bool)
        keep[np.asarray(component_ids, dtype=np.intp)] = True
        keep[0] = False
        return keep[self.ids]


def label_components(mask: np.ndarray, conn: Connectivity = Connectivity.FULL26) -> ComponentLabeling:
    mask = np.asarray(mask, dtype=bool)
    conn = Connectivity.parse(conn)
    raw, n = ndimage.label(mask, structure=conn.structure)
    if n == 0:
        return ComponentLabeling(np.zeros(mask.shape, dtype=np.int32), np.zeros(0, dtype=np.int64), conn)

    sizes = np.bincount(raw.ravel(), minlength=n + 1)[1:]
    # first occurrence of each raw label in x-fastest order
    flat = raw.ravel(order="F")
    nz = np.flatnonzero(flat)
    first = np.full(n + 1, flat.size, dtype=np.int64)
    np.minimum.at(first, flat[nz], nz)
    order = np.lexsort((first[1:], -sizes))  # size descending, then first index

    remap = np.zeros(n + 1, dtype=np.int32)
    remap[order + 1] = np.arange(1, n + 1, dtype=np.int32)
    return ComponentLabeling(remap[raw], sizes[order].astype(np.int64), conn)


def top_k_mask(lab: ComponentLabeling, k: int) -> np.ndarray:
    """Union of the ``k`` largest components."""
    if k < 0:
        raise ValueError("k must be non-negative")
    return (lab.ids > 0) & (lab.ids <= k)


def small_components_mask(lab: ComponentLabeling, threshold: int) -> np.ndarray:
    """Union of components with strictly fewer than ``threshold`` voxels."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    return lab.select(np.flatnonzero(lab.sizes < threshold) + 1)


def _touches_border(ids: np.ndarray, n: int) -> np.ndarray:
    hit = np.zeros(n + 1, dtype=bool)
    for axis in range(3):
        for index in (0, -1):
            hit[np.take(ids, index, axis=axis)] = True
    hit[0] = False
    return hit


def fill_holes_mask(mask: np.ndarray, bg_conn: Connectivity = Connectivity.FACE6) -> np.ndarray:
    """``mask`` plus every background component that does not reach the volume border."""
    mask = np.asarray(mask, dtype=bool)
    bg_conn = Connectivity.parse(bg_conn)
    ids, n = ndimage.label(~mask, structure=bg_conn.structure)
    if n == 0:
        return mask.copy()
    enclosed = ~_touches_border(ids, n)
    enclosed[0] = False
    return mask | enclosed[ids]


def dilate(mask: np.ndarray, conn: Connectivity = Connectivity.FULL26, iterations: int = 1) -> np.ndarray:
    """Iterated neighborhood union, clipped to the volume."""
    mask = np.asarray(mask, dtype=bool)
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    if iterations == 0 or not mask.any():
        return mask.copy()
    # scipy treats iterations=0 as "until stable"; guarded above
    return ndimage.binary_dilation(mask, Connectivity.parse(conn).structure, iterations=iterations)


def erode(mask: np.ndarray, conn: Connectivity = Connectivity.FULL26, iterations: int = 1) -> np.ndarray:
    """Iterated neighborhood intersection; voxels outside the volume count as background."""
    mask = np.asarray(mask, dtype=bool)
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    if iterations == 0 or not mask.any():
        return mask.copy()
    return ndimage.binary_erosion(mask, Connectivity.parse(conn).structure, iterations=iterations, border_value=0)


def close(mask: np.ndarray, conn: Connectivity = Connectivity.FULL26, iterations: int = 1) -> np.ndarray:
    """Dilation followed by erosion with the same neighborhood and count.

    Computed on a lattice padded by ``iterations`` voxels and cropped back, so
    the border of the volume does not erode the object: the result always
    contains ``mask`` and closing twice equals closing once.
    """
    mask = np.asarray(mask, dtype=bool)
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    if iterations == 0 or not mask.any():
        return mask.copy()
    conn = Connectivity.parse(conn)
    padded = np.pad(mask, iterations)
    closed = erode(dilate(padded, conn, iterations), conn, iterations)
    inner = tuple(slice(iterations, -iterations) for _ in range(3))
    return closed[inner]
