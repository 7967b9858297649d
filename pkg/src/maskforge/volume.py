"""Label volumes, label schemes and NIfTI-1 input/output.

Voxel arrays are held as ``uint8`` numpy arrays of shape ``(nx, ny, nz)``
indexed ``[x, y, z]``.  The linear voxel index used anywhere an ordering is
needed is x-fastest (Fortran order), which is also the NIfTI on-disk order.
"""
from __future__ import annotations

import gzip
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

__all__ = [
    "DEFAULT_SCHEME",
    "LabelScheme",
    "LabelVolume",
    "NiftiFormatError",
    "VolumeError",
    "case_id_from_path",
    "load_volume",
    "region_mask",
    "save_volume",
    "set_region",
]

MAX_LABEL = 255


class VolumeError(ValueError):
    """Invalid label volume contents or incompatible volumes."""


class NiftiFormatError(VolumeError):
    """File is not a NIfTI-1 label volume this package can read."""


@dataclass(frozen=True)
class LabelScheme:
    """Named classes, each a set of label ids.

    Singleton classes define the label universe; composed classes (more than
    one label) may only use labels from that universe.
    """

    classes: Mapping[str, frozenset[int]]

    def __post_init__(self) -> None:
        classes = {name: frozenset(int(l) for l in labels) for name, labels in self.classes.items()}
        if not classes:
            raise ValueError("label scheme needs at least one class")
        universe = frozenset().union(*(s for s in classes.values() if len(s) == 1))
        for name, labels in classes.items():
            if not labels:
                raise ValueError(f"class {name!r} has no labels")
            if not labels <= universe:
                raise ValueError(f"class {name!r} uses labels outside the universe: {sorted(labels - universe)}")
            if 0 in labels or max(labels) > MAX_LABEL:
                raise ValueError(f"class {name!r} has label ids outside 1..{MAX_LABEL}")
        object.__setattr__(self, "classes", MappingProxyType(classes))

    @property
    def universe(self) -> frozenset[int]:
        return frozenset().union(*(s for s in self.classes.values() if len(s) == 1))

    @property
    def class_names(self) -> tuple[str, ...]:
        return tuple(self.classes)

    def labels_of(self, class_name: str) -> frozenset[int]:
        try:
            return self.classes[class_name]
        except KeyError:
            raise KeyError(f"unknown class {class_name!r}; known: {', '.join(self.classes)}") from None


DEFAULT_SCHEME = LabelScheme(
    {
        "NETC": frozenset({1}),
        "SNFH": frozenset({2}),
        "ET": frozenset({3}),
        "RC": frozenset({4}),
        "TC": frozenset({1, 3}),
        "WT": frozenset({1, 2, 3}),
    }
)


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Immutable 3D label grid with voxel spacing in millimeters.

    ``header`` optionally carries the raw 348-byte NIfTI header of the file the
    volume was read from, so orientation fields survive a load/save cycle.
    """

    labels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    case_id: str = ""
    header: bytes | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        arr = np.asarray(self.labels)
        if arr.ndim != 3 or 0 in arr.shape:
            raise VolumeError(f"labels must be a non-empty 3D array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if arr.dtype.kind not in "iub":
                raise VolumeError(f"labels must have an integer dtype, got {arr.dtype}")
            if arr.size and (arr.min() < 0 or arr.max() > MAX_LABEL):
                raise VolumeError(f"label values must lie in 0..{MAX_LABEL}")
            arr = arr.astype(np.uint8)
        elif arr.flags.writeable:
            arr = arr.copy()
        arr.setflags(write=False)
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(math.isfinite(s) and s > 0 for s in spacing):
            raise VolumeError(f"spacing must be three finite positive numbers, got {self.spacing!r}")
        object.__setattr__(self, "labels", arr)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape  # type: ignore[return-value]

    def with_labels(self, labels: np.ndarray) -> LabelVolume:
        """Copy of this volume carrying new label data of the same shape."""
        if labels.shape != self.dims:
            raise VolumeError(f"shape {labels.shape} does not match volume dims {self.dims}")
        return LabelVolume(labels, self.spacing, self.case_id, self.header)

    def check_labels(self, scheme: LabelScheme = DEFAULT_SCHEME) -> None:
        present = set(np.unique(self.labels).tolist()) - {0}
        extra = present - scheme.universe
        if extra:
            raise VolumeError(f"{self.case_id or 'volume'}: labels {sorted(extra)} not in scheme universe")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabelVolume):
            return NotImplemented
        return (
            self.case_id == other.case_id
            and self.spacing == other.spacing
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None  # type: ignore[assignment]


def region_mask(vol: LabelVolume, labels: Iterable[int], scheme: LabelScheme = DEFAULT_SCHEME) -> np.ndarray:
    """Boolean mask of voxels whose label is in ``labels``."""
    labels = sorted({int(l) for l in labels})
    extra = set(labels) - scheme.universe
    if extra:
        raise VolumeError(f"labels {sorted(extra)} are outside the scheme universe {sorted(scheme.universe)}")
    if not labels:
        return np.zeros(vol.dims, dtype=bool)
    return np.isin(vol.labels, labels)


def set_region(vol: LabelVolume, mask: np.ndarray, label: int, scheme: LabelScheme = DEFAULT_SCHEME) -> LabelVolume:
    """New volume with ``label`` written wherever ``mask`` is true."""
    if mask.shape != vol.dims:
        raise VolumeError(f"mask shape {mask.shape} does not match volume dims {vol.dims}")
    if label != 0 and label not in scheme.universe:
        raise VolumeError(f"label {label} is outside the scheme universe")
    out = vol.labels.copy()
    out[mask] = label
    return vol.with_labels(out)


# --------------------------------------------------------------------------
# NIfTI-1

_HEADER_FIELDS = [
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"),
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
]
HEADER_DTYPE = np.dtype([(f[0], "<" + f[1], *f[2:]) for f in _HEADER_FIELDS])
assert HEADER_DTYPE.itemsize == 348

# NIfTI datatype code -> numpy dtype (byte order applied at read time)
_DATATYPES = {
    2: np.dtype("u1"),
    4: np.dtype("i2"),
    8: np.dtype("i4"),
    16: np.dtype("f4"),
    512: np.dtype("u2"),
}
_MAGICS = (b"n+1\x00", b"ni1\x00")
_GZIP_MAGIC = b"\x1f\x8b"


def case_id_from_path(path: str | Path) -> str:
    name = Path(path).name
    for suffix in (".nii.gz", ".nii", ".hdr.gz", ".hdr", ".img.gz", ".img"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return Path(name).stem


def _read_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == _GZIP_MAGIC:
        try:
            return gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise NiftiFormatError(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


def _parse_header(buf: bytes, path: Path) -> np.ndarray:
    if len(buf) < 348:
        raise NiftiFormatError(f"{path}: file too short for a NIfTI-1 header")
    hdr = np.frombuffer(buf[:348], dtype=HEADER_DTYPE)[0]
    if hdr["sizeof_hdr"] != 348:
        swapped = np.frombuffer(buf[:348], dtype=HEADER_DTYPE.newbyteorder(">"))[0]
        if swapped["sizeof_hdr"] != 348:
            raise NiftiFormatError(f"{path}: sizeof_hdr is not 348")
        hdr = swapped
    if bytes(buf[344:348]) not in _MAGICS:
        raise NiftiFormatError(f"{path}: bad magic {bytes(buf[344:348])!r}")
    return hdr


def load_volume(path: str | Path, scheme: LabelScheme | None = DEFAULT_SCHEME) -> LabelVolume:
    """Read a 3D NIfTI-1 label volume (``.nii``, ``.nii.gz`` or ``.hdr``/``.img`` pair).

    Floating-point data is accepted only if every scaled value is an exact
    integer.  Pass ``scheme=None`` to skip the label-universe check.
    """
    path = Path(path)
    buf = _read_bytes(path)
    hdr = _parse_header(buf, path)
    big_endian = hdr.dtype["sizeof_hdr"].byteorder == ">"

    dim = [int(d) for d in hdr["dim"]]
    if dim[0] != 3:
        raise NiftiFormatError(f"{path}: expected a 3D volume, dim[0] = {dim[0]}")
    dims = tuple(dim[1:4])
    if min(dims) < 1:
        raise NiftiFormatError(f"{path}: non-positive dimensions {dims}")
    spacing = tuple(float(p) for p in hdr["pixdim"][1:4])
    if not all(math.isfinite(s) and s > 0 for s in spacing):
        raise NiftiFormatError(f"{path}: non-positive pixdim {spacing}")

    code = int(hdr["datatype"])
    if code not in _DATATYPES:
        raise NiftiFormatError(f"{path}: unsupported datatype code {code}")
    dtype = _DATATYPES[code].newbyteorder(">" if big_endian else "<")

    if bytes(buf[344:348]) == b"ni1\x00":
        data_buf = _read_bytes(_image_path_for(path))
        offset = int(hdr["vox_offset"])
    else:
        data_buf = buf
        offset = int(hdr["vox_offset"]) or 352
    count = dims[0] * dims[1] * dims[2]
    if len(data_buf) < offset + count * dtype.itemsize:
        raise NiftiFormatError(f"{path}: truncated voxel data")
    data = np.frombuffer(data_buf, dtype=dtype, count=count, offset=offset)

    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    if not math.isfinite(slope) or slope == 0:
        slope, inter = 1.0, 0.0
    if not math.isfinite(inter):
        inter = 0.0
    if dtype.kind == "f" or (slope, inter) != (1.0, 0.0):
        values = data.astype(np.float64) * slope + inter
        if not np.all(np.isfinite(values)) or np.any(values != np.round(values)):
            raise NiftiFormatError(f"{path}: voxel values are not exact integers")
    else:
        values = data
    if values.min() < 0:
        raise NiftiFormatError(f"{path}: negative label value {values.min()}")
    if values.max() > MAX_LABEL:
        raise NiftiFormatError(f"{path}: label {values.max()} does not fit in 0..{MAX_LABEL}")

    labels = values.astype(np.uint8).reshape(dims, order="F")
    native = np.asarray(hdr).astype(HEADER_DTYPE).tobytes()
    vol = LabelVolume(labels, spacing, case_id_from_path(path), native)
    if scheme is not None:
        vol.check_labels(scheme)
    return vol


def _image_path_for(path: Path) -> Path:
    name = path.name
    for hdr_suffix, img_suffix in ((".hdr.gz", ".img.gz"), (".hdr", ".img")):
        if name.endswith(hdr_suffix):
            base = name[: -len(hdr_suffix)]
            for candidate in (img_suffix, ".img", ".img.gz"):
                img = path.with_name(base + candidate)
                if img.exists():
                    return img
    raise NiftiFormatError(f"{path}: 'ni1' header without a matching .img file")


def _build_header(vol: LabelVolume) -> bytes:
    if vol.header is not None and len(vol.header) == 348:
        hdr = np.frombuffer(vol.header, dtype=HEADER_DTYPE).copy().reshape(())
    else:
        hdr = np.zeros((), dtype=HEADER_DTYPE)
        hdr["pixdim"][0] = 1.0
        hdr["xyzt_units"] = 2  # millimeters
    hdr["sizeof_hdr"] = 348
    hdr["dim"] = [3, *vol.dims, 1, 1, 1, 1]
    hdr["datatype"] = 2
    hdr["bitpix"] = 8
    hdr["pixdim"][1:4] = vol.spacing
    hdr["vox_offset"] = 352.0
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["magic"] = b"n+1"
    return hdr.tobytes()


def save_volume(vol: LabelVolume, path: str | Path) -> None:
    """Write ``vol`` as single-file NIfTI-1 with ``uint8`` data.

    Output is gzip-compressed iff the path ends in ``.gz``.  The gzip member
    carries no timestamp or filename, so identical volumes give identical bytes.
    """
    path = Path(path)
    payload = _build_header(vol) + b"\x00" * 4 + vol.labels.tobytes(order="F")
    if path.name.endswith(".gz"):
        with open(path, "wb") as fh, gzip.GzipFile(filename="", mode="wb", fileobj=fh, mtime=0) as gz:
            gz.write(payload)
    else:
        path.write_bytes(payload)
