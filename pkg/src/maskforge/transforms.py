"""Label-volume postprocessing transforms and the registry that names them.

Every transform is registered under a name together with a validator (raw
JSON-style parameter dict -> :class:`TransformParams`) and a factory
(params -> executor).  An executor maps a :class:`LabelVolume` to a new one
and never mutates its input.

Targeting: with ``mode="sequential"`` each target label is processed on its
own mask, in listed order, each pass seeing the previous pass's output.  With
``mode="joint"`` the union of all target labels is processed as one mask.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, fields
from typing import Any, Callable, Mapping

import numpy as np

from .volume import DEFAULT_SCHEME, LabelScheme, LabelVolume
from .voxelops import (
    Connectivity,
    close,
    fill_holes_mask,
    label_components,
    small_components_mask,
    top_k_mask,
)

__all__ = [
    "Mode",
    "RegistryError",
    "REGISTRY",
    "TransformParams",
    "TransformRegistry",
    "TransformValidationError",
    "fill_holes_with_label",
    "keep_top_k",
    "list_transforms",
    "lookup_transform",
    "morphological_closing",
    "register_transform",
    "remove_small_objects",
    "replace_small_objects",
]


class TransformValidationError(ValueError):
    """Transform parameters are missing, unknown or out of range."""


class RegistryError(LookupError):
    """Duplicate, unknown, or late registration."""


class Mode(str, enum.Enum):
    SEQUENTIAL = "sequential"
    JOINT = "joint"


@dataclass(frozen=True)
class TransformParams:
    """Parameters of one transform step.

    Fields a transform does not use stay ``None`` and are left out of
    :meth:`to_dict`; field order here is the canonical key order.
    """

    labels: tuple[int, ...]
    threshold: int | None = None
    replacement: int | None = None
    k: int | None = None
    fill_label: int | None = None
    connectivity: Connectivity | None = None
    iterations: int | None = None
    mode: Mode | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if f.name == "labels":
                value = list(value)
            elif isinstance(value, Connectivity):
                value = int(value)
            elif isinstance(value, Mode):
                value = value.value
            out[f.name] = value
        return out


Executor = Callable[[LabelVolume], LabelVolume]
Validator = Callable[[Mapping[str, Any], LabelScheme], TransformParams]
Factory = Callable[[TransformParams], Executor]


# --------------------------------------------------------------------------
# kernels


def _replace_small(
    labels: np.ndarray,
    targets: tuple[int, ...],
    threshold: int,
    replacement: int,
    conn: Connectivity,
    mode: Mode,
) -> np.ndarray:
    out = labels.copy()
    groups = [targets] if mode is Mode.JOINT else [(t,) for t in targets]
    for group in groups:
        lab = label_components(np.isin(out, group), conn)
        out[small_components_mask(lab, threshold)] = replacement
    return out


def _keep_top_k(labels: np.ndarray, targets: tuple[int, ...], k: int, conn: Connectivity, mode: Mode) -> np.ndarray:
    out = labels.copy()
    groups = [targets] if mode is Mode.JOINT else [(t,) for t in targets]
    for group in groups:
        lab = label_components(np.isin(out, group), conn)
        out[lab.foreground & ~top_k_mask(lab, k)] = 0
    return out


def remove_small_objects(vol: LabelVolume, params: TransformParams) -> LabelVolume:
    """Zero out target components smaller than ``threshold`` voxels."""
    if params.replacement not in (None, 0):
        raise TransformValidationError("remove_small_objects always replaces with 0")
    out = _replace_small(vol.labels, params.labels, params.threshold, 0, params.connectivity, params.mode)
    return vol.with_labels(out)


def replace_small_objects(vol: LabelVolume, params: TransformParams) -> LabelVolume:
    """Relabel target components smaller than ``threshold`` voxels as ``replacement``."""
    out = _replace_small(
        vol.labels, params.labels, params.threshold, params.replacement, params.connectivity, params.mode
    )
    return vol.with_labels(out)


def keep_top_k(vol: LabelVolume, params: TransformParams) -> LabelVolume:
    out = _keep_top_k(vol.labels, params.labels, params.k, params.connectivity, params.mode)
    return vol.with_labels(out)


def fill_holes_with_label(vol: LabelVolume, params: TransformParams) -> LabelVolume:
    """Fill enclosed pockets of the target region with ``fill_label``.

    Holes are found with background connectivity ``params.connectivity``.
    Only voxels labeled 0 inside a hole change; other labels are kept.
    """
    region = np.isin(vol.labels, params.labels)
    holes = fill_holes_mask(region, params.connectivity) & ~region
    fill = holes & (vol.labels == 0)
    if not fill.any():
        return vol
    out = vol.labels.copy()
    out[fill] = params.fill_label
    return vol.with_labels(out)


def morphological_closing(vol: LabelVolume, params: TransformParams) -> LabelVolume:
    """Close each target label's mask, growing only into background voxels."""
    if params.mode is Mode.JOINT:
        raise TransformValidationError("morphological_closing supports sequential mode only")
    out = vol.labels.copy()
    for label in params.labels:
        mask = out == label
        grown = close(mask, params.connectivity, params.iterations) & (out == 0)
        out[grown] = label
    return vol.with_labels(out)


# --------------------------------------------------------------------------
# validation


def _is_int(value: Any) -> bool:
    return isinstance(value, (int, np.integer)) and not isinstance(value, bool)


def _check_keys(raw: Mapping[str, Any], required: set[str], optional: set[str]) -> None:
    if not isinstance(raw, Mapping):
        raise TransformValidationError(f"params must be an object, got {type(raw).__name__}")
    unknown = set(raw) - required - optional
    if unknown:
        raise TransformValidationError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
    missing = required - set(raw)
    if missing:
        raise TransformValidationError(f"missing parameter(s): {', '.join(sorted(missing))}")


def _nonneg_int(raw: Mapping[str, Any], key: str, minimum: int = 0) -> int:
    value = raw[key]
    if not _is_int(value) or value < minimum:
        raise TransformValidationError(f"{key} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def _target_labels(raw: Mapping[str, Any], scheme: LabelScheme) -> tuple[int, ...]:
    labels = raw["labels"]
    if isinstance(labels, (str, bytes)) or not isinstance(labels, (list, tuple)) or not labels:
        raise TransformValidationError("labels must be a non-empty list of label ids")
    if not all(_is_int(l) for l in labels):
        raise TransformValidationError(f"labels must be integers, got {labels!r}")
    labels = tuple(int(l) for l in labels)
    if len(set(labels)) != len(labels):
        raise TransformValidationError(f"labels contain duplicates: {list(labels)}")
    outside = [l for l in labels if l not in scheme.universe]
    if outside:
        raise TransformValidationError(f"labels {outside} are outside the scheme universe {sorted(scheme.universe)}")
    return labels


def _label_value(raw: Mapping[str, Any], key: str, scheme: LabelScheme, allow_zero: bool) -> int:
    value = raw[key]
    allowed = scheme.universe | ({0} if allow_zero else set())
    if not _is_int(value) or int(value) not in allowed:
        raise TransformValidationError(f"{key} must be one of {sorted(allowed)}, got {value!r}")
    return int(value)


def _connectivity(raw: Mapping[str, Any], default: Connectivity) -> Connectivity:
    if "connectivity" not in raw:
        return default
    value = raw["connectivity"]
    if not (_is_int(value) or isinstance(value, str)):
        raise TransformValidationError(f"connectivity must be 6 or 26, got {value!r}")
    try:
        return Connectivity.parse(value)
    except ValueError as exc:
        raise TransformValidationError(str(exc)) from None


def _mode(raw: Mapping[str, Any]) -> Mode:
    value = raw.get("mode", Mode.SEQUENTIAL.value)
    try:
        return Mode(value)
    except ValueError:
        raise TransformValidationError(f"mode must be 'sequential' or 'joint', got {value!r}") from None


def validate_remove_small_objects(raw: Mapping[str, Any], scheme: LabelScheme = DEFAULT_SCHEME) -> TransformParams:
    _check_keys(raw, {"labels", "threshold"}, {"replacement", "connectivity", "mode"})
    if raw.get("replacement", 0) != 0 or isinstance(raw.get("replacement"), bool):
        raise TransformValidationError("remove_small_objects takes replacement 0 only; use replace_small_objects")
    return TransformParams(
        labels=_target_labels(raw, scheme),
        threshold=_nonneg_int(raw, "threshold"),
        replacement=0,
        connectivity=_connectivity(raw, Connectivity.FULL26),
        mode=_mode(raw),
    )


def validate_replace_small_objects(raw: Mapping[str, Any], scheme: LabelScheme = DEFAULT_SCHEME) -> TransformParams:
    _check_keys(raw, {"labels", "threshold", "replacement"}, {"connectivity", "mode"})
    return TransformParams(
        labels=_target_labels(raw, scheme),
        threshold=_nonneg_int(raw, "threshold"),
        replacement=_label_value(raw, "replacement", scheme, allow_zero=True),
        connectivity=_connectivity(raw, Connectivity.FULL26),
        mode=_mode(raw),
    )


def validate_keep_top_k(raw: Mapping[str, Any], scheme: LabelScheme = DEFAULT_SCHEME) -> TransformParams:
    _check_keys(raw, {"labels", "k"}, {"connectivity", "mode"})
    return TransformParams(
        labels=_target_labels(raw, scheme),
        k=_nonneg_int(raw, "k", minimum=1),
        connectivity=_connectivity(raw, Connectivity.FULL26),
        mode=_mode(raw),
    )


def validate_fill_holes_with_label(raw: Mapping[str, Any], scheme: LabelScheme = DEFAULT_SCHEME) -> TransformParams:
    _check_keys(raw, {"labels", "fill_label"}, {"connectivity"})
    return TransformParams(
        labels=_target_labels(raw, scheme),
        fill_label=_label_value(raw, "fill_label", scheme, allow_zero=False),
        # background connectivity for hole detection
        connectivity=_connectivity(raw, Connectivity.FACE6),
    )


def validate_morphological_closing(raw: Mapping[str, Any], scheme: LabelScheme = DEFAULT_SCHEME) -> TransformParams:
    _check_keys(raw, {"labels"}, {"connectivity", "iterations", "mode"})
    mode = _mode(raw)
    if mode is Mode.JOINT:
        raise TransformValidationError("morphological_closing supports sequential mode only")
    return TransformParams(
        labels=_target_labels(raw, scheme),
        connectivity=_connectivity(raw, Connectivity.FULL26),
        iterations=_nonneg_int(raw, "iterations") if "iterations" in raw else 1,
        mode=mode,
    )


# --------------------------------------------------------------------------
# registry


def _bind(fn: Callable[[LabelVolume, TransformParams], LabelVolume]) -> Factory:
    def factory(params: TransformParams) -> Executor:
        def run(vol: LabelVolume) -> LabelVolume:
            return fn(vol, params)

        run.__name__ = fn.__name__
        return run

    return factory


@dataclass(frozen=True)
class _Entry:
    validator: Validator
    factory: Factory


class TransformRegistry:
    """Name -> (validator, factory) mapping.

    Registration is allowed until :meth:`freeze`; afterwards the registry is
    read-only and safe to share across workers.
    """

    def __init__(self) -> None:
        self._entries: dict[str, _Entry] = {}
        self._frozen = False

    @classmethod
    def with_builtins(cls) -> TransformRegistry:
        reg = cls()
        reg.register("remove_small_objects", validate_remove_small_objects, _bind(remove_small_objects))
        reg.register("replace_small_objects", validate_replace_small_objects, _bind(replace_small_objects))
        reg.register("keep_top_k", validate_keep_top_k, _bind(keep_top_k))
        reg.register("fill_holes_with_label", validate_fill_holes_with_label, _bind(fill_holes_with_label))
        reg.register("morphological_closing", validate_morphological_closing, _bind(morphological_closing))
        return reg

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> None:
        self._frozen = True

    def register(self, name: str, validator: Validator, factory: Factory) -> None:
        if self._frozen:
            raise RegistryError(f"cannot register {name!r}: registry is frozen")
        if not name or not isinstance(name, str):
            raise RegistryError("transform name must be a non-empty string")
        if name in self._entries:
            raise RegistryError(f"transform {name!r} is already registered")
        self._entries[name] = _Entry(validator, factory)

    def transform(self, name: str, validator: Validator) -> Callable[[Callable], Callable]:
        """Decorator form of :meth:`register` for ``fn(vol, params) -> vol``."""

        def decorate(fn: Callable[[LabelVolume, TransformParams], LabelVolume]) -> Callable:
            self.register(name, validator, _bind(fn))
            return fn

        return decorate

    def validate(self, name: str, raw: Mapping[str, Any], scheme: LabelScheme = DEFAULT_SCHEME) -> TransformParams:
        return self._entry(name).validator(raw, scheme)

    def lookup(self, name: str) -> Factory:
        return self._entry(name).factory

    def names(self) -> list[str]:
        return sorted(self._entries)

    def __contains__(self, name: object) -> bool:
        return name in self._entries

    def _entry(self, name: str) -> _Entry:
        try:
            return self._entries[name]
        except KeyError:
            raise RegistryError(f"unknown transform {name!r}; available: {', '.join(self.names())}") from None


REGISTRY = TransformRegistry.with_builtins()


def register_transform(name: str, validator: Validator, factory: Factory) -> None:
    REGISTRY.register(name, validator, factory)


def lookup_transform(name: str) -> Factory:
    return REGISTRY.lookup(name)


def list_transforms() -> list[str]:
    return REGISTRY.names()
