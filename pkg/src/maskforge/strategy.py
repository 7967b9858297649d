"""JSON strategy files: parsing, canonical serialization, execution and presets.

A strategy file looks like::

    {"name": "strategy_1",
     "steps": [{"transform": "remove_small_objects",
                "params": {"labels": [4], "threshold": 100}}]}

Defaults are filled in on parse and written out explicitly on serialize.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .transforms import REGISTRY, RegistryError, TransformParams, TransformRegistry, TransformValidationError
from .volume import DEFAULT_SCHEME, LabelScheme, LabelVolume

__all__ = [
    "PRESETS",
    "Step",
    "StrategyError",
    "StrategySpec",
    "apply_strategy",
    "load_strategy",
    "parse_strategy",
    "preset",
    "preset_names",
    "serialize_strategy",
]


class StrategyError(ValueError):
    """Strategy document is malformed or fails validation."""


@dataclass(frozen=True)
class Step:
    transform: str
    params: TransformParams


@dataclass(frozen=True)
class StrategySpec:
    name: str
    steps: tuple[Step, ...] = ()


def _parse_step(index: int, raw: Any, registry: TransformRegistry, scheme: LabelScheme) -> Step:
    where = f"steps[{index}]"
    if not isinstance(raw, dict):
        raise StrategyError(f"{where}: expected an object")
    unknown = set(raw) - {"transform", "params"}
    if unknown:
        raise StrategyError(f"{where}: unknown key(s) {', '.join(sorted(unknown))}")
    name = raw.get("transform")
    if not isinstance(name, str):
        raise StrategyError(f"{where}: 'transform' must be a string")
    try:
        params = registry.validate(name, raw.get("params", {}), scheme)
    except RegistryError as exc:
        raise StrategyError(f"{where}: {exc.args[0]}") from None
    except TransformValidationError as exc:
        raise StrategyError(f"{where} ({name}): {exc}") from None
    return Step(name, params)


def parse_strategy(
    text: str | bytes,
    registry: TransformRegistry = REGISTRY,
    scheme: LabelScheme = DEFAULT_SCHEME,
) -> StrategySpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise StrategyError(f"malformed JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise StrategyError("strategy must be a JSON object")
    unknown = set(doc) - {"name", "steps"}
    if unknown:
        raise StrategyError(f"unknown top-level key(s) {', '.join(sorted(unknown))}")
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        raise StrategyError("'name' must be a non-empty string")
    steps = doc.get("steps")
    if not isinstance(steps, list):
        raise StrategyError("'steps' must be a list")
    return StrategySpec(name, tuple(_parse_step(i, s, registry, scheme) for i, s in enumerate(steps)))


def serialize_strategy(spec: StrategySpec) -> str:
    """Canonical compact JSON for ``spec``."""
    doc = {
        "name": spec.name,
        "steps": [{"transform": s.transform, "params": s.params.to_dict()} for s in spec.steps],
    }
    return json.dumps(doc, separators=(",", ":"), ensure_ascii=False)


def apply_strategy(vol: LabelVolume, spec: StrategySpec, registry: TransformRegistry = REGISTRY) -> LabelVolume:
    for step in spec.steps:
        vol = registry.lookup(step.transform)(step.params)(vol)
    return vol


def load_strategy(
    ref: str | Path,
    registry: TransformRegistry = REGISTRY,
    scheme: LabelScheme = DEFAULT_SCHEME,
) -> StrategySpec:
    """Resolve a preset name or a path to a strategy file.

    File-system errors propagate as :class:`OSError`; content problems raise
    :class:`StrategyError`.
    """
    if isinstance(ref, str) and ref in PRESETS:
        return preset(ref)
    path = Path(ref)
    if isinstance(ref, str) and not path.exists() and path.name == ref and not path.suffix:
        # a bare word that is neither a file nor a preset
        raise StrategyError(f"unknown preset {ref!r}; known: {', '.join(PRESETS)}")
    raw = path.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise StrategyError(f"{ref}: not UTF-8 text ({exc})") from None
    return parse_strategy(text, registry, scheme)


PRESETS: dict[str, str] = {
    "strategy_1": (
        '{"name":"strategy_1","steps":['
        '{"transform":"remove_small_objects","params":{"labels":[4],"threshold":100,"replacement":0,'
        '"connectivity":26,"mode":"sequential"}}]}'
    ),
    "strategy_2": (
        '{"name":"strategy_2","steps":['
        '{"transform":"remove_small_objects","params":{"labels":[4],"threshold":100,"replacement":0,'
        '"connectivity":26,"mode":"sequential"}},'
        '{"transform":"keep_top_k","params":{"labels":[4],"k":1,"connectivity":26,"mode":"sequential"}},'
        '{"transform":"fill_holes_with_label","params":{"labels":[1,2,3],"fill_label":2,"connectivity":6}}]}'
    ),
    "strategy_3": (
        '{"name":"strategy_3","steps":['
        '{"transform":"replace_small_objects","params":{"labels":[3],"threshold":100,"replacement":2,'
        '"connectivity":26,"mode":"sequential"}},'
        '{"transform":"replace_small_objects","params":{"labels":[4],"threshold":100,"replacement":2,'
        '"connectivity":26,"mode":"sequential"}},'
        '{"transform":"remove_small_objects","params":{"labels":[2],"threshold":64,"replacement":0,'
        '"connectivity":26,"mode":"sequential"}}]}'
    ),
}


def preset_names() -> list[str]:
    return sorted(PRESETS)


def preset(name: str) -> StrategySpec:
    try:
        text = PRESETS[name]
    except KeyError:
        raise StrategyError(f"unknown preset {name!r}; available: {', '.join(preset_names())}") from None
    return parse_strategy(text, REGISTRY)
