"""Unified semantic taxonomy and remap tables from Cityscapes / SemanticKITTI ids."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, UnknownClassError


class UnifiedClass(enum.IntEnum):
    UNLABELED = 0
    ROAD = 1
    SIDEWALK = 2
    BUILDING = 3
    FENCE = 4
    POLE = 5
    TRAFFIC_SIGN = 6
    VEGETATION = 7
    TRUNK = 8
    TERRAIN = 9
    PERSON = 10
    RIDER = 11
    CAR = 12
    TRUCK = 13
    BUS = 14
    MOTORCYCLE = 15
    BICYCLE = 16
    OTHER_GROUND = 17
    OTHER_STRUCTURE = 18
    OTHER_OBJECT = 19

    @property
    def label(self) -> str:
        """Canonical hyphenated name, e.g. ``traffic-sign``."""
        return self.name.lower().replace("_", "-")

    @classmethod
    def from_name(cls, name: str) -> "UnifiedClass":
        key = name.strip().upper().replace("-", "_").replace(" ", "_")
        try:
            return cls[key]
        except KeyError:
            raise UnknownClassError(name, "unified") from None


NUM_CLASSES = len(UnifiedClass)
CLASS_NAMES = tuple(c.label for c in UnifiedClass)


def parse_classes(items) -> frozenset:
    """Accept class names, ints, group names (``ground``, ``dynamic``, ...) or a mix."""
    out = set()
    for item in items:
        if isinstance(item, str) and item.lower() in GROUPS:
            out |= GROUPS[item.lower()]
        elif isinstance(item, str):
            out.add(UnifiedClass.from_name(item))
        else:
            out.add(UnifiedClass(int(item)))
    return frozenset(out)


@dataclass(frozen=True)
class ClassGroups:
    ground: frozenset = frozenset(
        {UnifiedClass.ROAD, UnifiedClass.SIDEWALK, UnifiedClass.TERRAIN, UnifiedClass.OTHER_GROUND}
    )
    dynamic: frozenset = frozenset(
        {
            UnifiedClass.PERSON,
            UnifiedClass.RIDER,
            UnifiedClass.CAR,
            UnifiedClass.TRUCK,
            UnifiedClass.BUS,
            UnifiedClass.MOTORCYCLE,
            UnifiedClass.BICYCLE,
        }
    )
    unreliable: frozenset = frozenset({UnifiedClass.UNLABELED})

    def __post_init__(self):
        if self.ground & self.dynamic:
            raise ConfigError("ground and dynamic class groups must be disjoint")


DEFAULT_GROUPS = ClassGroups()
VEHICLES = frozenset({UnifiedClass.CAR, UnifiedClass.TRUCK, UnifiedClass.BUS})
GROUPS = {
    "ground": DEFAULT_GROUPS.ground,
    "dynamic": DEFAULT_GROUPS.dynamic,
    "unreliable": DEFAULT_GROUPS.unreliable,
    "vehicle": VEHICLES,
}


def is_ground(c) -> bool:
    return UnifiedClass(c) in DEFAULT_GROUPS.ground


def is_dynamic(c) -> bool:
    return UnifiedClass(c) in DEFAULT_GROUPS.dynamic


@dataclass(frozen=True)
class RemapTable:
    """Total map from a source taxonomy's class ids to :class:`UnifiedClass`."""

    taxonomy: str
    mapping: dict
    source_names: dict = field(default_factory=dict)

    def __post_init__(self):
        m = {int(k): UnifiedClass(v) for k, v in self.mapping.items()}
        object.__setattr__(self, "mapping", m)
        keys = np.array(sorted(m), dtype=np.int64)
        object.__setattr__(self, "_keys", keys)
        object.__setattr__(self, "_values", np.array([m[k] for k in keys], dtype=np.uint8))

    def remap(self, source_id) -> UnifiedClass:
        try:
            return self.mapping[int(source_id)]
        except KeyError:
            raise UnknownClassError(int(source_id), self.taxonomy) from None

    __call__ = remap

    def remap_array(self, ids) -> np.ndarray:
        """Vectorised :meth:`remap`; raises on the first unknown id."""
        ids = np.asarray(ids).astype(np.int64, copy=False)
        if ids.size == 0:
            return np.zeros(ids.shape, dtype=np.uint8)
        pos = np.searchsorted(self._keys, ids)
        pos_c = np.clip(pos, 0, len(self._keys) - 1)
        bad = self._keys[pos_c] != ids
        if bad.any():
            raise UnknownClassError(int(ids[bad][0]), self.taxonomy)
        return self._values[pos_c]

    def source_id(self, name: str) -> int:
        for k, v in self.source_names.items():
            if v == name:
                return int(k)
        raise UnknownClassError(name, self.taxonomy)

    @classmethod
    def from_json(cls, source) -> "RemapTable":
        """Load ``{"taxonomy": ..., "map": {id: class-name}}`` from a path or dict."""
        doc = source if isinstance(source, dict) else json.loads(Path(source).read_text())
        try:
            mapping = {int(k): UnifiedClass.from_name(v) for k, v in doc["map"].items()}
            names = {int(k): v for k, v in doc.get("source_names", {}).items()}
            return cls(doc["taxonomy"], mapping, names)
        except KeyError as e:
            raise ConfigError(f"remap table is missing field {e}") from None

    def to_json(self) -> dict:
        return {
            "taxonomy": self.taxonomy,
            "source_names": {str(k): v for k, v in sorted(self.source_names.items())},
            "map": {str(k): UnifiedClass(v).label for k, v in sorted(self.mapping.items())},
        }


def _builtin(name):
    text = resources.files(__package__).joinpath("data", f"{name}.json").read_text()
    return RemapTable.from_json(json.loads(text))


def load_table(name_or_path) -> RemapTable:
    """``unified``, ``cityscapes``, ``semantickitti`` or a path to a JSON table."""
    if name_or_path in ("cityscapes", "semantickitti"):
        return _builtin(name_or_path)
    if name_or_path == "unified":
        return identity_table()
    p = Path(name_or_path)
    if not p.exists():
        raise ConfigError(f"unknown remap table {name_or_path!r}")
    return RemapTable.from_json(p)


def identity_table() -> RemapTable:
    return RemapTable("unified", {c.value: c for c in UnifiedClass}, {c.value: c.label for c in UnifiedClass})


def cityscapes_table() -> RemapTable:
    return _builtin("cityscapes")


def semantickitti_table() -> RemapTable:
    return _builtin("semantickitti")
