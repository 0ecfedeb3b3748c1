"""Voxel lattice geometry and the semantic class taxonomy.

All positions live in a grid-local frame: the origin sits on the minimum
corner of the lattice and a voxel ``(i, j, k)`` is located at
``(dx * i, dy * j, dz * k)`` (corner convention, no half-voxel shift).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, NamedTuple, Sequence

import numpy as np
import yaml

from .errors import ContractError, TaxonomyError, ValidationError

FREE, THING, STUFF = "free", "thing", "stuff"
KINDS = (FREE, THING, STUFF)


@dataclass(frozen=True)
class GridSpec:
    h: int = 200
    w: int = 200
    z: int = 16
    dx: float = 0.4
    dy: float = 0.4
    dz: float = 0.4

    def __post_init__(self):
        for name in ("h", "w", "z"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValidationError(f"grid {name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        for name in ("dx", "dy", "dz"):
            v = float(getattr(self, name))
            if not v > 0:
                raise ValidationError(f"voxel size {name} must be > 0, got {v!r}")
            object.__setattr__(self, name, v)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.h, self.w, self.z)

    @property
    def r_z(self) -> float:
        """Vertical extent of the lattice in meters."""
        return self.z * self.dz

    @property
    def voxel_size(self) -> tuple[float, float, float]:
        return (self.dx, self.dy, self.dz)

    def to_dict(self) -> dict:
        return {"h": self.h, "w": self.w, "z": self.z,
                "dx": self.dx, "dy": self.dy, "dz": self.dz}


# Occ3D-nuScenes: x, y in [-40, 40] m, z in [-1, 5.4] m, 0.4 m voxels.
OCC3D_NUSCENES = GridSpec(h=200, w=200, z=16, dx=0.4, dy=0.4, dz=0.4)


class GridIndex(NamedTuple):
    i: int
    j: int
    k: int


def voxel_position(spec: GridSpec, idx) -> tuple[float, float, float]:
    i, j, k = (int(v) for v in idx)
    if not (0 <= i < spec.h and 0 <= j < spec.w and 0 <= k < spec.z):
        raise ContractError(f"voxel index {(i, j, k)} outside grid {spec.shape}")
    return (spec.dx * i, spec.dy * j, spec.dz * k)


def voxel_positions(spec: GridSpec, indices: np.ndarray) -> np.ndarray:
    """Vectorised :func:`voxel_position` for an ``(n, 3)`` index array.

    No bounds check; callers pass indices produced from a grid of ``spec``.
    """
    indices = np.asarray(indices)
    out = np.empty(indices.shape, dtype=np.float64)
    out[..., 0] = spec.dx * indices[..., 0]
    out[..., 1] = spec.dy * indices[..., 1]
    out[..., 2] = spec.dz * indices[..., 2]
    return out


@dataclass(frozen=True)
class LabelTaxonomy:
    names: tuple[str, ...]
    kinds: tuple[str, ...]
    thing_channels: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        names, kinds = tuple(self.names), tuple(self.kinds)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "kinds", kinds)
        if len(names) != len(kinds):
            raise TaxonomyError("names and kinds differ in length")
        if not names:
            raise TaxonomyError("taxonomy has no classes")
        bad = [k for k in kinds if k not in KINDS]
        if bad:
            raise TaxonomyError(f"unknown class kind(s) {bad}; expected one of {KINDS}")
        frees = [c for c, k in enumerate(kinds) if k == FREE]
        if len(frees) != 1:
            raise TaxonomyError(f"expected exactly one free class, found {len(frees)}")
        if frees[0] != 0:
            raise TaxonomyError(f"free class must have id 0, found id {frees[0]}")
        seen = set()
        for n in names:
            if n in seen:
                raise TaxonomyError(f"duplicate class name {n!r}")
            seen.add(n)
        object.__setattr__(
            self, "thing_channels",
            tuple(c for c, k in enumerate(kinds) if k == THING))

    @property
    def n_s(self) -> int:
        return len(self.names)

    @property
    def c_inst(self) -> int:
        return len(self.thing_channels)

    def is_thing(self, class_id: int) -> bool:
        return 0 <= class_id < self.n_s and self.kinds[class_id] == THING

    def is_stuff(self, class_id: int) -> bool:
        return 0 <= class_id < self.n_s and self.kinds[class_id] == STUFF

    def class_for_channel(self, channel: int) -> int:
        if not 0 <= channel < self.c_inst:
            raise TaxonomyError(
                f"heatmap channel {channel} has no thing class (C_Inst={self.c_inst})")
        return self.thing_channels[channel]

    def channel_for_class(self, class_id: int) -> int:
        try:
            return self.thing_channels.index(class_id)
        except ValueError:
            raise TaxonomyError(f"class {class_id} is not a thing class") from None

    def label_dtype(self) -> np.dtype:
        """Smallest unsigned integer dtype that holds every class id."""
        for dt in (np.uint8, np.uint16, np.uint32):
            if self.n_s - 1 <= np.iinfo(dt).max:
                return np.dtype(dt)
        return np.dtype(np.uint64)

    def to_dict(self) -> dict:
        return {"classes": [{"id": c, "name": n, "kind": k}
                            for c, (n, k) in enumerate(zip(self.names, self.kinds))]}


NUSCENES_THINGS = (
    "car", "truck", "bus", "trailer", "construction_vehicle",
    "pedestrian", "motorcycle", "bicycle", "traffic_cone", "barrier",
)
NUSCENES_STUFF = (
    "driveable_surface", "other_flat", "sidewalk", "terrain", "manmade", "vegetation",
)


def default_taxonomy() -> LabelTaxonomy:
    """17-class Occ3D-nuScenes profile: free, 10 things, 6 stuff."""
    names = ("free",) + NUSCENES_THINGS + NUSCENES_STUFF
    kinds = (FREE,) + (THING,) * len(NUSCENES_THINGS) + (STUFF,) * len(NUSCENES_STUFF)
    return LabelTaxonomy(names, kinds)


def load_taxonomy(document: Mapping[str, Any] | str | Path | None = None) -> LabelTaxonomy:
    """Build a taxonomy from ``{"classes": [{id, name, kind}, ...]}``.

    ``document`` may be an already-parsed mapping, a path to a YAML/JSON
    file, or None for the default nuScenes profile. Class ids must be
    unique and cover ``0..n_s-1``; thing channels follow the listing order
    of thing classes.
    """
    if document is None:
        return default_taxonomy()
    if isinstance(document, (str, Path)):
        document = _read_yaml(document)
    if not isinstance(document, Mapping) or "classes" not in document:
        raise TaxonomyError("taxonomy document needs a top-level 'classes' list")
    classes = document["classes"]
    if not isinstance(classes, Sequence) or isinstance(classes, str):
        raise TaxonomyError("'classes' must be a list")
    ids, names, kinds = [], [], []
    for entry in classes:
        try:
            ids.append(int(entry["id"]))
            names.append(str(entry["name"]))
            kinds.append(str(entry["kind"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise TaxonomyError(f"malformed class entry {entry!r}") from exc
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise TaxonomyError(f"duplicate class name(s) {dup}")
    if sorted(ids) != list(range(len(ids))):
        raise TaxonomyError(f"class ids must be unique and cover 0..{len(ids) - 1}, got {ids}")
    if kinds.count(FREE) != 1:
        raise TaxonomyError(f"expected exactly one free class, found {kinds.count(FREE)}")
    # listing order defines thing channel order, so it must agree with id order
    if ids != sorted(ids):
        raise TaxonomyError("classes must be listed in ascending id order")
    return LabelTaxonomy(tuple(names), tuple(kinds))


def dump_taxonomy(tax: LabelTaxonomy) -> str:
    return yaml.safe_dump(tax.to_dict(), sort_keys=False)


def load_grid_spec(document: Mapping[str, Any] | str | Path | None = None) -> GridSpec:
    if document is None:
        return OCC3D_NUSCENES
    if isinstance(document, (str, Path)):
        document = _read_yaml(document)
    if not isinstance(document, Mapping):
        raise ValidationError("grid spec document must be a mapping")
    keys = ("h", "w", "z", "dx", "dy", "dz")
    missing = [k for k in keys if k not in document]
    if missing:
        raise ValidationError(f"grid spec missing key(s) {missing}")
    return GridSpec(**{k: document[k] for k in keys})


def dump_grid_spec(spec: GridSpec) -> str:
    return yaml.safe_dump(spec.to_dict(), sort_keys=False)


def _read_yaml(path):
    with open(path, "r", encoding="utf-8") as fh:
        return yaml.safe_load(fh)
