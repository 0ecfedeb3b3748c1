"""Dense containers for network outputs and ground truth grids.

Axis order everywhere is ``(x, y, [z | channel])``, i.e. ``h x w x ...``.
Constructors only coerce arrays; use :func:`validate` to list invariant
violations without raising.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import singledispatch

import numpy as np

from .errors import ShapeError
from .geometry import GridSpec, LabelTaxonomy

PANO_DTYPE = np.dtype(np.uint32)


@dataclass(frozen=True, eq=False)
class SemanticGrid:
    data: np.ndarray
    spec: GridSpec
    taxonomy: LabelTaxonomy

    def __post_init__(self):
        data = np.ascontiguousarray(self.data)
        if data.dtype.kind not in "ui":
            raise ShapeError(f"semantic grid must hold integers, got dtype {data.dtype}")
        object.__setattr__(self, "data", data)


@dataclass(frozen=True, eq=False)
class BEVOccLogits:
    """Flattened BEV occupancy logits, ``h x w x (z * n_s)``.

    Channel ``k * n_s + c`` holds the score of class ``c`` at height ``k``.
    """

    data: np.ndarray
    spec: GridSpec
    taxonomy: LabelTaxonomy


@dataclass(frozen=True, eq=False)
class CenterHeatmap:
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", np.ascontiguousarray(self.data))

    @property
    def n_channels(self) -> int:
        return self.data.shape[-1]


@dataclass(frozen=True, eq=False)
class RegressionField:
    """Channels: x-offset ratio, y-offset ratio, absolute height ratio."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", np.ascontiguousarray(self.data))


@dataclass(frozen=True, eq=False)
class PanopticGrid:
    data: np.ndarray
    id_to_class: dict = field(default_factory=dict)
    spec: GridSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "data", np.ascontiguousarray(self.data))
        object.__setattr__(self, "id_to_class",
                           {int(k): int(v) for k, v in self.id_to_class.items()})

    def classes_array(self) -> np.ndarray:
        """Two-column ``(id, class)`` table sorted by id, as stored on disk."""
        rows = sorted(self.id_to_class.items())
        return np.asarray(rows, dtype=PANO_DTYPE).reshape(len(rows), 2)

    @classmethod
    def from_arrays(cls, data, classes, spec=None) -> "PanopticGrid":
        classes = np.asarray(classes).reshape(-1, 2)
        return cls(np.asarray(data), {int(i): int(c) for i, c in classes}, spec)


def channel_to_height(logits: BEVOccLogits) -> SemanticGrid:
    data = np.asarray(logits.data)
    tax = logits.taxonomy
    if data.ndim != 3:
        raise ShapeError(f"logits must be 3-D (h, w, z*n_s), got shape {data.shape}")
    h, w, c = data.shape
    if c % tax.n_s:
        raise ShapeError(f"logit channel count {c} is not divisible by n_s={tax.n_s}")
    z = c // tax.n_s
    if (h, w, z) != logits.spec.shape:
        raise ShapeError(f"logits decode to grid {(h, w, z)}, spec says {logits.spec.shape}")
    # np.argmax returns the first maximum, i.e. ties go to the lowest class id
    labels = data.reshape(h, w, z, tax.n_s).argmax(axis=-1)
    return SemanticGrid(labels.astype(tax.label_dtype()), logits.spec, tax)


@singledispatch
def validate(tensor) -> list[str]:
    return [f"unsupported tensor type {type(tensor).__name__}"]


@validate.register
def _(grid: SemanticGrid) -> list[str]:
    out = []
    if grid.data.shape != grid.spec.shape:
        out.append(f"shape: semantic grid {grid.data.shape} != spec {grid.spec.shape}")
    if grid.data.size:
        lo, hi = int(grid.data.min()), int(grid.data.max())
        if lo < 0 or hi >= grid.taxonomy.n_s:
            out.append(f"range: class ids span [{lo}, {hi}], n_s={grid.taxonomy.n_s}")
    return out


@validate.register
def _(logits: BEVOccLogits) -> list[str]:
    out = []
    data = np.asarray(logits.data)
    n_s = logits.taxonomy.n_s
    if data.ndim != 3:
        return [f"shape: logits must be 3-D, got {data.shape}"]
    h, w, c = data.shape
    if c % n_s:
        out.append(f"shape: channel count {c} not divisible by n_s={n_s}")
    elif (h, w, c // n_s) != logits.spec.shape:
        out.append(f"shape: logits decode to {(h, w, c // n_s)}, spec {logits.spec.shape}")
    if not np.all(np.isfinite(data)):
        out.append("range: logits contain non-finite values")
    return out


@validate.register
def _(heat: CenterHeatmap) -> list[str]:
    out = []
    if heat.data.ndim != 3:
        return [f"shape: heatmap must be 3-D (h, w, C_Inst), got {heat.data.shape}"]
    if heat.data.size:
        bad = ~((heat.data >= 0) & (heat.data <= 1))
        if bad.any():
            out.append(f"range: {int(bad.sum())} heatmap value(s) outside [0, 1]")
    return out


@validate.register
def _(reg: RegressionField) -> list[str]:
    out = []
    if reg.data.ndim != 3 or reg.data.shape[-1] != 3:
        return [f"shape: regression field must be (h, w, 3), got {reg.data.shape}"]
    if not np.all(np.isfinite(reg.data)):
        out.append("range: regression field contains non-finite values")
    return out


@validate.register
def _(pano: PanopticGrid) -> list[str]:
    out = []
    if pano.spec is not None and pano.data.shape != pano.spec.shape:
        out.append(f"shape: panoptic grid {pano.data.shape} != spec {pano.spec.shape}")
    ids = np.unique(pano.data)
    missing = [int(i) for i in ids if i != 0 and int(i) not in pano.id_to_class]
    if missing:
        out.append(f"mapping: instance id(s) {missing} lack an id_to_class entry")
    return out


def check_consistent(sem: SemanticGrid, pano: PanopticGrid) -> list[str]:
    """Cross-grid invariants between a semantic grid and its panoptic grid."""
    out = []
    if sem.data.shape != pano.data.shape:
        return [f"shape: semantic {sem.data.shape} vs panoptic {pano.data.shape}"]
    s = sem.data.ravel()
    p = pano.data.ravel()
    zero_nonfree = int(np.count_nonzero((p == 0) & (s != 0)))
    nonzero_free = int(np.count_nonzero((p != 0) & (s == 0)))
    if nonzero_free:
        out.append(f"consistency: {nonzero_free} free voxel(s) carry an instance id")
    if zero_nonfree:
        out.append(f"consistency: {zero_nonfree} non-free voxel(s) have instance id 0")
    nz = p != 0
    if nz.any():
        pairs = np.unique(np.stack([p[nz].astype(np.int64), s[nz].astype(np.int64)]), axis=1)
        ids, counts = np.unique(pairs[0], return_counts=True)
        multi = ids[counts > 1]
        if multi.size:
            out.append(f"consistency: instance id(s) {multi.tolist()} span several classes")
        for iid, cls in pairs.T:
            mapped = pano.id_to_class.get(int(iid))
            if mapped is not None and mapped != int(cls) and iid not in multi:
                out.append(f"consistency: id {int(iid)} maps to class {mapped}, voxels say {int(cls)}")
    return out
