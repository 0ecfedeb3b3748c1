"""Ground-truth target encoding for the centerness head, and its two losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EncodingError, ShapeError, ValidationError
from .geometry import GridSpec, LabelTaxonomy, voxel_positions
from .tensors import (CenterHeatmap, PanopticGrid, RegressionField, SemanticGrid,
                      check_consistent)

EPS = 1e-6


@dataclass(frozen=True, eq=False)
class InstanceRecord:
    class_id: int
    voxels: np.ndarray          # (n, 3) int voxel indices
    mass_center: tuple          # (x, y, z) meters, grid-local
    footprint: np.ndarray       # (m, 2) BEV pixels, lexicographically sorted
    instance_id: int = 0

    @classmethod
    def from_voxels(cls, class_id: int, voxels, spec: GridSpec, instance_id: int = 0):
        voxels = np.asarray(voxels, dtype=np.int64).reshape(-1, 3)
        if voxels.shape[0] == 0:
            raise ValidationError("instance has no voxels")
        center = voxel_positions(spec, voxels).mean(axis=0)
        footprint = np.unique(voxels[:, :2], axis=0)
        return cls(int(class_id), voxels, tuple(float(v) for v in center), footprint,
                   int(instance_id))

    def center_pixel(self, spec: GridSpec) -> tuple[int, int]:
        """Mass center in pixel units, rounded half-up and clipped to the grid."""
        ci = self.mass_center[0] / spec.dx
        cj = self.mass_center[1] / spec.dy
        i = min(max(int(np.floor(ci + 0.5)), 0), spec.h - 1)
        j = min(max(int(np.floor(cj + 0.5)), 0), spec.w - 1)
        return i, j


@dataclass(frozen=True, eq=False)
class TargetBundle:
    heat: CenterHeatmap
    reg: RegressionField
    reg_mask: np.ndarray


def extract_instances(sem_gt: SemanticGrid, pano_gt: PanopticGrid) -> list[InstanceRecord]:
    problems = check_consistent(sem_gt, pano_gt)
    if problems:
        raise ValidationError("; ".join(problems))
    tax, spec = sem_gt.taxonomy, sem_gt.spec
    flat_p = pano_gt.data.reshape(-1)
    flat_s = sem_gt.data.reshape(-1)
    order = np.argsort(flat_p, kind="stable")
    ids, starts = np.unique(flat_p[order], return_index=True)
    ends = np.append(starts[1:], order.size)
    records = []
    for iid, a, b in zip(ids, starts, ends):
        if iid == 0:
            continue
        where = order[a:b]
        cls = int(flat_s[where[0]])
        if not tax.is_thing(cls):
            continue
        idx = np.stack(np.unravel_index(where, spec.shape), axis=1)
        records.append(InstanceRecord.from_voxels(cls, idx, spec, int(iid)))
    return records


SIGMA_MODES = ("diagonal", "centernet")


def _centernet_radius(h: float, w: float, min_overlap: float = 0.7) -> float:
    # smallest of the three box-overlap quadratics used by CenterNet
    b1 = h + w
    r1 = (b1 + np.sqrt(b1 ** 2 - 4 * w * h * (1 - min_overlap) / (1 + min_overlap))) / 2
    b2 = 2 * (h + w)
    r2 = (b2 + np.sqrt(b2 ** 2 - 16 * (1 - min_overlap) * w * h)) / 2
    b3 = -2 * min_overlap * (h + w)
    r3 = (b3 + np.sqrt(b3 ** 2 - 16 * min_overlap * (min_overlap - 1) * w * h)) / 2
    return float(min(r1, r2, r3))


def _sigma_pixels(rec: InstanceRecord, sigma_scale: float, mode: str = "diagonal") -> float:
    extent = rec.footprint.max(axis=0) - rec.footprint.min(axis=0) + 1
    if mode == "centernet":
        radius = max(0, int(_centernet_radius(float(extent[0]), float(extent[1]))))
        return sigma_scale * (2 * radius + 1) / 6
    return sigma_scale * max(float(np.hypot(extent[0], extent[1])), 1.0)


def encode_heatmap(instances, spec: GridSpec, tax: LabelTaxonomy,
                   sigma_scale: float = 1.0, sigma_mode: str = "diagonal") -> CenterHeatmap:
    """Class-aware Gaussian center heatmap.

    Sigma is the diagonal of the instance's BEV footprint bounding box in
    pixels (times ``sigma_scale``); ``sigma_mode="centernet"`` uses the
    overlap-radius rule instead. Overlapping Gaussians on a channel merge
    by per-pixel max, and each rounded center pixel is set to 1.
    """
    if sigma_scale <= 0:
        raise ValidationError(f"sigma_scale must be > 0, got {sigma_scale}")
    if sigma_mode not in SIGMA_MODES:
        raise ValidationError(f"sigma_mode must be one of {SIGMA_MODES}, got {sigma_mode!r}")
    heat = np.zeros((spec.h, spec.w, tax.c_inst), dtype=np.float32)
    gi = np.arange(spec.h, dtype=np.float64)[:, None]
    gj = np.arange(spec.w, dtype=np.float64)[None, :]
    peaks = []
    for rec in instances:
        ch = tax.channel_for_class(rec.class_id)
        sigma = _sigma_pixels(rec, sigma_scale, sigma_mode)
        ci = rec.mass_center[0] / spec.dx
        cj = rec.mass_center[1] / spec.dy
        g = np.exp(-((gi - ci) ** 2 + (gj - cj) ** 2) / (2.0 * sigma * sigma))
        np.maximum(heat[:, :, ch], g, out=heat[:, :, ch], casting="unsafe")
        peaks.append((rec.center_pixel(spec), ch))
    # forced after all merges so a neighbour's tail cannot lower a peak
    for (i, j), ch in peaks:
        heat[i, j, ch] = 1.0
    return CenterHeatmap(heat)


def encode_regression(instances, spec: GridSpec, tax: LabelTaxonomy | None = None):
    """Per-pixel offset-ratio targets toward each instance's mass center.

    Returns ``(RegressionField, reg_mask)``; the mask is true on footprint
    pixels only.
    """
    reg = np.zeros((spec.h, spec.w, 3), dtype=np.float64)
    owner = np.full((spec.h, spec.w), -1, dtype=np.int64)
    for n, rec in enumerate(instances):
        fi, fj = rec.footprint[:, 0], rec.footprint[:, 1]
        taken = owner[fi, fj]
        if (taken >= 0).any():
            other = int(taken[taken >= 0][0])
            raise EncodingError(f"footprints of instances {other} and {n} overlap; "
                                "pixel owner is ambiguous")
        owner[fi, fj] = n
        cx, cy, cz = rec.mass_center
        reg[fi, fj, 0] = cx / spec.dx - fi
        reg[fi, fj, 1] = cy / spec.dy - fj
        reg[fi, fj, 2] = cz / spec.r_z
    return RegressionField(reg), owner >= 0


def encode_targets(instances, spec: GridSpec, tax: LabelTaxonomy,
                   sigma_scale: float = 1.0, sigma_mode: str = "diagonal") -> TargetBundle:
    reg, mask = encode_regression(instances, spec, tax)
    return TargetBundle(encode_heatmap(instances, spec, tax, sigma_scale, sigma_mode), reg, mask)


def _focal_terms(pred, gt, alpha, beta):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {gt.shape}")
    p = np.clip(pred, EPS, 1.0 - EPS)
    pos = gt == 1.0
    n_pos = max(int(pos.sum()), 1)
    return p, gt, pos, n_pos


def focal_heatmap_loss(pred, gt, alpha: float = 2.0, beta: float = 4.0) -> float:
    """Penalty-reduced focal loss for Gaussian center heatmaps.

    Accepts arrays or :class:`CenterHeatmap`. Normalised by the number of
    pixels where the target equals 1 (at least one).
    """
    pred = getattr(pred, "data", pred)
    gt = getattr(gt, "data", gt)
    p, g, pos, n_pos = _focal_terms(pred, gt, alpha, beta)
    pos_loss = np.where(pos, (1 - p) ** alpha * np.log(p), 0.0)
    neg_loss = np.where(pos, 0.0, (1 - g) ** beta * p ** alpha * np.log(1 - p))
    return float(-(pos_loss.sum() + neg_loss.sum()) / n_pos)


def focal_heatmap_loss_grad(pred, gt, alpha: float = 2.0, beta: float = 4.0) -> np.ndarray:
    """Derivative of :func:`focal_heatmap_loss` w.r.t. ``pred``.

    Zero where the prediction sits in the clamped region.
    """
    pred = np.asarray(getattr(pred, "data", pred), dtype=np.float64)
    gt = getattr(gt, "data", gt)
    p, g, pos, n_pos = _focal_terms(pred, gt, alpha, beta)
    d_pos = -alpha * (1 - p) ** (alpha - 1) * np.log(p) + (1 - p) ** alpha / p
    d_neg = (1 - g) ** beta * (alpha * p ** (alpha - 1) * np.log(1 - p) - p ** alpha / (1 - p))
    grad = -np.where(pos, d_pos, d_neg) / n_pos
    inside = (pred > EPS) & (pred < 1.0 - EPS)
    return np.where(inside, grad, 0.0)


def smooth_l1_reg_loss(pred, gt, mask, beta: float = 1.0) -> float:
    pred = np.asarray(getattr(pred, "data", pred), dtype=np.float64)
    gt = np.asarray(getattr(gt, "data", gt), dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {gt.shape}")
    if mask.shape != pred.shape[:-1]:
        raise ShapeError(f"mask shape {mask.shape} does not match field {pred.shape}")
    e = np.abs(pred[mask] - gt[mask])
    per = np.where(e < beta, 0.5 * e * e / beta, e - 0.5 * beta)
    return float(per.sum() / max(int(mask.sum()), 1))
