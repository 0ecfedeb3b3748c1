"""Voxel-level mIoU and panoptic quality."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ShapeError, ValidationError
from .geometry import LabelTaxonomy
from .tensors import PanopticGrid, SemanticGrid


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, n_s: int) -> np.ndarray:
    """Rows are ground-truth classes, columns predicted classes."""
    pred = np.asarray(pred).reshape(-1).astype(np.int64)
    gt = np.asarray(gt).reshape(-1).astype(np.int64)
    return np.bincount(gt * n_s + pred, minlength=n_s * n_s).reshape(n_s, n_s)


def miou(pred: SemanticGrid, gt: SemanticGrid, ignore_free: bool = True):
    """Per-class IoU (NaN for classes absent from both grids) and their mean."""
    if pred.data.shape != gt.data.shape:
        raise ShapeError(f"prediction shape {pred.data.shape} != ground truth {gt.data.shape}")
    n_s = gt.taxonomy.n_s
    cm = confusion_matrix(pred.data, gt.data, n_s)
    tp = np.diag(cm)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    ious = np.full(n_s, np.nan)
    present = union > 0
    ious[present] = tp[present] / union[present]
    if ignore_free:
        ious[0] = np.nan
    valid = ~np.isnan(ious)
    mean = math.fsum(ious[valid]) / int(valid.sum()) if valid.any() else float("nan")
    return ious, mean


@dataclass
class ClassPQ:
    pq: float
    sq: float
    rq: float
    tp: int
    fp: int
    fn: int
    iou_sum: float


@dataclass
class PQReport:
    per_class: dict = field(default_factory=dict)
    pq: float = float("nan")
    pq_things: float = float("nan")
    pq_stuff: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "pq": self.pq, "pq_things": self.pq_things, "pq_stuff": self.pq_stuff,
            "per_class": {str(c): vars(v) for c, v in sorted(self.per_class.items())},
        }


def _segments(pano: PanopticGrid, tax: LabelTaxonomy):
    """Map each voxel to a segment key; stuff classes collapse to one segment.

    Returns ``(seg_per_voxel, seg_class)`` where segment 0 means "no segment".
    """
    flat = pano.data.reshape(-1).astype(np.int64)
    ids = np.unique(flat)
    ids = ids[ids != 0]
    missing = [int(i) for i in ids if int(i) not in pano.id_to_class]
    if missing:
        raise ValidationError(f"instance id(s) {missing} lack an id_to_class entry")
    seg_of_id, seg_class, stuff_seg = {}, [0], {}
    for iid in ids:
        cls = pano.id_to_class[int(iid)]
        if cls == 0:
            continue
        if tax.is_stuff(cls):
            if cls not in stuff_seg:
                stuff_seg[cls] = len(seg_class)
                seg_class.append(cls)
            seg_of_id[int(iid)] = stuff_seg[cls]
        else:
            seg_of_id[int(iid)] = len(seg_class)
            seg_class.append(cls)
    lut_keys = np.array(sorted(seg_of_id), dtype=np.int64)
    lut_vals = np.array([seg_of_id[k] for k in lut_keys], dtype=np.int64)
    seg = np.zeros_like(flat)
    if lut_keys.size:
        pos = np.searchsorted(lut_keys, flat)
        pos = np.clip(pos, 0, lut_keys.size - 1)
        hit = lut_keys[pos] == flat
        seg[hit] = lut_vals[pos[hit]]
    return seg, np.array(seg_class, dtype=np.int64)


def panoptic_quality(pred: PanopticGrid, gt: PanopticGrid, tax: LabelTaxonomy) -> PQReport:
    """Voxel PQ with the standard IoU > 0.5 matching rule.

    IoU sums are kept as exact fractions so results do not depend on
    accumulation order.
    """
    if pred.data.shape != gt.data.shape:
        raise ShapeError(f"prediction shape {pred.data.shape} != ground truth {gt.data.shape}")
    pseg, pcls = _segments(pred, tax)
    gseg, gcls = _segments(gt, tax)
    p_area = np.bincount(pseg, minlength=pcls.size)
    g_area = np.bincount(gseg, minlength=gcls.size)

    both = (pseg != 0) & (gseg != 0)
    key = gseg[both] * pcls.size + pseg[both]
    keys, inter = np.unique(key, return_counts=True)

    tp = {}
    iou_sum: dict[int, Fraction] = {}
    g_matched, p_matched = set(), set()
    for kk, n in zip(keys.tolist(), inter.tolist()):
        g, p = divmod(kk, pcls.size)
        if gcls[g] != pcls[p]:
            continue
        union = int(g_area[g]) + int(p_area[p]) - n
        if 2 * n > union:
            if g in g_matched or p in p_matched:
                raise AssertionError("IoU > 0.5 matched a segment twice")
            g_matched.add(g)
            p_matched.add(p)
            cls = int(gcls[g])
            tp[cls] = tp.get(cls, 0) + 1
            iou_sum[cls] = iou_sum.get(cls, Fraction(0)) + Fraction(n, union)

    fp, fn = {}, {}
    for p in range(1, pcls.size):
        if p not in p_matched:
            fp[int(pcls[p])] = fp.get(int(pcls[p]), 0) + 1
    for g in range(1, gcls.size):
        if g not in g_matched:
            fn[int(gcls[g])] = fn.get(int(gcls[g]), 0) + 1

    report = PQReport()
    for cls in sorted(set(tp) | set(fp) | set(fn)):
        t, f_p, f_n = tp.get(cls, 0), fp.get(cls, 0), fn.get(cls, 0)
        s = iou_sum.get(cls, Fraction(0))
        denom = Fraction(2 * t + f_p + f_n, 2)
        report.per_class[cls] = ClassPQ(
            pq=float(s / denom),
            sq=float(s / t) if t else 0.0,
            rq=float(t / denom),
            tp=t, fp=f_p, fn=f_n, iou_sum=float(s),
        )

    def _mean(classes):
        vals = [report.per_class[c].pq for c in classes]
        return math.fsum(vals) / len(vals) if vals else float("nan")

    report.pq = _mean(report.per_class)
    report.pq_things = _mean([c for c in report.per_class if tax.is_thing(c)])
    report.pq_stuff = _mean([c for c in report.per_class if tax.is_stuff(c)])
    return report


def compare_panoptic_exact(pred: PanopticGrid, gt: PanopticGrid) -> bool:
    """True iff some bijection of nonzero ids maps ``pred`` onto ``gt``."""
    if pred.data.shape != gt.data.shape:
        return False
    p = pred.data.reshape(-1).astype(np.int64)
    g = gt.data.reshape(-1).astype(np.int64)
    if not np.array_equal(p == 0, g == 0):
        return False
    nz = p != 0
    pairs = np.unique(np.stack([p[nz], g[nz]]), axis=1)
    if np.unique(pairs[0]).size != pairs.shape[1] or np.unique(pairs[1]).size != pairs.shape[1]:
        return False
    for a, b in pairs.T:
        if pred.id_to_class.get(int(a)) != gt.id_to_class.get(int(b)):
            return False
    return True
