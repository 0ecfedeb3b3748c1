"""Naive set-arithmetic metric references, independent of voxpano.metrics."""
import math
from fractions import Fraction

import numpy as np

from voxpano.tensors import PanopticGrid


def naive_miou(pred, gt, n_s, ignore_free=True):
    p_sets = {c: set() for c in range(n_s)}
    g_sets = {c: set() for c in range(n_s)}
    for idx in np.ndindex(gt.shape):
        p_sets[int(pred[idx])].add(idx)
        g_sets[int(gt[idx])].add(idx)
    ious = {}
    for c in range(n_s):
        if ignore_free and c == 0:
            continue
        union = p_sets[c] | g_sets[c]
        if union:
            ious[c] = len(p_sets[c] & g_sets[c]) / len(union)
    mean = math.fsum(ious[c] for c in sorted(ious)) / len(ious) if ious else float("nan")
    return ious, mean


def _segments(pano, tax):
    segs = {}
    for idx in np.ndindex(pano.data.shape):
        iid = int(pano.data[idx])
        if iid == 0:
            continue
        cls = pano.id_to_class[iid]
        if cls == 0:
            continue
        key = ("stuff", cls) if tax.is_stuff(cls) else ("thing", iid)
        segs.setdefault(key, (cls, set()))[1].add(idx)
    return segs


def naive_pq(pred: PanopticGrid, gt: PanopticGrid, tax):
    ps, gs = _segments(pred, tax), _segments(gt, tax)
    stats = {}
    matched_p = set()
    for gk, (gc, gv) in gs.items():
        hit = None
        for pk, (pc, pv) in ps.items():
            if pc != gc:
                continue
            iou = Fraction(len(gv & pv), len(gv | pv))
            if iou > Fraction(1, 2):
                assert hit is None
                hit = (pk, iou)
        s = stats.setdefault(gc, [0, 0, 0, Fraction(0)])
        if hit:
            matched_p.add(hit[0])
            s[0] += 1
            s[3] += hit[1]
        else:
            s[2] += 1
    for pk, (pc, _) in ps.items():
        if pk not in matched_p:
            stats.setdefault(pc, [0, 0, 0, Fraction(0)])[1] += 1
    per = {}
    for c, (tp, fp, fn, iou_sum) in stats.items():
        denom = Fraction(2 * tp + fp + fn, 2)
        per[c] = float(iou_sum / denom)
    mean = math.fsum(per[c] for c in sorted(per)) / len(per) if per else float("nan")
    return per, mean
