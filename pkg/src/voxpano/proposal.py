"""Instance center proposal from a class-aware center heatmap.

Three steps: maxpool NMS per channel, a global top-k by score, and a
score threshold. Surviving peaks are lifted to 3-D centers with the
regression field.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.ndimage import maximum_filter

from .errors import ContractError, ShapeError, ValidationError
from .geometry import GridSpec, LabelTaxonomy
from .tensors import CenterHeatmap, RegressionField


@dataclass(frozen=True)
class ProposalConfig:
    kernel: int = 3
    top_k: int = 100
    tau: float = 0.3
    # rank within each channel instead of one global pool
    per_class_topk: bool = False

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValidationError(f"kernel must be odd and >= 1, got {self.kernel}")
        if self.top_k < 1:
            raise ValidationError(f"top_k must be >= 1, got {self.top_k}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValidationError(f"tau must lie in [0, 1], got {self.tau}")

    def to_dict(self) -> dict:
        return {"kernel": self.kernel, "topk": self.top_k, "tau": self.tau,
                "per_class_topk": self.per_class_topk}


class PeakCandidate(NamedTuple):
    i: int
    j: int
    channel: int
    score: float


@dataclass(frozen=True)
class InstanceCenter:
    x: float
    y: float
    z: float
    k: int
    score: float = 1.0

    @property
    def xyz(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


def _survivor_mask(heat: np.ndarray, kernel: int) -> np.ndarray:
    # mode="nearest" replicates edge pixels, which equals an edge-clipped window
    pooled = maximum_filter(heat, size=(kernel, kernel, 1), mode="nearest")
    return heat == pooled


def _check_heat(heat: CenterHeatmap) -> np.ndarray:
    data = np.asarray(heat.data)
    if data.ndim != 3:
        raise ShapeError(f"heatmap must be (h, w, C_Inst), got shape {data.shape}")
    return data


def nms_peaks(heat: CenterHeatmap, cfg: ProposalConfig = ProposalConfig()) -> list[PeakCandidate]:
    """Every pixel equal to the max of its kernel x kernel neighbourhood."""
    data = _check_heat(heat)
    ii, jj, cc = np.nonzero(_survivor_mask(data, cfg.kernel))
    scores = data[ii, jj, cc]
    return [PeakCandidate(int(i), int(j), int(c), float(s))
            for i, j, c, s in zip(ii, jj, cc, scores)]


def _rank_order(i, j, channel, score) -> np.ndarray:
    # lexsort keys are given last-primary: score desc, channel, i, j asc
    return np.lexsort((j, i, channel, -np.asarray(score, dtype=np.float64)))


def _select(i, j, channel, score, cfg: ProposalConfig) -> np.ndarray:
    """Indices of retained entries, in output order."""
    order = _rank_order(i, j, channel, score)
    if cfg.per_class_topk:
        ch_sorted = np.asarray(channel)[order]
        keep = np.zeros(order.size, dtype=bool)
        for c in np.unique(ch_sorted):
            pos = np.flatnonzero(ch_sorted == c)[: cfg.top_k]
            keep[pos] = True
        order = order[keep]
    else:
        order = order[: cfg.top_k]
    return order[np.asarray(score, dtype=np.float64)[order] >= cfg.tau]


def rank_and_threshold(peaks: list[PeakCandidate],
                       cfg: ProposalConfig = ProposalConfig()) -> list[PeakCandidate]:
    if not peaks:
        return []
    arr = np.array([(p.i, p.j, p.channel) for p in peaks], dtype=np.int64)
    score = np.array([p.score for p in peaks], dtype=np.float64)
    sel = _select(arr[:, 0], arr[:, 1], arr[:, 2], score, cfg)
    return [peaks[n] for n in sel]


def decode_centers(peaks: list[PeakCandidate], reg: RegressionField, spec: GridSpec,
                   tax: LabelTaxonomy) -> list[InstanceCenter]:
    data = np.asarray(reg.data)
    if data.ndim != 3 or data.shape[-1] != 3:
        raise ShapeError(f"regression field must be (h, w, 3), got shape {data.shape}")
    out = []
    for p in peaks:
        if not (0 <= p.i < data.shape[0] and 0 <= p.j < data.shape[1]):
            raise ContractError(f"peak {(p.i, p.j)} outside regression field {data.shape[:2]}")
        cls = tax.class_for_channel(p.channel)
        ox, oy, oz = (float(v) for v in data[p.i, p.j])
        out.append(InstanceCenter(
            x=spec.dx * (p.i + ox),
            y=spec.dy * (p.j + oy),
            z=spec.r_z * oz,
            k=cls,
            score=float(p.score),
        ))
    return out


def propose(heat: CenterHeatmap, reg: RegressionField, spec: GridSpec, tax: LabelTaxonomy,
            cfg: ProposalConfig = ProposalConfig()) -> list[InstanceCenter]:
    """NMS, rank, threshold and decode in one pass.

    Same result as chaining the three public steps. Entries below ``tau``
    are dropped before ranking: the thresholded set is a prefix of the
    score-sorted list, so filtering first cannot change it.
    """
    data = _check_heat(heat)
    if data.shape[-1] != tax.c_inst:
        raise ShapeError(f"heatmap has {data.shape[-1]} channels, taxonomy has "
                         f"C_Inst={tax.c_inst}")
    if data.shape[:2] != (spec.h, spec.w):
        raise ShapeError(f"heatmap BEV shape {data.shape[:2]} != grid {(spec.h, spec.w)}")
    if np.asarray(reg.data).shape[:2] != data.shape[:2]:
        raise ShapeError(f"regression shape {np.asarray(reg.data).shape} does not match "
                         f"heatmap shape {data.shape}")
    mask = _survivor_mask(data, cfg.kernel)
    mask &= data >= cfg.tau
    ii, jj, cc = np.nonzero(mask)
    scores = data[ii, jj, cc]
    sel = _select(ii, jj, cc, scores, cfg)
    peaks = [PeakCandidate(int(ii[n]), int(jj[n]), int(cc[n]), float(scores[n])) for n in sel]
    return decode_centers(peaks, reg, spec, tax)
