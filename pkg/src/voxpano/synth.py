"""Seeded synthetic urban scenes: cuboid things over stuff layers.

A scene carries its ground truth (semantic + panoptic grids, instance
records, encoded targets) and the "observed" network outputs, which equal
the targets unless noise is configured.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import yaml
from scipy.special import expit, logit

from .errors import CapacityError, ValidationError
from .geometry import GridSpec, LabelTaxonomy
from .npyio import write_bundle
from .targets import InstanceRecord, TargetBundle, encode_targets
from .tensors import CenterHeatmap, PanopticGrid, RegressionField, SemanticGrid

# margin on the own-vs-other center distance check, in squared meters
_VORONOI_MARGIN = 1e-6
_LOGIT_EPS = 1e-6


@dataclass(frozen=True)
class StuffLayer:
    class_name: str
    k_lo: int
    k_hi: int          # exclusive
    coverage: float = 1.0


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    n_instances: int = 20
    instance_size_range: tuple = ((3, 12), (3, 6), (2, 5))
    stuff_layers: tuple = (StuffLayer("driveable_surface", 0, 1, 1.0),
                           StuffLayer("vegetation", 1, 3, 0.02))
    min_separation: int = 2
    heat_sigma: float = 0.0
    reg_sigma: float = 0.0
    flip_prob: float = 0.0
    # "logit": Gaussian noise on the pre-sigmoid score; "additive": on the
    # score itself, then clamped (creates exact 1.0 plateaus at peaks)
    heat_noise_mode: str = "logit"
    # restrict instances to these thing class names (None: all things)
    thing_classes: tuple | None = None
    noise_stream: int = 0
    max_attempts: int = 5000

    def __post_init__(self):
        if self.n_instances < 0:
            raise ValidationError("n_instances must be >= 0")
        if self.min_separation < 1:
            raise ValidationError("min_separation must be >= 1")
        if min(self.heat_sigma, self.reg_sigma, self.flip_prob) < 0:
            raise ValidationError("noise parameters must be >= 0")
        if self.heat_noise_mode not in ("logit", "additive"):
            raise ValidationError(f"heat_noise_mode must be 'logit' or 'additive', "
                                  f"got {self.heat_noise_mode!r}")
        object.__setattr__(self, "instance_size_range",
                           tuple(tuple(int(v) for v in r) for r in self.instance_size_range))
        object.__setattr__(self, "stuff_layers", tuple(
            s if isinstance(s, StuffLayer) else StuffLayer(**s) for s in self.stuff_layers))
        if self.thing_classes is not None:
            object.__setattr__(self, "thing_classes", tuple(self.thing_classes))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["instance_size_range"] = [list(r) for r in self.instance_size_range]
        d["stuff_layers"] = [asdict(s) for s in self.stuff_layers]
        if self.thing_classes is not None:
            d["thing_classes"] = list(self.thing_classes)
        return d


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    config: SceneConfig
    sem_gt: SemanticGrid
    pano_gt: PanopticGrid
    instances: list
    targets: TargetBundle
    heat: CenterHeatmap
    reg: RegressionField
    sem: SemanticGrid

    def gt_arrays(self) -> dict:
        return {"sem": self.sem_gt.data, "pano": self.pano_gt.data,
                "pano_classes": self.pano_gt.classes_array(),
                "heat": self.targets.heat.data, "reg": self.targets.reg.data,
                "reg_mask": self.targets.reg_mask}

    def observed_arrays(self) -> dict:
        return {"sem": self.sem.data, "heat": self.heat.data, "reg": self.reg.data}


def _gap(a_lo, a_hi, b_lo, b_hi) -> int:
    """Empty pixels between two closed intervals (negative when they overlap)."""
    return max(b_lo - a_hi, a_lo - b_hi) - 1


def _box_voxels(lo, hi) -> np.ndarray:
    grids = np.meshgrid(*(np.arange(a, b + 1) for a, b in zip(lo, hi)), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _own_center_wins(a: InstanceRecord, b: InstanceRecord, spec: GridSpec) -> bool:
    """Every voxel of ``a`` is strictly nearer a's center than b's."""
    pos = a.voxels * np.array(spec.voxel_size)
    ca, cb = np.array(a.mass_center), np.array(b.mass_center)
    da = ((pos - ca) ** 2).sum(axis=1)
    db = ((pos - cb) ** 2).sum(axis=1)
    return bool(np.all(da + _VORONOI_MARGIN < db))


def _place_instances(cfg: SceneConfig, spec: GridSpec, tax: LabelTaxonomy, rng):
    if cfg.thing_classes is None:
        classes = list(tax.thing_channels)
    else:
        classes = [tax.names.index(n) for n in cfg.thing_classes]
        bad = [tax.names[c] for c in classes if not tax.is_thing(c)]
        if bad:
            raise ValidationError(f"thing_classes contains non-thing class(es) {bad}")
    if cfg.n_instances and not classes:
        raise CapacityError("taxonomy has no thing classes to place")
    (si, sj, sk) = cfg.instance_size_range
    k_base = 1 if spec.z > 1 else 0
    placed: list[tuple[InstanceRecord, tuple, tuple]] = []
    for _ in range(cfg.n_instances):
        for _attempt in range(cfg.max_attempts):
            cls = int(classes[rng.integers(len(classes))])
            size = (int(rng.integers(si[0], si[1] + 1)), int(rng.integers(sj[0], sj[1] + 1)),
                    int(rng.integers(sk[0], sk[1] + 1)))
            size = (min(size[0], spec.h), min(size[1], spec.w), min(size[2], spec.z - k_base))
            lo = (int(rng.integers(0, spec.h - size[0] + 1)),
                  int(rng.integers(0, spec.w - size[1] + 1)), k_base)
            hi = tuple(a + s - 1 for a, s in zip(lo, size))
            if any(max(_gap(lo[0], hi[0], plo[0], phi[0]), _gap(lo[1], hi[1], plo[1], phi[1]))
                   < cfg.min_separation for _, plo, phi in placed):
                continue
            rec = InstanceRecord.from_voxels(cls, _box_voxels(lo, hi), spec)
            if all(_own_center_wins(rec, o, spec) and _own_center_wins(o, rec, spec)
                   for o, _, _ in placed if o.class_id == cls):
                placed.append((rec, lo, hi))
                break
        else:
            raise CapacityError(
                f"could not place instance {len(placed) + 1} of {cfg.n_instances} in grid "
                f"{spec.shape} after {cfg.max_attempts} attempts")
    return [p[0] for p in placed]


def generate(cfg: SceneConfig, spec: GridSpec, tax: LabelTaxonomy) -> SyntheticScene:
    geo_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    heat_rng, reg_rng, flip_rng = (
        np.random.default_rng(s)
        for s in np.random.SeedSequence([cfg.seed, 1, cfg.noise_stream]).spawn(3))

    sem = np.zeros(spec.shape, dtype=tax.label_dtype())
    for layer in cfg.stuff_layers:
        if layer.class_name not in tax.names:
            raise ValidationError(f"stuff layer class {layer.class_name!r} not in taxonomy")
        cls = tax.names.index(layer.class_name)
        if not tax.is_stuff(cls):
            raise ValidationError(f"stuff layer class {layer.class_name!r} is not stuff")
        k_lo, k_hi = max(layer.k_lo, 0), min(layer.k_hi, spec.z)
        if layer.coverage >= 1.0:
            cover = np.ones((spec.h, spec.w), dtype=bool)
        else:
            cover = geo_rng.random((spec.h, spec.w)) < layer.coverage
        sem[:, :, k_lo:k_hi][cover] = cls

    instances = _place_instances(cfg, spec, tax, geo_rng)
    pano = np.zeros(spec.shape, dtype=np.uint32)
    id_to_class = {}
    records = []
    for n, rec in enumerate(instances, start=1):
        v = rec.voxels
        sem[v[:, 0], v[:, 1], v[:, 2]] = rec.class_id
        pano[v[:, 0], v[:, 1], v[:, 2]] = n
        id_to_class[n] = rec.class_id
        records.append(replace(rec, instance_id=n))
    next_id = len(records) + 1
    for cls in range(1, tax.n_s):
        if tax.is_stuff(cls):
            mask = sem == cls
            if mask.any():
                pano[mask] = next_id
                id_to_class[next_id] = cls
                next_id += 1

    sem_gt = SemanticGrid(sem, spec, tax)
    pano_gt = PanopticGrid(pano, id_to_class, spec)
    targets = encode_targets(records, spec, tax)

    heat = targets.heat.data
    if cfg.heat_sigma > 0:
        noise = heat_rng.normal(0.0, cfg.heat_sigma, heat.shape)
        if cfg.heat_noise_mode == "logit":
            p = np.clip(heat.astype(np.float64), _LOGIT_EPS, 1.0 - _LOGIT_EPS)
            heat = expit(logit(p) + noise)
        else:
            heat = np.clip(heat + noise, 0.0, 1.0)
        heat = heat.astype(targets.heat.data.dtype)
    reg = targets.reg.data
    if cfg.reg_sigma > 0:
        reg = reg + reg_rng.normal(0.0, cfg.reg_sigma, reg.shape)
    sem_obs = sem
    if cfg.flip_prob > 0:
        nonfree = [c for c in range(1, tax.n_s)]
        if len(nonfree) > 1:
            sem_obs = sem.copy()
            flip = (sem != 0) & (flip_rng.random(sem.shape) < cfg.flip_prob)
            # shift by 1..len-1 within the nonfree ids, so the class always changes
            shift = flip_rng.integers(1, len(nonfree), size=int(flip.sum()))
            old = sem[flip].astype(np.int64) - 1
            sem_obs[flip] = ((old + shift) % len(nonfree) + 1).astype(sem.dtype)

    return SyntheticScene(
        config=cfg, sem_gt=sem_gt, pano_gt=pano_gt, instances=records, targets=targets,
        heat=CenterHeatmap(heat), reg=RegressionField(reg), sem=SemanticGrid(sem_obs, spec, tax))


def save_scene(scene: SyntheticScene, out_dir) -> dict:
    """Write ``gt.npz``, ``obs.npz`` and a ``config.yaml`` echo into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_bundle(out_dir / "gt.npz", scene.gt_arrays())
    write_bundle(out_dir / "obs.npz", scene.observed_arrays())
    (out_dir / "config.yaml").write_text(yaml.safe_dump(scene.config.to_dict(), sort_keys=True))
    return {"gt": str(out_dir / "gt.npz"), "obs": str(out_dir / "obs.npz"),
            "config": str(out_dir / "config.yaml")}


def sweep(noise_levels, instance_counts, spec: GridSpec, tax: LabelTaxonomy, out_dir,
          base: SceneConfig = SceneConfig(), seeds=None) -> list[dict]:
    """Generate and persist the Cartesian product of noise levels x counts (x seeds).

    ``noise_levels`` holds mappings with any of ``heat_sigma``, ``reg_sigma``,
    ``flip_prob``. Each cell draws noise from its own RNG stream; geometry
    depends on the seed alone. Writes ``manifest.json`` and returns its rows.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = [base.seed] if seeds is None else list(seeds)
    rows = []
    cells = itertools.product(list(noise_levels), list(instance_counts), seeds)
    for cell, (noise, count, seed) in enumerate(cells):
        cfg = replace(base, seed=int(seed), n_instances=int(count), noise_stream=cell, **dict(noise))
        paths = save_scene(generate(cfg, spec, tax), out_dir / f"cell_{cell:04d}")
        rows.append({"cell": cell, "config": cfg.to_dict(), **paths})
    (out_dir / "manifest.json").write_text(json.dumps({"scenes": rows}, indent=2, sort_keys=True))
    return rows


def load_scene_config(document) -> SceneConfig:
    if isinstance(document, (str, Path)):
        with open(document, encoding="utf-8") as fh:
            document = yaml.safe_load(fh)
    return SceneConfig(**document)
