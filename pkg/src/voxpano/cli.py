"""Command line interface: ``voxpano <command> [options]``.

Exit status: 0 success, 1 validation error, 2 I/O error. Errors print one
line ``E_CODE: message`` on stderr.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .assign import AssignConfig, NoCenterPolicy, process_frame
from .errors import ArrayFormatError, ValidationError, VoxpanoError
from .geometry import (GridSpec, OCC3D_NUSCENES, LabelTaxonomy, load_grid_spec,
                       load_taxonomy)
from .npyio import read_bundle, read_member, write_array, write_bundle
from .proposal import ProposalConfig
from .tensors import (BEVOccLogits, CenterHeatmap, PanopticGrid, RegressionField,
                      SemanticGrid, channel_to_height, check_consistent, validate)

THREADS_ENV = "VOXPANO_THREADS"


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(int(env), 1)
        except ValueError:
            raise ValidationError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _grid_for(args, shape) -> GridSpec:
    """Grid from --spec, else the tensor's shape with Occ3D voxel sizes."""
    if args.spec:
        return load_grid_spec(args.spec)
    h, w, z = shape
    return GridSpec(h, w, z, OCC3D_NUSCENES.dx, OCC3D_NUSCENES.dy, OCC3D_NUSCENES.dz)


def _write_json(path, doc) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _require_valid(*tensors) -> None:
    problems = [p for t in tensors for p in validate(t)]
    if problems:
        raise ValidationError("; ".join(problems))


def _load_semantic(args, tax: LabelTaxonomy):
    if args.logits:
        raw = read_member(args.logits, "logits")
        if raw.ndim != 3 or raw.shape[-1] % tax.n_s:
            raise ValidationError(f"logits shape {raw.shape} is not (h, w, z*{tax.n_s})")
        spec = _grid_for(args, raw.shape[:2] + (raw.shape[-1] // tax.n_s,))
        logits = BEVOccLogits(raw, spec, tax)
        _require_valid(logits)
        return logits, spec
    raw = read_member(args.sem, "sem")
    if raw.ndim != 3:
        raise ValidationError(f"semantic grid must be 3-D, got shape {raw.shape}")
    spec = _grid_for(args, raw.shape)
    sem = SemanticGrid(raw, spec, tax)
    _require_valid(sem)
    return sem, spec


def cmd_process(args) -> int:
    tax = load_taxonomy(args.taxonomy)
    src, spec = _load_semantic(args, tax)
    heat = CenterHeatmap(read_member(args.heat, "heat"))
    reg = RegressionField(read_member(args.reg, "reg"))
    sem_shape = spec.shape
    if heat.data.ndim != 3 or heat.data.shape[:2] != sem_shape[:2]:
        raise ValidationError(f"heatmap shape {heat.data.shape} does not match semantic "
                              f"grid shape {sem_shape}")
    if reg.data.ndim != 3 or reg.data.shape != sem_shape[:2] + (3,):
        raise ValidationError(f"regression shape {reg.data.shape} does not match semantic "
                              f"grid shape {sem_shape}")
    if heat.data.shape[-1] != tax.c_inst:
        raise ValidationError(f"heatmap shape {heat.data.shape} has {heat.data.shape[-1]} "
                              f"channels, taxonomy expects C_Inst={tax.c_inst}")
    _require_valid(heat, reg)

    pcfg = ProposalConfig(kernel=args.kernel, top_k=args.topk, tau=args.tau,
                          per_class_topk=args.per_class_topk)
    acfg = AssignConfig(no_center_policy=NoCenterPolicy(args.no_center_policy),
                        threads=args.threads or _default_threads())
    timings = {}
    pano, phi, stats = process_frame(src, heat, reg, spec, tax, pcfg, acfg, timings=timings)
    sem = channel_to_height(src) if isinstance(src, BEVOccLogits) else src

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_bundle(out, {"sem": sem.data, "pano": pano.data, "pano_classes": pano.classes_array()})
    inputs = {name: getattr(args, name) for name in ("sem", "logits", "heat", "reg", "spec", "taxonomy")
              if getattr(args, name)}
    manifest = {
        "tool_version": __version__,
        "input_digests": {k: _sha256(v) for k, v in inputs.items()},
        "output_digest": _sha256(out),
        "grid": spec.to_dict(),
        "taxonomy": tax.to_dict(),
        "proposal": pcfg.to_dict(),
        "assign": acfg.to_dict(),
        "stats": stats.to_dict(),
        "centers": [{"x": c.x, "y": c.y, "z": c.z, "class": c.k, "score": c.score} for c in phi],
        "timings_us": {k: timings[k] for k in ("propose_us", "assign_us", "total_us")},
    }
    manifest_path = Path(args.manifest) if args.manifest else out.with_suffix(".manifest.json")
    _write_json(manifest_path, manifest)
    print(f"wrote {out} ({stats.total_ids} ids, {len(phi)} centers); manifest {manifest_path}")
    return 0


def _load_panoptic_bundle(path, tax, spec=None):
    b = read_bundle(path)
    missing = [m for m in ("sem", "pano", "pano_classes") if m not in b]
    if missing:
        raise ArrayFormatError(f"{path}: missing member(s) {missing}")
    if spec is None:
        spec = GridSpec(*b["sem"].shape, OCC3D_NUSCENES.dx, OCC3D_NUSCENES.dy, OCC3D_NUSCENES.dz)
    sem = SemanticGrid(b["sem"], spec, tax)
    pano = PanopticGrid.from_arrays(b["pano"], b["pano_classes"], spec)
    _require_valid(sem, pano)
    return sem, pano


def cmd_eval(args) -> int:
    from .metrics import miou, panoptic_quality

    tax = load_taxonomy(args.taxonomy)
    spec = load_grid_spec(args.spec) if args.spec else None
    psem, ppano = _load_panoptic_bundle(args.pred, tax, spec)
    gsem, gpano = _load_panoptic_bundle(args.gt, tax, spec)
    if psem.data.shape != gsem.data.shape:
        raise ValidationError(f"prediction shape {psem.data.shape} != ground truth "
                              f"shape {gsem.data.shape}")
    problems = check_consistent(gsem, gpano)
    if problems:
        raise ValidationError("ground truth: " + "; ".join(problems))
    ious, mean_iou = miou(psem, gsem, ignore_free=not args.keep_free)
    pq = panoptic_quality(ppano, gpano, tax)

    gt_counts = np.bincount(gsem.data.reshape(-1), minlength=tax.n_s)
    pred_counts = np.bincount(psem.data.reshape(-1), minlength=tax.n_s)
    rows = []
    for c in range(tax.n_s):
        cp = pq.per_class.get(c)
        rows.append({
            "class": c, "name": tax.names[c], "kind": tax.kinds[c],
            "iou": None if np.isnan(ious[c]) else float(ious[c]),
            "pq": cp.pq if cp else None, "sq": cp.sq if cp else None, "rq": cp.rq if cp else None,
            "tp": cp.tp if cp else 0, "fp": cp.fp if cp else 0, "fn": cp.fn if cp else 0,
            "gt_voxels": int(gt_counts[c]), "pred_voxels": int(pred_counts[c]),
        })
    report = {
        "tool_version": __version__,
        "miou": mean_iou, "pq": pq.pq, "pq_things": pq.pq_things, "pq_stuff": pq.pq_stuff,
        "voxels": int(gsem.data.size),
        "classes": rows,
    }

    cols = ("class", "name", "kind", "iou", "pq", "sq", "rq", "tp", "fp", "fn",
            "gt_voxels", "pred_voxels")
    fmt = lambda v: "nan" if v is None else (f"{v:.6f}" if isinstance(v, float) else str(v))  # noqa: E731
    lines = ["\t".join(cols)] + ["\t".join(fmt(r[c]) for c in cols) for r in rows]
    for key in ("miou", "pq", "pq_things", "pq_stuff"):
        lines.append(f"# {key}\t{fmt(report[key])}")
    table = "\n".join(lines) + "\n"
    sys.stdout.write(table)
    if args.report:
        _write_json(args.report, report)
        Path(args.report).with_suffix(".tsv").write_text(table)
    if args.figures:
        from .plotting import plot_bev_panoptic, plot_class_scores

        fig_dir = Path(args.figures)
        plot_class_scores(tax.names, [r["iou"] if r["iou"] is not None else np.nan for r in rows],
                          [r["pq"] if r["pq"] is not None else np.nan for r in rows],
                          fig_dir / "class_scores.png")
        plot_bev_panoptic(ppano.data, gpano.data, fig_dir / "bev_panoptic.png")
    return 0


def _scene_config_from_args(args):
    from .synth import SceneConfig, load_scene_config

    base = load_scene_config(args.config) if args.config else SceneConfig()
    overrides = {}
    for flag, key in (("seed", "seed"), ("instances", "n_instances"), ("heat_noise", "heat_sigma"),
                      ("reg_noise", "reg_sigma"), ("flip_prob", "flip_prob"),
                      ("min_separation", "min_separation")):
        v = getattr(args, flag)
        if v is not None:
            overrides[key] = v
    from dataclasses import replace
    return replace(base, **overrides)


def cmd_synth(args) -> int:
    from .synth import generate, save_scene

    tax = load_taxonomy(args.taxonomy)
    spec = load_grid_spec(args.spec)
    cfg = _scene_config_from_args(args)
    paths = save_scene(generate(cfg, spec, tax), args.out)
    (Path(args.out) / "grid.yaml").write_text(yaml.safe_dump(spec.to_dict(), sort_keys=False))
    for key in ("gt", "obs", "config"):
        print(f"{key}\t{paths[key]}\t{_sha256(paths[key])}")
    return 0


def cmd_encode_targets(args) -> int:
    from .targets import encode_targets, extract_instances

    tax = load_taxonomy(args.taxonomy)
    spec = load_grid_spec(args.spec) if args.spec else None
    sem, pano = _load_panoptic_bundle(args.gt, tax, spec)
    records = extract_instances(sem, pano)
    tb = encode_targets(records, sem.spec, tax, sigma_scale=args.sigma_scale,
                        sigma_mode=args.sigma_mode)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_bundle(args.out, {"heat": tb.heat.data, "reg": tb.reg.data, "reg_mask": tb.reg_mask})
    print(f"wrote {args.out} ({len(records)} instances)")
    return 0


def cmd_c2h(args) -> int:
    tax = load_taxonomy(args.taxonomy)
    raw = read_member(args.logits, "logits")
    if raw.ndim != 3 or raw.shape[-1] % tax.n_s:
        raise ValidationError(f"logits shape {raw.shape} is not (h, w, z*{tax.n_s})")
    spec = _grid_for(args, raw.shape[:2] + (raw.shape[-1] // tax.n_s,))
    sem = channel_to_height(BEVOccLogits(raw, spec, tax))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    if str(args.out).endswith(".npz"):
        write_bundle(args.out, {"sem": sem.data})
    else:
        write_array(args.out, sem.data)
    print(f"wrote {args.out} shape {sem.data.shape}")
    return 0


def cmd_bench(args) -> int:
    from .bench import run_bench

    tax = load_taxonomy(args.taxonomy)
    spec = load_grid_spec(args.spec)
    report, samples = run_bench(
        spec, tax, n_instances=args.instances, repetitions=args.reps,
        threads=args.threads or _default_threads(), seed=args.seed,
        thing_classes=args.thing_classes.split(",") if args.thing_classes else None,
        proposal_cfg=ProposalConfig(kernel=args.kernel, top_k=args.topk, tau=args.tau))
    t = report["timings_us"]
    print("stage\tmedian_ms\tp95_ms")
    for stage in ("propose_us", "assign_us", "post_us", "total_us"):
        print(f"{stage[:-3]}\t{t[stage]['median'] / 1e3:.3f}\t{t[stage]['p95'] / 1e3:.3f}"
              if t[stage]["median"] is not None else f"{stage[:-3]}\tnan\tnan")
    print(f"# distance_evaluations\t{report['distance_evaluations']}")
    print(f"# class_agnostic_evaluations\t{report['class_agnostic_evaluations']}")
    print(f"# work_ratio\t{report['work_ratio']:.6f}")
    if args.report:
        _write_json(args.report, report)
    if args.figures:
        from .plotting import plot_stage_latency

        plot_stage_latency({k[:-3]: v for k, v in samples.items()},
                           Path(args.figures) / "stage_latency.png")
    return 0


def _add_common(p, spec_help="grid spec YAML (h, w, z, dx, dy, dz)"):
    p.add_argument("--spec", help=spec_help)
    p.add_argument("--taxonomy", help="taxonomy YAML (classes: [{id, name, kind}])")


def _add_proposal(p):
    p.add_argument("--tau", type=float, default=0.3, help="score threshold (default 0.3)")
    p.add_argument("--topk", type=int, default=100, help="retained candidates (default 100)")
    p.add_argument("--kernel", type=int, default=3, help="NMS window edge (default 3)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxpano", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"voxpano {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("process", help="semantic grid + center head outputs -> panoptic grid")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--sem", help="semantic grid (.npy, or .npz member 'sem')")
    src.add_argument("--logits", help="flattened BEV logits (.npy, or .npz member 'logits')")
    p.add_argument("--heat", required=True, help="center heatmap (.npy, or .npz member 'heat')")
    p.add_argument("--reg", required=True, help="regression field (.npy, or .npz member 'reg')")
    p.add_argument("--out", required=True, help="output NPZ (sem, pano, pano_classes)")
    p.add_argument("--manifest", help="manifest path (default: OUT with .manifest.json)")
    p.add_argument("--no-center-policy", default="single_instance",
                   choices=[c.value for c in NoCenterPolicy])
    p.add_argument("--per-class-topk", action="store_true", help="rank top-k within each class")
    p.add_argument("--threads", type=int, help=f"worker threads (env {THREADS_ENV})")
    _add_common(p, "grid spec YAML (default: tensor shape with 0.4 m voxels)")
    _add_proposal(p)
    p.set_defaults(func=cmd_process)

    p = sub.add_parser("eval", help="mIoU and PQ of a prediction bundle against ground truth")
    p.add_argument("--pred", required=True, help="NPZ with sem, pano, pano_classes")
    p.add_argument("--gt", required=True, help="NPZ with sem, pano, pano_classes")
    p.add_argument("--report", help="JSON report path (a .tsv table is written beside it)")
    p.add_argument("--figures", help="directory for PNG figures")
    p.add_argument("--keep-free", action="store_true", help="include the free class in mIoU")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="scene config YAML")
    p.add_argument("--seed", type=int)
    p.add_argument("--instances", type=int)
    p.add_argument("--heat-noise", type=float)
    p.add_argument("--reg-noise", type=float)
    p.add_argument("--flip-prob", type=float)
    p.add_argument("--min-separation", type=int)
    _add_common(p, "grid spec YAML (default: Occ3D-nuScenes 200x200x16)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("encode-targets", help="encode heatmap/regression targets from GT")
    p.add_argument("--gt", required=True, help="NPZ with sem, pano, pano_classes")
    p.add_argument("--out", required=True, help="output NPZ (heat, reg, reg_mask)")
    p.add_argument("--sigma-scale", type=float, default=1.0)
    p.add_argument("--sigma-mode", choices=("diagonal", "centernet"), default="diagonal",
                   help="footprint diagonal in pixels, or the CenterNet overlap radius")
    _add_common(p)
    p.set_defaults(func=cmd_encode_targets)

    p = sub.add_parser("c2h", help="channel-to-height decode of BEV logits")
    p.add_argument("--logits", required=True)
    p.add_argument("--out", required=True, help=".npy, or .npz (member 'sem')")
    _add_common(p, "grid spec YAML (default: inferred from logits)")
    p.set_defaults(func=cmd_c2h)

    p = sub.add_parser("bench", help="latency and work-count benchmark")
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--threads", type=int, help=f"worker threads (env {THREADS_ENV})")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--thing-classes", help="comma-separated thing class names to place")
    p.add_argument("--report", help="JSON report path")
    p.add_argument("--figures", help="directory for PNG figures")
    _add_common(p, "grid spec YAML (default: Occ3D-nuScenes 200x200x16)")
    _add_proposal(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except VoxpanoError as exc:
        print(exc.diagnostic(), file=sys.stderr)
        return exc.exit_status
    except yaml.YAMLError as exc:
        print("E_CONFIG: " + " ".join(str(exc).split()), file=sys.stderr)
        return 1
    except OSError as exc:
        print("E_IO: " + " ".join(str(exc).split()), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
