import json

import numpy as np
import pytest

from voxpano.assign import process_frame
from voxpano.errors import CapacityError, ValidationError
from voxpano.geometry import GridSpec
from voxpano.metrics import compare_panoptic_exact, panoptic_quality
from voxpano.npyio import read_bundle
from voxpano.synth import SceneConfig, StuffLayer, generate, load_scene_config, save_scene, sweep
from voxpano.targets import extract_instances
from voxpano.tensors import check_consistent

SPEC = GridSpec(48, 48, 8)


def test_empty_scene_with_full_slab(tax):
    cfg = SceneConfig(n_instances=0, stuff_layers=(StuffLayer("driveable_surface", 0, 1, 1.0),))
    scene = generate(cfg, SPEC, tax)
    assert scene.pano_gt.id_to_class == {1: tax.names.index("driveable_surface")}
    assert np.unique(scene.pano_gt.data).tolist() == [0, 1]


def test_same_seed_is_byte_identical(tax):
    a = generate(SceneConfig(seed=3, n_instances=6, heat_sigma=0.1, flip_prob=0.01), SPEC, tax)
    b = generate(SceneConfig(seed=3, n_instances=6, heat_sigma=0.1, flip_prob=0.01), SPEC, tax)
    for k, v in a.gt_arrays().items():
        assert v.tobytes() == b.gt_arrays()[k].tobytes()
    for k, v in a.observed_arrays().items():
        assert v.tobytes() == b.observed_arrays()[k].tobytes()


def test_zero_noise_observed_equals_targets(tax):
    s = generate(SceneConfig(seed=1, n_instances=5), SPEC, tax)
    assert s.heat.data is s.targets.heat.data and s.reg.data is s.targets.reg.data
    assert np.array_equal(s.sem.data, s.sem_gt.data)


def test_ground_truth_is_consistent(tax):
    s = generate(SceneConfig(seed=2, n_instances=8), SPEC, tax)
    assert check_consistent(s.sem_gt, s.pano_gt) == []
    recs = extract_instances(s.sem_gt, s.pano_gt)
    assert len(recs) == 8
    for a, b in zip(recs, s.instances):
        assert a.instance_id == b.instance_id and a.mass_center == pytest.approx(b.mass_center)


def test_footprints_respect_min_separation(tax):
    s = generate(SceneConfig(seed=4, n_instances=10, min_separation=3), SPEC, tax)
    boxes = [(r.footprint.min(0), r.footprint.max(0)) for r in s.instances]
    for n, (alo, ahi) in enumerate(boxes):
        for blo, bhi in boxes[n + 1:]:
            gaps = [max(blo[d] - ahi[d], alo[d] - bhi[d]) - 1 for d in range(2)]
            assert max(gaps) >= 3


def test_zero_noise_round_trip(tax):
    s = generate(SceneConfig(seed=7, n_instances=20), GridSpec(), tax)
    pano, phi, _ = process_frame(s.sem, s.heat, s.reg, GridSpec(), tax)
    assert len(phi) == 20
    assert compare_panoptic_exact(pano, s.pano_gt)


def test_semantic_flips_stay_nonfree(tax):
    s = generate(SceneConfig(seed=5, n_instances=4, flip_prob=0.3), SPEC, tax)
    assert np.array_equal(s.sem.data == 0, s.sem_gt.data == 0)
    changed = s.sem.data != s.sem_gt.data
    assert changed.any()


def test_heat_noise_modes_stay_in_unit_interval(tax):
    for mode in ("logit", "additive"):
        s = generate(SceneConfig(seed=6, n_instances=4, heat_sigma=0.3, heat_noise_mode=mode),
                     SPEC, tax)
        assert s.heat.data.min() >= 0.0 and s.heat.data.max() <= 1.0
        assert s.heat.data.dtype == s.targets.heat.data.dtype


def test_heat_noise_lowers_pq(tax):
    spec = GridSpec(96, 96, 8)
    means = []
    for sigma in (0.0, 0.2):
        pqs = []
        for seed in range(5):
            s = generate(SceneConfig(seed=seed, n_instances=10, heat_sigma=sigma), spec, tax)
            pano, _, _ = process_frame(s.sem, s.heat, s.reg, spec, tax)
            pqs.append(panoptic_quality(pano, s.pano_gt, tax).pq)
        means.append(np.mean(pqs))
    assert means[1] <= means[0]


def test_capacity_error(tax):
    with pytest.raises(CapacityError):
        generate(SceneConfig(n_instances=50, max_attempts=50), GridSpec(16, 16, 4), tax)


def test_config_validation(tax):
    with pytest.raises(ValidationError):
        SceneConfig(n_instances=-1)
    with pytest.raises(ValidationError):
        SceneConfig(min_separation=0)
    with pytest.raises(ValidationError):
        SceneConfig(heat_noise_mode="gamma")
    with pytest.raises(ValidationError):
        generate(SceneConfig(thing_classes=("vegetation",)), SPEC, tax)


def test_single_thing_class(tax):
    s = generate(SceneConfig(n_instances=5, thing_classes=("car",)), SPEC, tax)
    assert {r.class_id for r in s.instances} == {tax.names.index("car")}


def test_save_and_config_echo(tax, tmp_path):
    s = generate(SceneConfig(seed=9, n_instances=3), SPEC, tax)
    paths = save_scene(s, tmp_path / "scene")
    gt = read_bundle(paths["gt"])
    assert set(gt) == {"sem", "pano", "pano_classes", "heat", "reg", "reg_mask"}
    assert set(read_bundle(paths["obs"])) == {"sem", "heat", "reg"}
    assert load_scene_config(paths["config"]) == s.config


def test_sweep(tax, tmp_path):
    levels = [{"heat_sigma": 0.0}, {"heat_sigma": 0.1}, {"heat_sigma": 0.2}]
    rows = sweep(levels, [2, 4], SPEC, tax, tmp_path / "sw")
    assert len(rows) == 6
    manifest = json.loads((tmp_path / "sw" / "manifest.json").read_text())
    assert len(manifest["scenes"]) == 6
    assert sweep([], [2], SPEC, tax, tmp_path / "empty") == []


def test_sweep_same_seed_shares_geometry(tax, tmp_path):
    rows = sweep([{"heat_sigma": 0.1}], [3], SPEC, tax, tmp_path / "sw", seeds=[11, 11])
    a, b = (read_bundle(r["gt"]) for r in rows)
    assert np.array_equal(a["pano"], b["pano"])
    oa, ob = (read_bundle(r["obs"]) for r in rows)
    assert not np.array_equal(oa["heat"], ob["heat"])
