import numpy as np
import pytest
import yaml
from hypothesis import given, strategies as st

from voxpano.errors import ContractError, TaxonomyError, ValidationError
from voxpano.geometry import (OCC3D_NUSCENES, GridSpec, dump_grid_spec, dump_taxonomy,
                              load_grid_spec, load_taxonomy, voxel_position, voxel_positions)


def test_default_grid_matches_occ3d_range():
    # 80 m / 0.4 m in x and y, 6.4 m / 0.4 m in z
    assert OCC3D_NUSCENES.shape == (200, 200, 16)
    assert OCC3D_NUSCENES.voxel_size == (0.4, 0.4, 0.4)
    assert OCC3D_NUSCENES.r_z == 16 * 0.4


@pytest.mark.parametrize("kwargs", [dict(h=0), dict(z=-1), dict(dx=0.0), dict(dz=-0.4)])
def test_grid_spec_rejects_bad_values(kwargs):
    with pytest.raises(ValidationError):
        GridSpec(**kwargs)


@pytest.mark.parametrize("idx, expected", [
    ((0, 0, 0), (0.0, 0.0, 0.0)),
    ((2, 5, 3), (0.8, 2.0, 1.2)),
    ((199, 199, 15), (79.6, 79.6, 6.0)),
])
def test_voxel_position_examples(idx, expected):
    assert voxel_position(OCC3D_NUSCENES, idx) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("idx", [(200, 0, 0), (0, -1, 0), (0, 0, 16)])
def test_voxel_position_out_of_bounds(idx):
    with pytest.raises(ContractError):
        voxel_position(OCC3D_NUSCENES, idx)


sizes = st.floats(min_value=0.01, max_value=5.0, allow_nan=False)


@given(dx=sizes, dy=sizes, dz=sizes, data=st.data())
def test_voxel_position_injective_and_in_bounds(dx, dy, dz, data):
    spec = GridSpec(5, 6, 3, dx, dy, dz)
    idx = np.stack(np.meshgrid(range(5), range(6), range(3), indexing="ij"), -1).reshape(-1, 3)
    pos = voxel_positions(spec, idx)
    assert len({tuple(p) for p in pos}) == len(idx)
    assert np.all(pos >= 0)
    assert np.all(pos < np.array([5 * dx, 6 * dy, 3 * dz]))
    n = data.draw(st.integers(0, len(idx) - 1))
    assert tuple(pos[n]) == voxel_position(spec, idx[n])


def test_default_taxonomy(tax):
    assert tax.n_s == 17
    assert tax.c_inst == 10
    assert tax.kinds[0] == "free"
    assert tax.names[tax.class_for_channel(0)] == "car"
    assert tax.names[tax.class_for_channel(9)] == "barrier"
    assert tax.label_dtype() == np.uint8


def test_thing_channels_are_a_bijection(tax):
    for ch in range(tax.c_inst):
        assert tax.channel_for_class(tax.class_for_channel(ch)) == ch


def test_taxonomy_without_things():
    tax = load_taxonomy({"classes": [{"id": 0, "name": "free", "kind": "free"},
                                     {"id": 1, "name": "road", "kind": "stuff"}]})
    assert tax.c_inst == 0


@pytest.mark.parametrize("classes", [
    [{"id": 0, "name": "free", "kind": "free"}, {"id": 1, "name": "free", "kind": "stuff"}],
    [{"id": 0, "name": "a", "kind": "stuff"}, {"id": 1, "name": "b", "kind": "thing"}],
    [{"id": 0, "name": "a", "kind": "free"}, {"id": 1, "name": "b", "kind": "free"}],
    [{"id": 0, "name": "a", "kind": "free"}, {"id": 2, "name": "b", "kind": "thing"}],
    [{"id": 0, "name": "a", "kind": "free"}, {"id": 1, "name": "b", "kind": "animal"}],
])
def test_taxonomy_validation_errors(classes):
    with pytest.raises(TaxonomyError):
        load_taxonomy({"classes": classes})


def test_taxonomy_round_trip_is_byte_identical(tax, tmp_path):
    text = dump_taxonomy(tax)
    path = tmp_path / "tax.yaml"
    path.write_text(text)
    again = load_taxonomy(path)
    assert again == tax
    assert dump_taxonomy(again) == text


def test_grid_spec_round_trip(tmp_path):
    spec = GridSpec(8, 9, 4, 0.5, 0.25, 0.2)
    text = dump_grid_spec(spec)
    assert load_grid_spec(yaml.safe_load(text)) == spec
    with pytest.raises(ValidationError):
        load_grid_spec({"h": 1})
