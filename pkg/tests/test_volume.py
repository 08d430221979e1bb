import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nodulesynth.errors import FormatError
from nodulesynth.volume import (CropRegion, SemanticLayout, VoxelVolume, crop,
                                hu_to_normalized, make_phantom, paste,
                                read_layout, read_volume, resample_isotropic,
                                write_layout, write_volume)

dims_st = st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6))


def _random_f32(rng, dims):
    return rng.standard_normal(dims).astype(np.float32).astype(np.float64)


# -- dataclass validation ----------------------------------------------------


def test_volume_validation():
    with pytest.raises(ValueError):
        VoxelVolume(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        VoxelVolume(np.full((2, 2, 2), np.nan))
    with pytest.raises(ValueError):
        VoxelVolume(np.zeros((2, 2, 2)), spacing=(1.0, 0.0, 1.0))


def test_layout_validation():
    with pytest.raises(ValueError):
        SemanticLayout(np.full((2, 2, 2), 3, dtype=np.uint8))
    with pytest.raises(ValueError):
        SemanticLayout(np.zeros((2, 2), dtype=np.uint8))


def test_volume_data_readonly(small_volume):
    with pytest.raises(ValueError):
        small_volume.data[0, 0, 0] = 1.0


def test_crop_region_validation():
    with pytest.raises(ValueError):
        CropRegion((-1, 0, 0), (2, 2, 2))
    with pytest.raises(ValueError):
        CropRegion((0, 0, 0), (0, 2, 2))
    r = CropRegion((1, 2, 3), (2, 2, 2))
    assert r.slices() == (slice(1, 3), slice(2, 4), slice(3, 5))
    r.validate_within((3, 4, 5))  # exact fit is allowed
    with pytest.raises(ValueError):
        r.validate_within((3, 4, 4))


# -- crop / paste ------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_crop_paste_identity(seed):
    rng = np.random.default_rng(seed)
    dims = tuple(int(v) for v in rng.integers(3, 9, size=3))
    v = VoxelVolume(_random_f32(rng, dims))
    size = tuple(int(rng.integers(1, d + 1)) for d in dims)
    origin = tuple(int(rng.integers(0, d - s + 1))
                   for d, s in zip(dims, size))
    r = CropRegion(origin, size)
    patch = crop(v, r)
    assert patch.dims == size
    # Pasting the crop back is a bit-exact no-op.
    np.testing.assert_array_equal(paste(v, patch, r).data, v.data)


def test_paste_changes_only_region(rng):
    v = VoxelVolume(rng.standard_normal((6, 6, 6)))
    r = CropRegion((1, 2, 3), (2, 2, 2))
    patch = VoxelVolume(np.zeros((2, 2, 2)))
    out = paste(v, patch, r)
    outside = np.ones(v.dims, dtype=bool)
    outside[r.slices()] = False
    np.testing.assert_array_equal(out.data[outside], v.data[outside])
    assert np.all(out.data[r.slices()] == 0.0)


def test_paste_dims_mismatch(rng):
    v = VoxelVolume(rng.standard_normal((6, 6, 6)))
    with pytest.raises(ValueError):
        paste(v, VoxelVolume(np.zeros((3, 3, 3))), CropRegion((0, 0, 0), (2, 2, 2)))


def test_crop_layout(small_layout):
    r = CropRegion((2, 2, 2), (3, 3, 3))
    patch = crop(small_layout, r)
    assert isinstance(patch, SemanticLayout)
    np.testing.assert_array_equal(patch.labels, small_layout.labels[r.slices()])


# -- binary I/O --------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(dims=dims_st, seed=st.integers(0, 2 ** 32 - 1))
def test_volume_roundtrip_bit_exact(tmp_path_factory, dims, seed):
    rng = np.random.default_rng(seed)
    path = tmp_path_factory.mktemp("io") / "v.ldpv"
    spacing = tuple(float(np.float32(s)) for s in rng.uniform(0.3, 3.0, 3))
    v = VoxelVolume(_random_f32(rng, dims), spacing)
    write_volume(v, path)
    v2 = read_volume(path)
    assert v2.dims == v.dims
    np.testing.assert_array_equal(v2.data, v.data)
    assert v2.spacing == v.spacing


@settings(max_examples=50, deadline=None)
@given(dims=dims_st, seed=st.integers(0, 2 ** 32 - 1))
def test_layout_roundtrip_bit_exact(tmp_path_factory, dims, seed):
    rng = np.random.default_rng(seed)
    path = tmp_path_factory.mktemp("io") / "l.ldpv"
    lay = SemanticLayout(rng.integers(0, 3, size=dims).astype(np.uint8))
    write_layout(lay, path)
    lay2 = read_layout(path)
    np.testing.assert_array_equal(lay2.labels, lay.labels)


def test_single_voxel_roundtrip(tmp_path):
    v = VoxelVolume(np.array([[[0.25]]]))
    write_volume(v, tmp_path / "one.ldpv")
    np.testing.assert_array_equal(read_volume(tmp_path / "one.ldpv").data, v.data)


def test_read_truncated_header(tmp_path):
    p = tmp_path / "bad.ldpv"
    p.write_bytes(b"LDPV\x01")
    with pytest.raises(FormatError, match="truncated"):
        read_volume(p)


def test_read_bad_magic(tmp_path, rng):
    p = tmp_path / "v.ldpv"
    write_volume(VoxelVolume(rng.standard_normal((2, 2, 2))), p)
    raw = bytearray(p.read_bytes())
    raw[:4] = b"XXXX"
    p.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="offset 0"):
        read_volume(p)


def test_read_bad_version(tmp_path, rng):
    p = tmp_path / "v.ldpv"
    write_volume(VoxelVolume(rng.standard_normal((2, 2, 2))), p)
    raw = bytearray(p.read_bytes())
    raw[4] = 9
    p.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        read_volume(p)


def test_read_dtype_mismatch(tmp_path, rng):
    p = tmp_path / "v.ldpv"
    write_volume(VoxelVolume(rng.standard_normal((2, 2, 2))), p)
    with pytest.raises(FormatError, match="dtype"):
        read_layout(p)


def test_read_payload_size_mismatch(tmp_path, rng):
    p = tmp_path / "v.ldpv"
    write_volume(VoxelVolume(rng.standard_normal((2, 2, 2))), p)
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(FormatError, match="payload size mismatch"):
        read_volume(p)


# -- misc --------------------------------------------------------------------


def test_hu_to_normalized_window():
    assert hu_to_normalized(-1000.0) == -1.0
    assert hu_to_normalized(400.0) == 1.0
    assert hu_to_normalized(-300.0) == pytest.approx(0.0)
    # Values outside the window clip.
    assert hu_to_normalized(-2000.0) == -1.0
    assert hu_to_normalized(3000.0) == 1.0


def test_resample_identity(rng):
    v = VoxelVolume(rng.standard_normal((5, 5, 5)), (1.0, 1.0, 1.0))
    assert resample_isotropic(v, 1.0) is v


def test_resample_scales_dims(rng):
    v = VoxelVolume(rng.standard_normal((8, 8, 8)), (2.0, 2.0, 2.0))
    out = resample_isotropic(v, 1.0)
    assert out.dims == (16, 16, 16)
    assert out.spacing == (1.0, 1.0, 1.0)
    # Samples at original voxel locations are preserved by trilinear interp.
    np.testing.assert_allclose(out.data[::2, ::2, ::2], v.data, atol=1e-12)


def test_resample_layout_nearest(small_layout):
    lay = SemanticLayout(small_layout.labels, (2.0, 2.0, 2.0))
    out = resample_isotropic(lay, 1.0)
    assert out.dims == (16, 16, 16)
    assert set(np.unique(out.labels)) <= {0, 1, 2}
    np.testing.assert_array_equal(out.labels[::2, ::2, ::2], lay.labels)


def test_make_phantom_deterministic():
    v1, l1 = make_phantom(42, (20, 20, 20))
    v2, l2 = make_phantom(42, (20, 20, 20))
    np.testing.assert_array_equal(v1.data, v2.data)
    np.testing.assert_array_equal(l1.labels, l2.labels)
    assert l1.lung_mask().sum() > 0
    assert not l1.nodule_mask().any()
    assert v1.data.min() >= -1.0 and v1.data.max() <= 1.0


def test_make_phantom_roundtrips_f32(tmp_path):
    v, _ = make_phantom(3, (16, 16, 16))
    write_volume(v, tmp_path / "p.ldpv")
    np.testing.assert_array_equal(read_volume(tmp_path / "p.ldpv").data, v.data)


def test_make_phantom_validation():
    with pytest.raises(ValueError):
        make_phantom(0, (8, 8, 8))
