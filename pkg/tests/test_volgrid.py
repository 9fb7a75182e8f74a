import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alarm.errors import (
    BadMagic,
    DimMismatch,
    InvalidSpacing,
    NonFinite,
    ObliqueAffine,
    SidecarMismatch,
    UnsupportedDatatype,
)
from alarm.volgrid import (
    Mask,
    Volume,
    encode_nifti,
    parse_nifti,
    read_image,
    read_nifti,
    read_raw,
    resample_isotropic,
    write_nifti,
    write_raw,
)


def make_nifti(data, datatype, bitpix, pixdim=(1.0, 1.0, 1.0), slope=0.0, inter=0.0,
               magic=b"n+1\x00", sform=None, dim0=3):
    """Hand-rolled NIfTI-1 file, independent of the package encoder."""
    hdr = bytearray(352)
    struct.pack_into("<i", hdr, 0, 348)
    nx, ny, nz = data.shape
    struct.pack_into("<8h", hdr, 40, dim0, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<hh", hdr, 70, datatype, bitpix)
    struct.pack_into("<8f", hdr, 76, 1.0, *pixdim, 0, 0, 0, 0)
    struct.pack_into("<3f", hdr, 108, 352.0, slope, inter)
    if sform is not None:
        struct.pack_into("<h", hdr, 254, 1)
        struct.pack_into("<12f", hdr, 280, *np.asarray(sform, dtype=float).ravel())
    hdr[344:348] = magic
    return bytes(hdr) + data.tobytes(order="F")


def random_volume(rng, kind="volume"):
    dims = tuple(rng.integers(1, 12, size=3))
    spacing = tuple(np.float32(rng.uniform(0.3, 3.0, size=3)).tolist())
    origin = tuple(np.float32(rng.uniform(-200, 200, size=3)).tolist())
    if kind == "mask":
        return Mask(rng.random(dims) < 0.4, spacing, origin)
    return Volume(rng.normal(40, 300, size=dims).astype(np.float32), spacing, origin)


def assert_same(a, b):
    assert type(a) is type(b)
    assert a.dims == b.dims
    assert a.spacing == b.spacing
    assert a.origin == b.origin
    assert a.axis_convention == b.axis_convention
    if isinstance(a, Volume):
        assert np.array_equal(a.data.view(np.uint32), b.data.view(np.uint32))
    else:
        assert np.array_equal(a.data, b.data)


class TestNifti:
    def test_roundtrip_random_volumes(self, tmp_path, rng):
        for i in range(10):
            v = random_volume(rng)
            write_nifti(v, tmp_path / f"v{i}.nii")
            assert_same(v, read_nifti(tmp_path / f"v{i}.nii"))

    def test_mask_roundtrip_keeps_count(self, tmp_path, rng):
        m = random_volume(rng, "mask")
        write_nifti(m, tmp_path / "m.nii")
        back = read_nifti(tmp_path / "m.nii", kind="mask")
        assert back.count == m.count
        assert_same(m, back)
        # masks are stored as uint8
        assert struct.unpack_from("<h", (tmp_path / "m.nii").read_bytes(), 70)[0] == 2

    def test_zero_volume_layout(self):
        buf = encode_nifti(Volume(np.zeros((2, 2, 2)), (1, 1, 1)))
        assert len(buf) == 352 + 32
        assert struct.unpack_from("<i", buf, 0)[0] == 348
        assert struct.unpack_from("<f", buf, 108)[0] == 352.0

    def test_large_payload_size(self):
        v = Volume(np.zeros((512, 512, 100), dtype=np.float32), (0.7, 0.7, 2.5))
        assert len(encode_nifti(v)) - 352 == 512 * 512 * 100 * 4

    def test_bad_magic(self, tmp_path):
        buf = bytearray(make_nifti(np.zeros((2, 2, 2), np.float32), 16, 32))
        buf[344:348] = b"xxx\x00"
        (tmp_path / "bad.nii").write_bytes(bytes(buf))
        with pytest.raises(BadMagic):
            read_nifti(tmp_path / "bad.nii")

    def test_not_a_header(self):
        with pytest.raises(BadMagic):
            parse_nifti(b"\x00" * 400)

    def test_unsupported_datatype(self):
        buf = make_nifti(np.zeros((2, 2, 2), np.float64), 64, 64)
        with pytest.raises(UnsupportedDatatype):
            parse_nifti(buf)

    def test_truncated_payload(self):
        buf = make_nifti(np.zeros((3, 3, 3), np.float32), 16, 32)
        with pytest.raises(DimMismatch):
            parse_nifti(buf[:-4])

    def test_four_d_rejected(self):
        buf = bytearray(make_nifti(np.zeros((2, 2, 2), np.float32), 16, 32, dim0=4))
        struct.pack_into("<h", buf, 48, 3)  # dim[4] = 3 time points
        with pytest.raises(DimMismatch):
            parse_nifti(bytes(buf))

    def test_nan_rejected(self):
        a = np.zeros((2, 2, 2), np.float32)
        a[1, 1, 1] = np.nan
        with pytest.raises(NonFinite):
            parse_nifti(make_nifti(a, 16, 32))

    def test_int16_scaling(self):
        # 100 * 0.5 + 10
        a = np.full((2, 2, 2), 100, dtype="<i2")
        v = parse_nifti(make_nifti(a, 4, 16, slope=0.5, inter=10.0))
        assert np.all(v.data == 60.0)

    def test_zero_slope_means_unscaled(self):
        a = np.arange(8, dtype="<i2").reshape(2, 2, 2)
        v = parse_nifti(make_nifti(a, 4, 16, slope=0.0, inter=10.0))
        assert np.array_equal(v.data, a.astype(np.float32))

    def test_uint8_as_mask(self):
        a = np.zeros((3, 3, 3), np.uint8)
        a[1, 1, 1] = 7
        m = parse_nifti(make_nifti(a, 2, 8), kind="mask")
        assert m.count == 1 and m.data[1, 1, 1]

    def test_x_fastest_order(self):
        a = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
        v = parse_nifti(make_nifti(a, 16, 32))
        assert v.data[1, 0, 0] == a[1, 0, 0]
        assert v.data[0, 2, 3] == a[0, 2, 3]

    def test_pixdim_spacing(self):
        v = parse_nifti(make_nifti(np.zeros((2, 2, 2), np.float32), 16, 32, pixdim=(0.5, 0.75, 2.5)))
        assert v.spacing == (0.5, 0.75, 2.5)

    def test_ras_sform_is_flipped_to_lps(self):
        a = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
        sform = [[1, 0, 0, 10], [0, 1, 0, 20], [0, 0, 1, 30]]
        v = parse_nifti(make_nifti(a, 16, 32, sform=sform))
        assert np.array_equal(v.data, a[::-1, ::-1, :])
        # LPS position of new voxel 0 = RAS index (1, 2, 0) -> RAS (11, 22, 30)
        assert v.origin == (-11.0, -22.0, 30.0)

    def test_permuted_sform(self):
        a = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
        # index i -> world z, j -> -x in RAS (= +x in LPS), k -> -y in RAS (= +y in LPS)
        sform = [[0, -2, 0, 0], [0, 0, -3, 0], [1, 0, 0, 0]]
        v = parse_nifti(make_nifti(a, 16, 32, pixdim=(1, 2, 3), sform=sform))
        assert v.dims == (3, 4, 2)
        assert v.spacing == (2.0, 3.0, 1.0)
        assert v.data[2, 1, 0] == a[0, 2, 1]

    def test_oblique_rejected(self):
        c, s = math.cos(0.3), math.sin(0.3)
        sform = [[c, -s, 0, 0], [s, c, 0, 0], [0, 0, 1, 0]]
        with pytest.raises(ObliqueAffine):
            parse_nifti(make_nifti(np.zeros((2, 2, 2), np.float32), 16, 32, sform=sform))

    def test_gzip_via_read_image(self, tmp_path):
        import gzip

        v = Volume(np.arange(8, dtype=np.float32).reshape(2, 2, 2), (1, 1, 1))
        (tmp_path / "v.nii.gz").write_bytes(gzip.compress(encode_nifti(v)))
        assert_same(v, read_image(tmp_path / "v.nii.gz"))


class TestRaw:
    def test_roundtrip_random(self, tmp_path, rng):
        for i in range(10):
            v = random_volume(rng, "mask" if i % 3 == 0 else "volume")
            write_raw(v, tmp_path / f"r{i}")
            assert_same(v, read_raw(tmp_path / f"r{i}.json"))

    def _sidecar(self, tmp_path, nbytes):
        (tmp_path / "x.json").write_text(
            '{"dims": [3, 3, 3], "spacing": [1, 1, 1], "origin": [0, 0, 0], "dtype": "float32"}'
        )
        (tmp_path / "x.bin").write_bytes(b"\x00" * nbytes)

    def test_sidecar_size(self, tmp_path):
        self._sidecar(tmp_path, 108)
        v = read_raw(tmp_path / "x")
        assert isinstance(v, Volume) and v.data.size == 27

    def test_sidecar_mismatch(self, tmp_path):
        self._sidecar(tmp_path, 107)
        with pytest.raises(SidecarMismatch):
            read_raw(tmp_path / "x.bin")


class TestResample:
    def test_identity_at_target_spacing(self, rng):
        v = Volume(rng.normal(size=(7, 5, 6)), (1, 1, 1))
        out = resample_isotropic(v, 1.0)
        assert out.dims == v.dims
        assert np.max(np.abs(out.data - v.data)) == 0

    def test_dims_ceil(self):
        v = Volume(np.zeros((10, 10, 10)), (2, 2, 2))
        assert resample_isotropic(v, 1.0).dims == (20, 20, 20)
        v = Volume(np.zeros((10, 7, 3)), (0.7, 0.9, 2.5))
        assert resample_isotropic(v, 1.0).dims == (7, 7, 8)

    def test_constant_both_modes(self):
        v = Volume(np.full((5, 6, 4), 55.0), (0.8, 0.7, 2.5))
        assert np.all(resample_isotropic(v, 1.0, "trilinear").data == 55.0)
        assert np.all(resample_isotropic(v, 1.0, "nearest").data == 55.0)

    def test_trilinear_midpoint(self):
        # 2 mm -> 1 mm: output voxel j samples input index j/2 - 1/4
        a = np.zeros((4, 1, 1))
        a[:, 0, 0] = [0, 10, 20, 30]
        out = resample_isotropic(Volume(a, (2, 1, 1)), 1.0).data[:, 0, 0]
        expected = [0.0, 2.5, 7.5, 12.5, 17.5, 22.5, 27.5, 30.0]
        assert np.allclose(out, expected)

    def test_mask_needs_nearest(self):
        m = Mask(np.ones((2, 2, 2)), (2, 2, 2))
        with pytest.raises(ValueError):
            resample_isotropic(m, 1.0, "trilinear")
        out = resample_isotropic(m, 1.0)
        assert out.data.dtype == bool and out.count == 64

    def test_invalid_spacing(self):
        with pytest.raises(InvalidSpacing):
            resample_isotropic(Volume(np.zeros((2, 2, 2)), (1, 1, 1)), 0.0)

    @settings(max_examples=40, deadline=None)
    @given(
        dims=st.tuples(*[st.integers(1, 9)] * 3),
        spacing=st.tuples(*[st.floats(0.3, 3.0)] * 3),
        target=st.floats(0.5, 2.0),
        seed=st.integers(0, 2**16),
    )
    def test_properties(self, dims, spacing, target, seed):
        r = np.random.default_rng(seed)
        m = Mask(r.random(dims) < 0.5, spacing)
        out = resample_isotropic(m, target)
        assert set(np.unique(out.data)) <= {False, True}
        for n, s, k in zip(dims, spacing, out.dims):
            assert k * target >= n * s - 1e-9
            assert k * target < n * s + target
        c = Volume(np.full(dims, -37.5), spacing)
        assert np.all(resample_isotropic(c, target).data == np.float32(-37.5))
