import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import liver_phantom
from oracles import flood_components
from alarm import morph
from alarm.errors import EmptySegmentation, ExternalFailed, GeometryMismatch, InvalidConfig
from alarm.segment import SegmenterConfig, dice, segment
from alarm.volgrid import Mask, Volume, write_nifti


def test_threshold_recovers_phantom(phantom55):
    vol, truth, _ = phantom55
    m = segment(vol, SegmenterConfig("threshold", (0, 100), 2.0))
    assert m.same_geometry(vol)
    assert dice(m, truth) >= 0.99
    _, n = morph.label_components(m.data)
    assert n == 1


def test_threshold_anisotropic(tmp_path):
    vol, truth, _ = liver_phantom(55.0, dims=(100, 90, 30), spacing=(0.9, 0.9, 2.5))
    m = segment(vol, SegmenterConfig("threshold", (0, 100), 3.0))
    assert dice(m, truth) >= 0.99


def test_all_background():
    v = Volume(np.full((10, 10, 10), -100.0), (1, 1, 1))
    with pytest.raises(EmptySegmentation):
        segment(v, SegmenterConfig("threshold", (0, 100)))


def test_keeps_largest_blob():
    a = np.full((30, 30, 30), -100.0)
    a[2:12, 2:12, 2:12] = 50  # 1000 voxels
    a[20:22, 20:25, 20] = 50  # 10 voxels
    comps = flood_components(a > 0)
    assert sorted(len(c) for c in comps) == [10, 1000]
    m = segment(Volume(a, (1, 1, 1)), SegmenterConfig("threshold", (0, 100), 0.0))
    assert m.count == 1000 and m.data[5, 5, 5]


def test_mask_file(tmp_path, phantom55):
    vol, truth, _ = phantom55
    write_nifti(truth, tmp_path / "m.nii")
    m = segment(vol, SegmenterConfig("mask_file", mask_path=str(tmp_path / "m.nii")))
    assert np.array_equal(m.data, truth.data)


def test_mask_file_geometry_mismatch(tmp_path, phantom55):
    vol, _, _ = phantom55
    write_nifti(Mask(np.ones((5, 5, 5)), (1, 1, 1)), tmp_path / "m.nii")
    with pytest.raises(GeometryMismatch):
        segment(vol, SegmenterConfig("mask_file", mask_path=str(tmp_path / "m.nii")))


SCRIPT = """
import sys
from alarm.volgrid import read_nifti, write_nifti, Mask
v = read_nifti(sys.argv[1])
write_nifti(Mask(v.data > 0, v.spacing, v.origin), sys.argv[2])
"""


def test_external(tmp_path, phantom55, monkeypatch):
    vol, truth, _ = phantom55
    script = tmp_path / "seg.py"
    script.write_text(SCRIPT)
    monkeypatch.setenv("ALARM_TMPDIR", str(tmp_path))
    cfg = SegmenterConfig("external", command_template=f"{sys.executable} {script} {{input}} {{output}}")
    m = segment(vol, cfg)
    assert np.array_equal(m.data, truth.data)
    # temp directories are cleaned up
    assert sorted(p.name for p in tmp_path.iterdir()) == ["seg.py"]


def test_external_nonzero_exit(phantom55):
    vol, _, _ = phantom55
    cfg = SegmenterConfig(
        "external", command_template=f"{sys.executable} -c 'import sys; sys.exit(3)' {{input}} {{output}}"
    )
    with pytest.raises(ExternalFailed):
        segment(vol, cfg)


def test_external_missing_output(phantom55):
    vol, _, _ = phantom55
    cfg = SegmenterConfig("external", command_template=f"{sys.executable} -c pass {{input}} {{output}}")
    with pytest.raises(ExternalFailed):
        segment(vol, cfg)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(source="threshold", hu_window=(100, 0)),
        dict(source="external", command_template="seg {input}"),
        dict(source="mask_file"),
        dict(source="magic"),
        dict(closing_radius_mm=-1),
    ],
)
def test_invalid_config(kwargs):
    with pytest.raises(InvalidConfig):
        SegmenterConfig(**kwargs)


class TestDice:
    def test_identical(self):
        m = Mask(np.eye(4, dtype=bool)[:, :, None].repeat(2, 2), (1, 1, 1))
        assert dice(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4, 4), bool)
        b = a.copy()
        a[0] = True
        b[3] = True
        assert dice(Mask(a, (1, 1, 1)), Mask(b, (1, 1, 1))) == 0.0

    def test_half_overlap(self):
        a = np.zeros((200, 1, 1), bool)
        b = a.copy()
        a[0:100] = True
        b[50:150] = True
        assert dice(Mask(a, (1, 1, 1)), Mask(b, (1, 1, 1))) == 0.5

    def test_both_empty(self):
        e = Mask(np.zeros((2, 2, 2)), (1, 1, 1))
        assert dice(e, e) == 1.0

    def test_geometry(self):
        with pytest.raises(GeometryMismatch):
            dice(Mask(np.ones((2, 2, 2)), (1, 1, 1)), Mask(np.ones((2, 2, 3)), (1, 1, 1)))

    @settings(max_examples=50, deadline=None)
    @given(arrays(bool, (4, 4, 4)), arrays(bool, (4, 4, 4)))
    def test_symmetric_and_identity(self, a, b):
        ma, mb = Mask(a, (1, 1, 1)), Mask(b, (1, 1, 1))
        assert dice(ma, mb) == dice(mb, ma)
        if a.any():
            assert (dice(ma, mb) == 1.0) == np.array_equal(a, b)
