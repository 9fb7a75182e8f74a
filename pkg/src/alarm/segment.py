"""Whole-liver mask sources.

The measurement pipeline only needs a binary liver mask on the volume's
grid.  Three sources are supported: a precomputed mask file, a simple HU
window segmenter (good enough for phantoms), and an external command that
exchanges NIfTI files with us.
"""

from __future__ import annotations

import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from alarm import morph
from alarm.errors import (
    AlarmError,
    EmptyMask,
    EmptySegmentation,
    ExternalFailed,
    GeometryMismatch,
    InvalidConfig,
)
from alarm.volgrid import Mask, Volume, read_image, write_nifti

SOURCES = ("mask_file", "threshold", "external")


@dataclass
class SegmenterConfig:
    source: str = "threshold"
    hu_window: tuple[float, float] = (0.0, 100.0)
    closing_radius_mm: float = 2.0
    command_template: str = ""
    mask_path: str | None = None
    timeout_s: float | None = None

    def __post_init__(self):
        self.hu_window = tuple(float(v) for v in self.hu_window)
        self.validate()

    def validate(self) -> None:
        if self.source not in SOURCES:
            raise InvalidConfig(f"segmenter source must be one of {SOURCES}, got {self.source!r}")
        if len(self.hu_window) != 2:
            raise InvalidConfig("hu_window needs [low, high]")
        if self.source == "threshold" and not self.hu_window[0] < self.hu_window[1]:
            raise InvalidConfig(f"hu_window low must be below high, got {self.hu_window}")
        if not self.closing_radius_mm >= 0:
            raise InvalidConfig("closing_radius_mm must be non-negative")
        if self.source == "external":
            for ph in ("{input}", "{output}"):
                if ph not in self.command_template:
                    raise InvalidConfig(f"command_template lacks the {ph} placeholder")
        if self.source == "mask_file" and not self.mask_path:
            raise InvalidConfig("mask_file source needs mask_path")


def ball(radius_mm: float, spacing) -> np.ndarray:
    """Voxel offsets within ``radius_mm`` of the centre, honouring anisotropic spacing."""
    half = [int(np.floor(radius_mm / s)) for s in spacing]
    grids = np.meshgrid(*[np.arange(-h, h + 1) * s for h, s in zip(half, spacing)], indexing="ij")
    return sum(g * g for g in grids) <= radius_mm * radius_mm + 1e-9


def close(a: np.ndarray, radius_mm: float, spacing) -> np.ndarray:
    """Binary closing with a ball; padding keeps the grid edge from eroding the result."""
    se = ball(radius_mm, spacing)
    if se.sum() <= 1:
        return a
    pad = [(h, h) for h in (np.array(se.shape) // 2)]
    p = np.pad(a, pad, constant_values=False)
    p = ndimage.binary_dilation(p, structure=se)
    p = ndimage.binary_erosion(p, structure=se, border_value=0)
    sl = tuple(slice(lo, p.shape[i] - hi) for i, (lo, hi) in enumerate(pad))
    return p[sl]


def threshold_segment(v: Volume, hu_window=(0.0, 100.0), closing_radius_mm: float = 2.0) -> Mask:
    lo, hi = hu_window
    a = (v.data >= lo) & (v.data <= hi)
    if closing_radius_mm > 0:
        a = close(a, closing_radius_mm, v.spacing)
    try:
        return morph.largest_component(Mask(a, v.spacing, v.origin))
    except EmptyMask:
        raise EmptySegmentation(f"no voxels within HU window [{lo:g}, {hi:g}]") from None


def load_mask(path: str | Path, like: Volume) -> Mask:
    m = read_image(path, kind="mask")
    if not like.same_geometry(m):
        raise GeometryMismatch(
            f"mask {path} has dims {m.dims} @ {m.spacing}, volume has {like.dims} @ {like.spacing}"
        )
    return Mask(m.data, like.spacing, like.origin)


def _tmp_root() -> str | None:
    return os.environ.get("ALARM_TMPDIR") or None


def external_segment(v: Volume, command_template: str, timeout_s: float | None = None) -> Mask:
    """Run ``command_template`` with ``{input}``/``{output}`` NIfTI paths and read its mask."""
    with tempfile.TemporaryDirectory(prefix="alarm-seg-", dir=_tmp_root()) as tmp:
        inp = Path(tmp) / "volume.nii"
        out = Path(tmp) / "mask.nii"
        write_nifti(v, inp)
        argv = [
            tok.replace("{input}", str(inp)).replace("{output}", str(out))
            for tok in shlex.split(command_template)
        ]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout_s)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ExternalFailed(f"could not run segmenter: {exc}") from exc
        if proc.returncode != 0:
            tail = (proc.stderr or "").strip().splitlines()[-3:]
            raise ExternalFailed(f"segmenter exited {proc.returncode}: {' | '.join(tail)}")
        try:
            return load_mask(out, v)
        except GeometryMismatch:
            raise
        except AlarmError as exc:
            raise ExternalFailed(f"unreadable segmenter output: {exc}") from exc


def segment(v: Volume, cfg: SegmenterConfig) -> Mask:
    cfg.validate()
    if cfg.source == "mask_file":
        m = load_mask(cfg.mask_path, v)
    elif cfg.source == "threshold":
        m = threshold_segment(v, cfg.hu_window, cfg.closing_radius_mm)
    else:
        m = external_segment(v, cfg.command_template, cfg.timeout_s)
    if m.count == 0:
        raise EmptySegmentation(f"{cfg.source} produced an empty mask")
    return m


def dice(a: Mask, b: Mask) -> float:
    a.check_geometry(b)
    na, nb = a.count, b.count
    if na + nb == 0:
        return 1.0
    inter = int(np.count_nonzero(a.data & b.data))
    return 2.0 * inter / (na + nb)
