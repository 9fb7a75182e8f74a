"""Liver attenuation ROIs.

Two measurements are taken on a 1 mm isotropic grid:

* center-ROI: the liver mask eroded (diamond kernel) until at most
  ``volume_threshold_mm3`` remains; its mean HU.
* periphery-ROI: three in-plane circles on the axial slice through the
  deepest point of the liver, placed along the posterior, lateral (patient
  right) and anterior rays at a fraction ``alpha`` of the way between the
  centre and the mask boundary.

Coordinates are voxel indices in the LPS working grid (+y posterior,
-x patient right).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from alarm import morph
from alarm.agree import classify
from alarm.errors import (
    AlarmError,
    DegenerateRay,
    EmptyCircle,
    InvalidConfig,
    PipelineError,
    RayEscaped,
)
from alarm.volgrid import Mask, Volume, resample_isotropic

WORKING_SPACING_MM = 1.0


@dataclass
class RoiConfig:
    alpha: float = 1.0 / 3.0
    circle_radius_mm: float = 7.0
    volume_threshold_mm3: float = 1000.0
    hu_cutoff: float = 40.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidConfig(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.circle_radius_mm > 0:
            raise InvalidConfig("circle_radius_mm must be positive")
        if not self.volume_threshold_mm3 > 0:
            raise InvalidConfig("volume_threshold_mm3 must be positive")
        if not math.isfinite(self.hu_cutoff):
            raise InvalidConfig("hu_cutoff must be finite")


@dataclass(eq=False)
class CenterRoi:
    mean_hu: float
    volume_mm3: float
    erosion_iterations: int
    degeneracy_warning: bool
    voxel_count: int
    mask: Mask = field(repr=False)


@dataclass
class PeripheryGeometry:
    p_c: tuple[float, float, float]
    z_c: int
    p_b1: tuple[int, int, int]
    p_b2: tuple[int, int, int]
    p_b3: tuple[int, int, int]
    p_1: tuple[float, float, float]
    p_2: tuple[float, float, float]
    p_3: tuple[float, float, float]
    alpha: float

    @property
    def centers(self):
        return (self.p_1, self.p_2, self.p_3)


@dataclass
class CircleMeasurement:
    center: tuple[float, float, float]
    mean_hu: float
    outside_liver_fraction: float
    voxel_count: int


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def circle_centers(p_c, y_1: float, x_2: float, y_3: float, alpha: float, z_c: float | None = None):
    """Circle centres from the centre point and the three boundary coordinates.

    ``y_1`` is the posterior boundary, ``x_2`` the lateral one and ``y_3``
    the anterior one.  The posterior circle sits ``alpha`` of the way out,
    the other two ``1 - alpha`` of the way out.
    """
    x_c, y_c = float(p_c[0]), float(p_c[1])
    z = float(p_c[2] if z_c is None else z_c)
    p_1 = (x_c, y_c - (y_c - y_1) * alpha, z)
    p_2 = (x_c - (x_c - x_2) * (1.0 - alpha), y_c, z)
    p_3 = (x_c, y_c + (y_3 - y_c) * (1.0 - alpha), z)
    return p_1, p_2, p_3


def measure_center(v1mm: Volume, m1mm: Mask, cfg: RoiConfig, method: str = "distance") -> CenterRoi:
    v1mm.check_geometry(m1mm)
    res = morph.erode_to_volume(m1mm, cfg.volume_threshold_mm3, method=method)
    vals = v1mm.data[res.mask.data]
    return CenterRoi(
        mean_hu=float(np.mean(vals, dtype=np.float64)),
        volume_mm3=res.volume_mm3,
        erosion_iterations=res.iterations,
        degeneracy_warning=res.degenerate,
        voxel_count=int(vals.size),
        mask=res.mask,
    )


def locate_periphery_geometry(
    m1mm: Mask, cfg: RoiConfig, center_mask: Mask | None = None
) -> PeripheryGeometry:
    if center_mask is None:
        center_mask = morph.erode_to_volume(m1mm, cfg.volume_threshold_mm3).mask
    p_c = morph.centroid(morph.erosion_core(center_mask))
    x_c, y_c, zf = p_c
    z_c = _round_half_up(zf)
    xs, ys = _round_half_up(x_c), _round_half_up(y_c)
    sl = m1mm.data[:, :, z_c]
    if not sl[xs, ys]:
        raise RayEscaped(f"ray start ({xs}, {ys}, {z_c}) is outside the liver mask")

    # the farthest foreground voxel along each ray is its boundary point
    post = np.flatnonzero(sl[xs, ys:])
    lat = np.flatnonzero(sl[: xs + 1, ys])
    ant = np.flatnonzero(sl[xs, : ys + 1])
    y_1 = ys + int(post[-1])
    x_2 = int(lat[0])
    y_3 = int(ant[0])
    for name, b, s in (("posterior", y_1, ys), ("lateral", x_2, xs), ("anterior", y_3, ys)):
        if b == s:
            raise DegenerateRay(f"{name} boundary coincides with the centre voxel")

    p_1, p_2, p_3 = circle_centers(p_c, y_1, x_2, y_3, cfg.alpha, z_c)
    return PeripheryGeometry(
        p_c=p_c,
        z_c=z_c,
        p_b1=(xs, y_1, z_c),
        p_b2=(x_2, ys, z_c),
        p_b3=(xs, y_3, z_c),
        p_1=p_1,
        p_2=p_2,
        p_3=p_3,
        alpha=cfg.alpha,
    )


def circle_members(shape_xy, spacing_xy, center_xy, radius_mm: float) -> tuple[np.ndarray, np.ndarray]:
    """Integer (x, y) voxel indices whose centres lie within ``radius_mm`` of ``center_xy``."""
    nx, ny = shape_xy
    sx, sy = spacing_xy
    cx, cy = center_xy
    if not (0 <= cx <= nx - 1 and 0 <= cy <= ny - 1):
        raise ValueError(f"circle centre ({cx:.3f}, {cy:.3f}) lies outside the slice")
    rx, ry = radius_mm / sx, radius_mm / sy
    x0, x1 = max(0, math.ceil(cx - rx)), min(nx - 1, math.floor(cx + rx))
    y0, y1 = max(0, math.ceil(cy - ry)), min(ny - 1, math.floor(cy + ry))
    xx, yy = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1), indexing="ij")
    d2 = ((xx - cx) * sx) ** 2 + ((yy - cy) * sy) ** 2
    inside = d2 <= radius_mm * radius_mm + 1e-9
    return xx[inside], yy[inside]


def measure_circle(
    v1mm: Volume, m1mm: Mask, center, radius_mm: float, z: int
) -> CircleMeasurement:
    """Mean HU over every voxel in the circle (not clipped to the liver)."""
    if not 0 <= z < v1mm.dims[2]:
        raise ValueError(f"slice {z} outside volume with {v1mm.dims[2]} slices")
    xs, ys = circle_members(v1mm.dims[:2], v1mm.spacing[:2], center[:2], radius_mm)
    if xs.size == 0:
        raise EmptyCircle(f"no voxel centres within {radius_mm} mm of {center[:2]}")
    vals = v1mm.data[xs, ys, z]
    outside = np.count_nonzero(~m1mm.data[xs, ys, z])
    return CircleMeasurement(
        center=(float(center[0]), float(center[1]), float(z)),
        mean_hu=float(np.mean(vals, dtype=np.float64)),
        outside_liver_fraction=outside / xs.size,
        voxel_count=int(xs.size),
    )


@dataclass(eq=False)
class MeasurementReport:
    center_roi: CenterRoi
    geometry: PeripheryGeometry
    circles: list[CircleMeasurement]
    whole_liver_mean_hu: float
    config: RoiConfig
    working_grid: dict
    cleanup_removed_voxels: int
    provenance: dict = field(default_factory=dict)

    @property
    def mean_of_three_hu(self) -> float:
        return float(sum(c.mean_hu for c in self.circles) / len(self.circles))

    @property
    def nafld_center(self) -> bool:
        return classify(self.center_roi.mean_hu, self.config.hu_cutoff)

    @property
    def nafld_periphery(self) -> bool:
        return classify(self.mean_of_three_hu, self.config.hu_cutoff)

    def center_section(self) -> list[list[int]]:
        """(x, y) voxels of the center-ROI on the periphery slice, for overlays."""
        xs, ys = np.nonzero(self.center_roi.mask.data[:, :, self.geometry.z_c])
        return [[int(x), int(y)] for x, y in zip(xs, ys)]

    def to_dict(self) -> dict:
        g = self.geometry
        c = self.center_roi
        return {
            "center_roi": {
                "mean_hu": c.mean_hu,
                "volume_mm3": c.volume_mm3,
                "erosion_iterations": c.erosion_iterations,
                "degeneracy_warning": c.degeneracy_warning,
                "voxel_count": c.voxel_count,
                "section_zc": self.center_section(),
            },
            "periphery": {
                "geometry": {
                    "p_c": list(g.p_c),
                    "z_c": g.z_c,
                    "p_b1": list(g.p_b1),
                    "p_b2": list(g.p_b2),
                    "p_b3": list(g.p_b3),
                    "p_1": list(g.p_1),
                    "p_2": list(g.p_2),
                    "p_3": list(g.p_3),
                },
                "circles": [
                    {
                        "center": list(ci.center),
                        "mean_hu": ci.mean_hu,
                        "outside_liver_fraction": ci.outside_liver_fraction,
                        "voxel_count": ci.voxel_count,
                    }
                    for ci in self.circles
                ],
                "mean_of_three_hu": self.mean_of_three_hu,
            },
            "whole_liver_mean_hu": self.whole_liver_mean_hu,
            "nafld_center": self.nafld_center,
            "nafld_periphery": self.nafld_periphery,
            "config": {
                "alpha": self.config.alpha,
                "circle_radius_mm": self.config.circle_radius_mm,
                "volume_threshold_mm3": self.config.volume_threshold_mm3,
                "hu_cutoff": self.config.hu_cutoff,
            },
            "working_grid": self.working_grid,
            "cleanup_removed_voxels": self.cleanup_removed_voxels,
            "provenance": self.provenance,
        }


class _Stage:
    """Re-raise package errors tagged with the pipeline stage that failed."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, (AlarmError, ValueError)) and not isinstance(exc, PipelineError):
            raise PipelineError(self.name, exc) from exc
        return False


def to_working_grid(v: Volume, m: Mask) -> tuple[Volume, Mask]:
    t = WORKING_SPACING_MM
    if all(abs(s - t) <= 1e-9 for s in v.spacing):
        return v, m
    return resample_isotropic(v, t, "trilinear"), resample_isotropic(m, t, "nearest")


def measure(v: Volume, m: Mask, cfg: RoiConfig | None = None, provenance: dict | None = None) -> MeasurementReport:
    """Full ROI pipeline for a volume and its whole-liver mask at native resolution."""
    cfg = cfg or RoiConfig()
    with _Stage("geometry"):
        v.check_geometry(m)
    with _Stage("resample"):
        v1, m1 = to_working_grid(v, m)
    with _Stage("cleanup"):
        before = m1.count
        m1 = morph.largest_component(m1)
        removed = before - m1.count
    with _Stage("center_roi"):
        center = measure_center(v1, m1, cfg)
    with _Stage("periphery_roi"):
        geom = locate_periphery_geometry(m1, cfg, center_mask=center.mask)
        circles = [
            measure_circle(v1, m1, p, cfg.circle_radius_mm, geom.z_c) for p in geom.centers
        ]
    whole = float(np.mean(v1.data[m1.data], dtype=np.float64))
    return MeasurementReport(
        center_roi=center,
        geometry=geom,
        circles=circles,
        whole_liver_mean_hu=whole,
        config=cfg,
        working_grid=v1.geometry(),
        cleanup_removed_voxels=int(removed),
        provenance=dict(provenance or {}),
    )
