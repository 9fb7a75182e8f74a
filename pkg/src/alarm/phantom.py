"""Synthetic abdominal phantoms with known ground truth.

An axis-aligned ellipsoid liver on a uniform background, optionally crossed
by cylindrical vessels, plus seeded Gaussian noise.  Vessels override the
liver intensity but stay inside the ground-truth mask, like the vessels a
whole-liver segmentation would include.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from alarm.errors import InvalidSpec
from alarm.volgrid import Mask, Volume

NOISE_ALGORITHM = "numpy.random.Generator(PCG64).normal"


@dataclass
class Vessel:
    start_mm: tuple[float, float, float]
    end_mm: tuple[float, float, float]
    radius_mm: float
    hu: float = 100.0


@dataclass
class PhantomSpec:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    liver_center_mm: tuple[float, float, float] | None = None
    liver_semi_axes_mm: tuple[float, float, float] = (40.0, 30.0, 25.0)
    liver_hu: float = 55.0
    background_hu: float = -100.0
    vessels: list[Vessel] = field(default_factory=list)
    noise_sigma: float = 0.0
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PhantomSpec":
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise InvalidSpec(f"unknown phantom keys: {sorted(unknown)}")
        try:
            d["vessels"] = [v if isinstance(v, Vessel) else Vessel(**v) for v in d.get("vessels", [])]
            spec = cls(**d)
        except TypeError as exc:
            raise InvalidSpec(str(exc)) from exc
        spec.validate()
        return spec

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def extent_mm(self) -> np.ndarray:
        return np.asarray(self.dims) * np.asarray(self.spacing)

    def center(self) -> np.ndarray:
        if self.liver_center_mm is not None:
            return np.asarray(self.liver_center_mm, dtype=np.float64)
        # geometric centre of the voxel-centre lattice
        return np.asarray(self.origin) + (np.asarray(self.dims) - 1) * np.asarray(self.spacing) / 2

    def validate(self) -> None:
        try:
            dims = [int(n) for n in self.dims]
            spacing = [float(s) for s in self.spacing]
            axes = [float(a) for a in self.liver_semi_axes_mm]
        except (TypeError, ValueError) as exc:
            raise InvalidSpec(str(exc)) from exc
        if len(dims) != 3 or min(dims) <= 0:
            raise InvalidSpec(f"dims must be three positive integers, got {self.dims}")
        if len(spacing) != 3 or min(spacing) <= 0:
            raise InvalidSpec(f"spacing must be three positive values, got {self.spacing}")
        if len(axes) != 3 or min(axes) <= 0:
            raise InvalidSpec(f"semi-axes must be positive, got {self.liver_semi_axes_mm}")
        if not self.noise_sigma >= 0:
            raise InvalidSpec("noise_sigma must be non-negative")
        lo = np.asarray(self.origin) - 0.5 * np.asarray(spacing)
        hi = lo + self.extent_mm()
        for v in self.vessels:
            if not v.radius_mm > 0:
                raise InvalidSpec("vessel radius must be positive")
            for p in (v.start_mm, v.end_mm):
                if np.any(np.asarray(p) < lo) or np.any(np.asarray(p) > hi):
                    raise InvalidSpec(f"vessel endpoint {p} lies outside the volume")
            if np.allclose(v.start_mm, v.end_mm):
                raise InvalidSpec("vessel endpoints coincide")


def _coords(spec: PhantomSpec) -> list[np.ndarray]:
    return [
        (o + np.arange(n) * s).reshape([-1 if i == a else 1 for i in range(3)])
        for a, (o, n, s) in enumerate(zip(spec.origin, spec.dims, spec.spacing))
    ]


def _in_cylinder(coords, v: Vessel) -> np.ndarray:
    a = np.asarray(v.start_mm, dtype=np.float64)
    b = np.asarray(v.end_mm, dtype=np.float64)
    u = b - a
    length2 = float(u @ u)
    rel = [c - a[i] for i, c in enumerate(coords)]
    t = sum(r * u[i] for i, r in enumerate(rel)) / length2
    # squared distance to the axis line
    d2 = sum((r - t * u[i]) ** 2 for i, r in enumerate(rel))
    return (t >= 0) & (t <= 1) & (d2 <= v.radius_mm**2 + 1e-9)


def generate(spec: PhantomSpec) -> tuple[Volume, Mask, dict]:
    """Render the phantom; returns (volume, ground-truth liver mask, metadata)."""
    spec.validate()
    coords = _coords(spec)
    c = spec.center()
    r = np.asarray(spec.liver_semi_axes_mm, dtype=np.float64)
    q = sum(((x - c[i]) / r[i]) ** 2 for i, x in enumerate(coords))
    liver = np.broadcast_to(q <= 1.0 + 1e-12, tuple(spec.dims)).copy()
    if not liver.any():
        raise InvalidSpec("ellipsoid contains no voxel centres")

    data = np.full(tuple(spec.dims), spec.background_hu, dtype=np.float64)
    data[liver] = spec.liver_hu
    vessel = np.zeros(tuple(spec.dims), dtype=bool)
    for v in spec.vessels:
        inside = np.broadcast_to(_in_cylinder(coords, v), tuple(spec.dims))
        data[inside] = v.hu
        vessel |= inside
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        data += rng.normal(0.0, spec.noise_sigma, size=data.shape)

    meta = {
        "spec": spec.to_dict(),
        "noise_algorithm": NOISE_ALGORITHM,
        "liver_center_mm": c.tolist(),
        "voxel_volume_mm3": float(np.prod(spec.spacing)),
        "counts": {
            "mask": int(liver.sum()),
            "liver_parenchyma": int((liver & ~vessel).sum()),
            "vessel_in_mask": int((liver & vessel).sum()),
            "vessel_outside_mask": int((~liver & vessel).sum()),
            "background": int((~liver & ~vessel).sum()),
        },
    }
    vol = Volume(data, spec.spacing, spec.origin)
    mask = Mask(liver, spec.spacing, spec.origin)
    return vol, mask, meta
