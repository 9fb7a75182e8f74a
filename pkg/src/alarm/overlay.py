"""QA overlay: the periphery slice with the three circles and the center-ROI section."""

from __future__ import annotations

import math

import numpy as np

from alarm.errors import SliceOutOfRange
from alarm.volgrid import Volume

RED = (255, 0, 0)
GREEN = (0, 255, 0)


def window_to_gray(hu: np.ndarray, low: float, high: float) -> np.ndarray:
    """Linear HU window to 0..255, rounding half up and clamping outside the window."""
    g = np.floor(255.0 * (hu.astype(np.float64) - low) / (high - low) + 0.5)
    return np.clip(g, 0, 255).astype(np.uint8)


def midpoint_circle(cx: int, cy: int, r: int) -> list[tuple[int, int]]:
    """One-pixel-wide rasterised circle outline."""
    if r <= 0:
        return [(cx, cy)]
    pts = set()
    x, y, err = r, 0, 1 - r
    while x >= y:
        for px, py in ((x, y), (y, x), (-y, x), (-x, y), (-x, -y), (-y, -x), (y, -x), (x, -y)):
            pts.add((cx + px, cy + py))
        y += 1
        if err < 0:
            err += 2 * y + 1
        else:
            x -= 1
            err += 2 * (y - x) + 1
    return sorted(pts)


def section_outline(section: np.ndarray) -> np.ndarray:
    """Pixels of a 2D region that touch a non-member 4-neighbour."""
    p = np.pad(section, 1, constant_values=False)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return section & ~interior


def render(v1mm: Volume, report: dict, window=(-100.0, 200.0)) -> np.ndarray:
    """RGB image with shape (ny, nx, 3): rows run along y, columns along x."""
    nx, ny, nz = v1mm.dims
    geom = report["periphery"]["geometry"]
    z = int(geom["z_c"])
    if not 0 <= z < nz:
        raise SliceOutOfRange(f"slice {z} outside volume with {nz} slices")
    gray = window_to_gray(v1mm.data[:, :, z], *window).T
    img = np.repeat(gray[:, :, None], 3, axis=2)

    section = np.zeros((nx, ny), dtype=bool)
    for x, y in report["center_roi"].get("section_zc", []):
        if 0 <= x < nx and 0 <= y < ny:
            section[x, y] = True
    xs, ys = np.nonzero(section_outline(section))
    img[ys, xs] = GREEN

    radius_mm = float(report["config"]["circle_radius_mm"])
    r_px = int(math.floor(radius_mm / v1mm.spacing[0] + 0.5))
    for circle in report["periphery"]["circles"]:
        cx, cy = (int(math.floor(c + 0.5)) for c in circle["center"][:2])
        for x, y in midpoint_circle(cx, cy, r_px):
            if 0 <= x < nx and 0 <= y < ny:
                img[y, x] = RED
    return img


def encode_ppm(img: np.ndarray) -> bytes:
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img, dtype=np.uint8).tobytes()


def decode_ppm(buf: bytes) -> np.ndarray:
    """Minimal P6 parser (no comments), used to check our own output."""
    parts = buf.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError("not a binary PPM")
    w, h = (int(t) for t in parts[1].split())
    if int(parts[2]) != 255:
        raise ValueError("unsupported maxval")
    data = np.frombuffer(parts[3], dtype=np.uint8)
    if data.size != w * h * 3:
        raise ValueError(f"PPM payload has {data.size} bytes, expected {w * h * 3}")
    return data.reshape(h, w, 3)
