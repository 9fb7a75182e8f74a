"""Binary morphology with the 3D diamond (6-neighbour) structuring element.

Repeated diamond erosion is equivalent to thresholding the city-block
distance to background: ``erode^k(m) == {d > k}``.  The distance map is
computed with separable forward/backward sweeps, so shrinking a liver mask
to a target volume costs one O(N) pass instead of k erosions.  Voxels
outside the grid count as background everywhere in this module.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from alarm.errors import EmptyMask, TooSmall
from alarm.volgrid import Mask

log = logging.getLogger(__name__)

# centre voxel plus its six face neighbours
DIAMOND_OFFSETS = (
    (0, 0, 0),
    (-1, 0, 0),
    (1, 0, 0),
    (0, -1, 0),
    (0, 1, 0),
    (0, 0, -1),
    (0, 0, 1),
)


def diamond_kernel() -> np.ndarray:
    """The 3x3x3 kernel with the centre and its face neighbours set."""
    k = np.zeros((3, 3, 3), dtype=bool)
    for dx, dy, dz in DIAMOND_OFFSETS:
        k[1 + dx, 1 + dy, 1 + dz] = True
    return k


def _erode_array(a: np.ndarray) -> np.ndarray:
    p = np.pad(a, 1, constant_values=False)
    out = p[1:-1, 1:-1, 1:-1].copy()
    out &= p[:-2, 1:-1, 1:-1]
    out &= p[2:, 1:-1, 1:-1]
    out &= p[1:-1, :-2, 1:-1]
    out &= p[1:-1, 2:, 1:-1]
    out &= p[1:-1, 1:-1, :-2]
    out &= p[1:-1, 1:-1, 2:]
    return out


def erode(m: Mask) -> Mask:
    """One diamond erosion step."""
    return m.like(_erode_array(m.data))


def _sweep(d: np.ndarray, axis: int) -> None:
    # 1-D city-block transform along one axis, in place: forward then backward.
    n = d.shape[axis]
    view = np.moveaxis(d, axis, 0)
    for i in range(1, n):
        np.minimum(view[i], view[i - 1] + 1, out=view[i])
    for i in range(n - 2, -1, -1):
        np.minimum(view[i], view[i + 1] + 1, out=view[i])


def distance_array(a: np.ndarray) -> np.ndarray:
    """Exact city-block distance from each foreground voxel to the background.

    The L1 metric is a sum of per-axis terms, so three 1-D two-pass sweeps
    (one per axis) give the exact 3D transform.  A one-voxel background
    shell stands in for the grid exterior.
    """
    a = np.asarray(a, dtype=bool)
    big = np.int32(sum(a.shape) + 3)
    d = np.where(np.pad(a, 1, constant_values=False), big, np.int32(0)).astype(np.int32)
    for axis in range(3):
        _sweep(d, axis)
    return d[1:-1, 1:-1, 1:-1].copy()


@dataclass(eq=False)
class DistanceMap:
    mask: Mask
    d: np.ndarray

    @property
    def max(self) -> int:
        return int(self.d.max()) if self.d.size else 0

    def above(self, k: int) -> Mask:
        """The k-times-eroded mask."""
        return self.mask.like(self.d > k)


def distance_transform(m: Mask) -> DistanceMap:
    return DistanceMap(m, distance_array(m.data))


def iterate_erosion(m: Mask, k: int) -> Mask:
    """Naive k-fold erosion; kept as the reference for the distance path."""
    a = m.data
    for _ in range(k):
        if not a.any():
            break
        a = _erode_array(a)
    return m.like(a)


@dataclass(eq=False)
class ErosionResult:
    mask: Mask
    iterations: int
    degenerate: bool = False

    @property
    def volume_mm3(self) -> float:
        return self.mask.volume_mm3


def erode_to_volume(m: Mask, threshold_mm3: float, method: str = "distance") -> ErosionResult:
    """Erode until the remaining volume is at most ``threshold_mm3``.

    Returns the first iterate at or below the threshold together with its
    erosion count.  When that iterate is empty, the previous non-empty one
    is returned instead and ``degenerate`` is set.
    """
    if not threshold_mm3 > 0:
        raise ValueError(f"volume threshold must be positive, got {threshold_mm3}")
    vv = m.voxel_volume
    if m.count * vv <= threshold_mm3:
        raise TooSmall(
            f"mask volume {m.count * vv:.1f} mm3 does not exceed the "
            f"{threshold_mm3:g} mm3 erosion target"
        )
    if method == "distance":
        d = distance_array(m.data)
        # remaining[k] = |{d > k}|
        hist = np.bincount(d.ravel())
        remaining = m.count - np.cumsum(hist[1:])
        k = int(np.argmax(remaining * vv <= threshold_mm3)) + 1
        if remaining[k - 1] == 0:
            k -= 1
            log.warning("erosion to %g mm3 empties the mask; keeping iterate %d", threshold_mm3, k)
            return ErosionResult(m.like(d > k), k, degenerate=True)
        return ErosionResult(m.like(d > k), k)
    if method == "iterate":
        prev, k = m.data, 0
        while True:
            cur = _erode_array(prev)
            k += 1
            n = int(np.count_nonzero(cur))
            if n == 0:
                log.warning("erosion to %g mm3 empties the mask; keeping iterate %d", threshold_mm3, k - 1)
                return ErosionResult(m.like(prev), k - 1, degenerate=True)
            if n * vv <= threshold_mm3:
                return ErosionResult(m.like(cur), k)
            prev = cur
    raise ValueError(f"unknown erosion method {method!r}")


def erosion_core(m: Mask) -> Mask:
    """Last non-empty iterate of repeated erosion, i.e. the voxels at maximal depth."""
    if m.count == 0:
        raise EmptyMask("erosion core of an empty mask")
    d = distance_array(m.data)
    return m.like(d == d.max())


def centroid(m: Mask) -> tuple[float, float, float]:
    """Mean voxel index of the foreground, per axis."""
    idx = np.nonzero(m.data)
    if idx[0].size == 0:
        raise EmptyMask("centroid of an empty mask")
    return tuple(float(np.mean(i, dtype=np.float64)) for i in idx)


SIX_CONNECTED = ndimage.generate_binary_structure(3, 1)


def label_components(a: np.ndarray) -> tuple[np.ndarray, int]:
    return ndimage.label(a, structure=SIX_CONNECTED)


def largest_component(m: Mask) -> Mask:
    """Keep the largest 6-connected component.

    Ties go to the component whose lexicographically smallest voxel comes first.
    """
    if m.count == 0:
        raise EmptyMask("no foreground to select a component from")
    labels, n = label_components(m.data)
    if n == 1:
        return m
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    best = np.flatnonzero(sizes == sizes.max())
    if best.size > 1:
        # C-order flat index of an [x, y, z] array is lexicographic in (x, y, z)
        labs, first = np.unique(labels.ravel(), return_index=True)
        seeds = dict(zip(labs.tolist(), first.tolist()))
        best = min(best.tolist(), key=seeds.__getitem__)
    else:
        best = int(best[0])
    return m.like(labels == best)
