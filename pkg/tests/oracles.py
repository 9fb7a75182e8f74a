"""Slow, obviously-correct reference implementations used only by the tests."""

from collections import deque
from itertools import product

import numpy as np

FACE = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))


def brute_erode(a):
    """Apply the diamond kernel voxel by voxel; outside the grid is background."""
    nx, ny, nz = a.shape
    out = np.zeros_like(a, dtype=bool)
    for x, y, z in product(range(nx), range(ny), range(nz)):
        if not a[x, y, z]:
            continue
        keep = True
        for dx, dy, dz in FACE:
            u, v, w = x + dx, y + dy, z + dz
            if not (0 <= u < nx and 0 <= v < ny and 0 <= w < nz) or not a[u, v, w]:
                keep = False
                break
        out[x, y, z] = keep
    return out


def bfs_distance(a):
    """Multi-source BFS from every background voxel, including a shell around the grid."""
    a = np.asarray(a, dtype=bool)
    p = np.pad(a, 1, constant_values=False)
    dist = np.full(p.shape, -1, dtype=np.int64)
    q = deque()
    for idx in zip(*np.nonzero(~p)):
        dist[idx] = 0
        q.append(idx)
    while q:
        x, y, z = q.popleft()
        for dx, dy, dz in FACE:
            u, v, w = x + dx, y + dy, z + dz
            if 0 <= u < p.shape[0] and 0 <= v < p.shape[1] and 0 <= w < p.shape[2] and dist[u, v, w] < 0:
                dist[u, v, w] = dist[x, y, z] + 1
                q.append((u, v, w))
    return dist[1:-1, 1:-1, 1:-1]


def flood_components(a):
    """List of 6-connected components as sets of voxel tuples, in scan order of their seeds."""
    a = np.asarray(a, dtype=bool)
    seen = np.zeros_like(a)
    comps = []
    for seed in product(*(range(n) for n in a.shape)):
        if not a[seed] or seen[seed]:
            continue
        comp = {seed}
        seen[seed] = True
        q = deque([seed])
        while q:
            x, y, z = q.popleft()
            for dx, dy, dz in FACE:
                n = (x + dx, y + dy, z + dz)
                if all(0 <= n[i] < a.shape[i] for i in range(3)) and a[n] and not seen[n]:
                    seen[n] = True
                    comp.add(n)
                    q.append(n)
        comps.append(comp)
    return comps


def disc_points(cx, cy, r):
    """Integer lattice points within distance r of (cx, cy)."""
    pts = []
    for i in range(int(np.floor(cx - r)) - 1, int(np.ceil(cx + r)) + 2):
        for j in range(int(np.floor(cy - r)) - 1, int(np.ceil(cy + r)) + 2):
            if (i - cx) ** 2 + (j - cy) ** 2 <= r * r:
                pts.append((i, j))
    return pts


def random_blobs(rng, shape=(32, 32, 32), n_balls=None):
    """Union of random balls and boxes: shapes that survive several erosions."""
    a = np.zeros(shape, dtype=bool)
    grid = np.indices(shape)
    for _ in range(n_balls or rng.integers(1, 6)):
        c = rng.uniform(0, np.array(shape))
        if rng.random() < 0.6:
            r = rng.uniform(2, 10)
            a |= sum((g - ci) ** 2 for g, ci in zip(grid, c)) <= r * r
        else:
            h = rng.uniform(1, 8, size=3)
            a |= np.all([np.abs(g - ci) <= hi for g, ci, hi in zip(grid, c, h)], axis=0)
    # sprinkle of isolated voxels
    a |= rng.random(shape) < 0.01
    return a
