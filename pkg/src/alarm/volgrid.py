"""Scalar volumes and binary masks with physical geometry.

Arrays are indexed ``data[x, y, z]`` in the LPS convention (x toward patient
left, y toward posterior, z toward superior).  On disk voxels are stored
x-fastest, i.e. Fortran order of that array.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from alarm.errors import (
    BadMagic,
    DimMismatch,
    GeometryMismatch,
    InvalidSpacing,
    IoFailure,
    NonFinite,
    ObliqueAffine,
    SidecarMismatch,
    UnsupportedDatatype,
)

AXIS_CONVENTION = "LPS"
SPACING_TOL = 1e-6


@dataclass(eq=False)
class _Grid:
    data: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    axis_convention: str = AXIS_CONVENTION

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"expected a 3D array, got shape {self.data.shape}")
        if any(n <= 0 for n in self.data.shape):
            raise ValueError(f"all dims must be positive, got {self.data.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if len(self.spacing) != 3 or len(self.origin) != 3:
            raise ValueError("spacing and origin need three components")
        if not all(s > 0 and math.isfinite(s) for s in self.spacing):
            raise InvalidSpacing(f"spacing must be positive, got {self.spacing}")
        if self.axis_convention != AXIS_CONVENTION:
            raise ValueError(f"unsupported axis convention {self.axis_convention!r}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def voxel_volume(self) -> float:
        return float(np.prod(self.spacing))

    def same_geometry(self, other: "_Grid", tol: float = SPACING_TOL) -> bool:
        return (
            self.dims == other.dims
            and self.axis_convention == other.axis_convention
            and all(abs(a - b) <= tol for a, b in zip(self.spacing, other.spacing))
        )

    def check_geometry(self, other: "_Grid") -> None:
        if not self.same_geometry(other):
            raise GeometryMismatch(
                f"dims/spacing differ: {self.dims} @ {self.spacing} vs "
                f"{other.dims} @ {other.spacing}"
            )

    def geometry(self) -> dict:
        return {
            "dims": list(self.dims),
            "spacing": list(self.spacing),
            "origin": list(self.origin),
            "axis_convention": self.axis_convention,
        }


@dataclass(eq=False)
class Volume(_Grid):
    """Hounsfield-unit intensities, stored as float32."""

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        super().__post_init__()
        if not np.isfinite(self.data).all():
            raise NonFinite("volume contains NaN or Inf voxels")

    def like(self, data: np.ndarray) -> "Volume":
        return Volume(data, self.spacing, self.origin, self.axis_convention)


@dataclass(eq=False)
class Mask(_Grid):
    """Binary voxel set sharing a volume's geometry."""

    def __post_init__(self):
        self.data = np.asarray(self.data).astype(bool, copy=False)
        super().__post_init__()

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.data))

    @property
    def volume_mm3(self) -> float:
        return self.count * self.voxel_volume

    def like(self, data: np.ndarray) -> "Mask":
        return Mask(data, self.spacing, self.origin, self.axis_convention)


Grid = Union[Volume, Mask]


# ---------------------------------------------------------------- NIfTI-1

NIFTI_HEADER_SIZE = 348
NIFTI_VOX_OFFSET = 352

_DTYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    16: np.dtype(np.float32),
}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}


def _quaternion_to_matrix(b: float, c: float, d: float) -> np.ndarray:
    a = math.sqrt(max(0.0, 1.0 - (b * b + c * c + d * d)))
    return np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ]
    )


def _header_affine(hdr: bytes, endian: str, pixdim: Sequence[float]) -> np.ndarray | None:
    """Index-to-RAS affine (3x4) from sform or qform, or None when absent."""
    qform_code, sform_code = struct.unpack_from(endian + "2h", hdr, 252)
    if sform_code > 0:
        rows = struct.unpack_from(endian + "12f", hdr, 280)
        return np.array(rows, dtype=np.float64).reshape(3, 4)
    if qform_code > 0:
        b, c, d, ox, oy, oz = struct.unpack_from(endian + "6f", hdr, 256)
        qfac = -1.0 if pixdim[0] < 0 else 1.0
        rot = _quaternion_to_matrix(b, c, d)
        scale = np.diag([abs(pixdim[1]), abs(pixdim[2]), abs(pixdim[3]) * qfac])
        return np.column_stack([rot @ scale, [ox, oy, oz]])
    return None


def _reorient(data: np.ndarray, affine_ras: np.ndarray | None):
    """Permute/flip ``data`` into LPS order; return (data, perm, origin)."""
    if affine_ras is None:
        return data, (0, 1, 2), (0.0, 0.0, 0.0)
    lps = np.diag([-1.0, -1.0, 1.0]) @ affine_ras
    cols = lps[:, :3]
    perm = [-1, -1, -1]
    flips = [False, False, False]
    for j in range(3):
        col = cols[:, j]
        i = int(np.argmax(np.abs(col)))
        norm = np.linalg.norm(col)
        if norm == 0 or np.any(np.abs(np.delete(col, i)) > 1e-4 * norm):
            raise ObliqueAffine(f"affine column {j} is not axis-aligned: {col}")
        if perm[i] != -1:
            raise ObliqueAffine("affine maps two index axes onto one world axis")
        perm[i] = j
        flips[i] = col[i] < 0
    out = np.transpose(data, perm)
    corner = np.zeros(3)
    for i, j in enumerate(perm):
        if flips[i]:
            corner[j] = data.shape[j] - 1
            out = np.flip(out, axis=i)
    origin = lps[:, :3] @ corner + lps[:, 3]
    return np.ascontiguousarray(out), tuple(perm), tuple(float(o) for o in origin)


def parse_nifti(buf: bytes, kind: str = "volume", payload: bytes | None = None) -> Grid:
    """Decode an in-memory NIfTI-1 image.

    ``payload`` supplies the voxel bytes for two-file (``ni1``) images.
    """
    if len(buf) < NIFTI_HEADER_SIZE:
        raise BadMagic(f"file too short for a NIfTI-1 header ({len(buf)} bytes)")
    if struct.unpack_from("<i", buf, 0)[0] == NIFTI_HEADER_SIZE:
        endian = "<"
    elif struct.unpack_from(">i", buf, 0)[0] == NIFTI_HEADER_SIZE:
        endian = ">"
    else:
        raise BadMagic("sizeof_hdr is not 348")
    magic = buf[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise BadMagic(f"bad magic {magic!r}")
    single_file = magic == b"n+1\x00"

    dim = struct.unpack_from(endian + "8h", buf, 40)
    ndim = dim[0]
    if ndim < 3 or ndim > 7 or any(n != 1 for n in dim[4 : ndim + 1]):
        raise DimMismatch(f"expected a 3D image, got dim={dim}")
    shape = tuple(int(n) for n in dim[1:4])
    if any(n <= 0 for n in shape):
        raise DimMismatch(f"non-positive dims {shape}")

    (datatype,) = struct.unpack_from(endian + "h", buf, 70)
    if datatype not in _DTYPES:
        raise UnsupportedDatatype(f"datatype code {datatype}")
    dtype = _DTYPES[datatype].newbyteorder(endian)

    pixdim = struct.unpack_from(endian + "8f", buf, 76)
    vox_offset, slope, inter = struct.unpack_from(endian + "3f", buf, 108)

    nbytes = int(np.prod(shape)) * dtype.itemsize
    if single_file:
        start = int(vox_offset)
        raw = buf[start : start + nbytes]
    else:
        if payload is None:
            raise IoFailure("two-file NIfTI needs the .img payload")
        raw = payload[:nbytes]
    if len(raw) != nbytes:
        raise DimMismatch(f"payload has {len(raw)} bytes, header declares {nbytes}")

    arr = np.frombuffer(raw, dtype=dtype).reshape(shape, order="F")
    if slope != 0 and math.isfinite(slope):
        arr = (arr.astype(np.float64) * slope + inter).astype(np.float32)
    if kind == "mask":
        arr = arr != 0
    elif not np.isfinite(arr).all():
        raise NonFinite("NaN or Inf voxels in payload")

    affine = _header_affine(buf, endian, pixdim)
    data, perm, origin = _reorient(np.asarray(arr), affine)
    spacing = tuple(abs(float(pixdim[1 + j])) for j in perm)
    cls = Mask if kind == "mask" else Volume
    return cls(data, spacing, origin)


def read_nifti(path: str | Path, kind: str = "volume") -> Grid:
    """Read a .nii (or .hdr/.img pair) as a Volume, or as a Mask with ``kind="mask"``."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    payload = None
    if buf[344:348] == b"ni1\x00":
        img = path.with_suffix(".img")
        try:
            payload = img.read_bytes()
        except OSError as exc:
            raise IoFailure(f"cannot read payload {img}: {exc}") from exc
    return parse_nifti(buf, kind=kind, payload=payload)


def encode_nifti(v: Grid) -> bytes:
    if isinstance(v, Mask):
        data = v.data.astype(np.uint8)
    else:
        data = v.data.astype(np.float32)
    dtype = data.dtype
    hdr = bytearray(NIFTI_VOX_OFFSET)
    struct.pack_into("<i", hdr, 0, NIFTI_HEADER_SIZE)
    hdr[38:39] = b"r"
    struct.pack_into("<8h", hdr, 40, 3, *v.dims, 1, 1, 1, 1)
    struct.pack_into("<hh", hdr, 70, _DTYPE_CODES[dtype], dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, *v.spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<3f", hdr, 108, float(NIFTI_VOX_OFFSET), 0.0, 0.0)
    hdr[123] = 2  # xyzt_units: mm
    # LPS grid -> RAS world: negate x and y.
    sx, sy, sz = v.spacing
    ox, oy, oz = v.origin
    struct.pack_into("<hh", hdr, 252, 1, 1)
    struct.pack_into("<6f", hdr, 256, 0.0, 0.0, 1.0, -ox, -oy, oz)
    struct.pack_into(
        "<12f", hdr, 280, -sx, 0.0, 0.0, -ox, 0.0, -sy, 0.0, -oy, 0.0, 0.0, sz, oz
    )
    hdr[344:348] = b"n+1\x00"
    return bytes(hdr) + data.tobytes(order="F")


def write_nifti(v: Grid, path: str | Path) -> None:
    """Write a single-file NIfTI-1 image; masks as uint8, volumes as float32."""
    from alarm._io import atomic_write_bytes

    try:
        atomic_write_bytes(Path(path), encode_nifti(v))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------- raw + JSON

_RAW_DTYPES = {"uint8": np.uint8, "int16": np.int16, "float32": np.float32}


def _raw_paths(path: str | Path) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix in (".json", ".bin"):
        path = path.with_suffix("")
    return path.with_name(path.name + ".json"), path.with_name(path.name + ".bin")


def read_raw(path: str | Path, kind: str | None = None) -> Grid:
    """Read ``<name>.json`` + ``<name>.bin``; ``path`` may name either or the stem."""
    sidecar, binary = _raw_paths(path)
    try:
        meta = json.loads(sidecar.read_text())
        payload = binary.read_bytes()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise SidecarMismatch(f"{sidecar}: invalid JSON ({exc})") from exc
    try:
        dims = tuple(int(n) for n in meta["dims"])
        spacing = tuple(float(s) for s in meta["spacing"])
        origin = tuple(float(o) for o in meta.get("origin", (0.0, 0.0, 0.0)))
        dtype = np.dtype(_RAW_DTYPES[meta["dtype"]]).newbyteorder("<")
    except (KeyError, TypeError, ValueError) as exc:
        raise SidecarMismatch(f"{sidecar}: missing or invalid field ({exc})") from exc
    if len(dims) != 3:
        raise SidecarMismatch(f"expected 3 dims, got {dims}")
    if meta.get("axis_convention", AXIS_CONVENTION) != AXIS_CONVENTION:
        raise SidecarMismatch(f"unsupported axis convention {meta['axis_convention']!r}")
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(payload) != expected:
        raise SidecarMismatch(f"payload is {len(payload)} bytes, sidecar implies {expected}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims, order="F")
    kind = kind or meta.get("kind", "volume")
    if kind == "mask":
        return Mask(arr != 0, spacing, origin)
    return Volume(arr, spacing, origin)


def write_raw(v: Grid, path: str | Path) -> None:
    from alarm._io import atomic_write_bytes

    sidecar, binary = _raw_paths(path)
    if isinstance(v, Mask):
        kind, data = "mask", v.data.astype(np.uint8)
    else:
        kind, data = "volume", v.data.astype("<f4")
    meta = {
        "kind": kind,
        "dims": list(v.dims),
        "spacing": list(v.spacing),
        "origin": list(v.origin),
        "dtype": "uint8" if kind == "mask" else "float32",
        "axis_convention": v.axis_convention,
    }
    try:
        atomic_write_bytes(binary, data.tobytes(order="F"))
        atomic_write_bytes(sidecar, (json.dumps(meta, indent=2) + "\n").encode())
    except OSError as exc:
        raise IoFailure(f"cannot write {sidecar}/{binary}: {exc}") from exc


def read_image(path: str | Path, kind: str = "volume") -> Grid:
    """Dispatch on suffix: raw sidecar/payload, gzip NIfTI, or plain NIfTI."""
    path = Path(path)
    name = path.name
    if path.suffix in (".json", ".bin"):
        return read_raw(path, kind=kind)
    if name.endswith(".nii.gz"):
        import gzip

        try:
            buf = gzip.decompress(path.read_bytes())
        except (OSError, EOFError) as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc
        return parse_nifti(buf, kind=kind)
    return read_nifti(path, kind=kind)


# ---------------------------------------------------------------- resampling


def _sample_coords(n_in: int, s_in: float, n_out: int, s_out: float) -> np.ndarray:
    # Output voxel j sits at the same field-of-view corner as the input grid.
    j = np.arange(n_out, dtype=np.float64)
    idx = (j + 0.5) * (s_out / s_in) - 0.5
    return np.clip(idx, 0.0, n_in - 1)


def _lerp_axis(arr: np.ndarray, axis: int, coords: np.ndarray) -> np.ndarray:
    n = arr.shape[axis]
    i0 = np.floor(coords).astype(np.intp)
    i1 = np.minimum(i0 + 1, n - 1)
    w = coords - i0
    shape = [1, 1, 1]
    shape[axis] = -1
    w = w.reshape(shape)
    a = np.take(arr, i0, axis=axis)
    b = np.take(arr, i1, axis=axis)
    # a + (b - a) * w keeps constant fields exact
    return a + (b - a) * w


def resampled_dims(dims: Sequence[int], spacing: Sequence[float], target: float) -> tuple[int, ...]:
    return tuple(max(1, math.ceil(n * s / target - 1e-9)) for n, s in zip(dims, spacing))


def resample_isotropic(v: Grid, target_spacing: float = 1.0, mode: str | None = None) -> Grid:
    """Resample onto a ``target_spacing`` isotropic grid covering the same field of view.

    Volumes default to trilinear, masks must use nearest neighbour.  Samples
    falling outside the input clamp to the nearest edge voxel.
    """
    if not (target_spacing > 0 and math.isfinite(target_spacing)):
        raise InvalidSpacing(f"target spacing must be positive, got {target_spacing}")
    is_mask = isinstance(v, Mask)
    mode = mode or ("nearest" if is_mask else "trilinear")
    if mode not in ("nearest", "trilinear"):
        raise ValueError(f"unknown resampling mode {mode!r}")
    if is_mask and mode != "nearest":
        raise ValueError("masks can only be resampled with mode='nearest'")

    t = float(target_spacing)
    out_dims = resampled_dims(v.dims, v.spacing, t)
    coords = [
        _sample_coords(n, s, m, t) for n, s, m in zip(v.dims, v.spacing, out_dims)
    ]
    if mode == "nearest":
        idx = [np.floor(c + 0.5).astype(np.intp) for c in coords]
        data = v.data[np.ix_(*idx)]
    else:
        data = v.data.astype(np.float64)
        for axis, c in enumerate(coords):
            data = _lerp_axis(data, axis, c)
    origin = tuple(o - 0.5 * s + 0.5 * t for o, s in zip(v.origin, v.spacing))
    return type(v)(data, (t, t, t), origin, v.axis_convention)


def flip_axes(v: Grid, flips: Sequence[bool]) -> Grid:
    """Mirror the voxel array along the flagged axes; geometry is left as-is."""
    data = v.data
    for axis, f in enumerate(flips):
        if f:
            data = np.flip(data, axis=axis)
    if data is v.data:
        return v
    return v.like(np.ascontiguousarray(data))
