"""Voxel volumes, semantic layouts, crop geometry, phantoms and binary I/O.

Intensities live in normalized units in [-1, 1]; :func:`hu_to_normalized`
documents the affine map from Hounsfield units with window [-1000, 400].
Voxel order is z-major (z outermost, x innermost) everywhere, which fixes
the byte order of the binary format.

Binary format (little-endian): magic ``LDPV``, u32 version=1, u32 dtype
(0 = f32 intensities, 1 = u8 labels), u32 x 3 dims (nz, ny, nx),
f32 x 3 spacing in mm, then the payload in z-major order.  Intensities
are stored as f32, so volumes whose in-memory values originate from f32
round-trip bit-exactly.
"""

import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import FormatError

BACKGROUND, LUNG, NODULE = 0, 1, 2

_MAGIC = b"LDPV"
_VERSION = 1
_DTYPE_F32, _DTYPE_U8 = 0, 1
_HEADER = struct.Struct("<4sIIIIIfff")


@dataclass(frozen=True)
class VoxelVolume:
    """A 3D scalar field with physical voxel spacing.

    data: float64 array of shape (nz, ny, nx); spacing: (sz, sy, sx) mm.
    """

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume data contains non-finite values")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be 3 positive floats, got {self.spacing}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self):
        return self.data.shape


@dataclass(frozen=True)
class SemanticLayout:
    """Per-voxel labels: 0 background, 1 lung, 2 nodule."""

    labels: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.uint8)
        if labels.ndim != 3:
            raise ValueError(f"layout labels must be 3D, got shape {labels.shape}")
        if labels.size and labels.max() > NODULE:
            raise ValueError("layout labels must be in {0, 1, 2}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be 3 positive floats, got {self.spacing}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self):
        return self.labels.shape

    def nodule_mask(self):
        return self.labels == NODULE

    def lung_mask(self):
        return self.labels == LUNG


@dataclass(frozen=True)
class CropRegion:
    """An axis-aligned box in voxel indices: origin (z, y, x), size (dz, dy, dx)."""

    origin: tuple
    size: tuple

    def __post_init__(self):
        origin = tuple(int(v) for v in self.origin)
        size = tuple(int(v) for v in self.size)
        if any(v < 0 for v in origin):
            raise ValueError(f"origin must be non-negative, got {origin}")
        if any(v <= 0 for v in size):
            raise ValueError(f"size must be positive, got {size}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "size", size)

    def slices(self):
        return tuple(slice(o, o + s) for o, s in zip(self.origin, self.size))

    def validate_within(self, dims):
        for o, s, d in zip(self.origin, self.size, dims):
            if o + s > d:
                raise ValueError(
                    f"region origin={self.origin} size={self.size} "
                    f"exceeds parent dims {tuple(dims)}")


def hu_to_normalized(hu):
    """Map Hounsfield units to [-1, 1] with window [-1000, 400]."""
    hu = np.clip(np.asarray(hu, dtype=np.float64), -1000.0, 400.0)
    return (hu + 1000.0) / 700.0 - 1.0


def crop(v, r):
    """Extract the subvolume (or sublayout) covered by ``r``."""
    r.validate_within(v.dims)
    if isinstance(v, SemanticLayout):
        return SemanticLayout(v.labels[r.slices()].copy(), v.spacing)
    return VoxelVolume(v.data[r.slices()].copy(), v.spacing)


def paste(parent, patch, r):
    """Return a copy of ``parent`` with ``patch`` written into region ``r``."""
    r.validate_within(parent.dims)
    if patch.dims != r.size:
        raise ValueError(f"patch dims {patch.dims} != region size {r.size}")
    if isinstance(parent, SemanticLayout):
        labels = parent.labels.copy()
        labels[r.slices()] = patch.labels
        return SemanticLayout(labels, parent.spacing)
    data = parent.data.copy()
    data[r.slices()] = patch.data
    return VoxelVolume(data, parent.spacing)


def resample_isotropic(v, target):
    """Resample to isotropic spacing.

    Trilinear interpolation for volumes, nearest-neighbor for layouts.
    Output dims are the input dims scaled by spacing / target, rounded
    to nearest (minimum 1).  Edge samples clamp to the border voxel.
    """
    if target <= 0:
        raise ValueError(f"target spacing must be positive, got {target}")
    if all(abs(s - target) < 1e-12 for s in v.spacing):
        return v
    new_dims = tuple(max(1, int(round(d * s / target)))
                     for d, s in zip(v.dims, v.spacing))
    # Source coordinate of output voxel i along an axis: i * target / s.
    grids = np.meshgrid(
        *(np.arange(n, dtype=np.float64) * target / s
          for n, s in zip(new_dims, v.spacing)),
        indexing="ij")
    coords = np.stack([g.ravel() for g in grids])
    if isinstance(v, SemanticLayout):
        out = ndimage.map_coordinates(v.labels, coords, order=0, mode="nearest")
        return SemanticLayout(out.reshape(new_dims), (target,) * 3)
    out = ndimage.map_coordinates(v.data, coords, order=1, mode="nearest")
    return VoxelVolume(out.reshape(new_dims), (target,) * 3)


def make_phantom(seed, dims):
    """Procedural synthetic thorax: soft-tissue background (~0.1), two
    ellipsoidal low-intensity lung fields (~-0.9), and a few bright
    tube structures as vessel proxies (~0.5).

    Returns (VoxelVolume, SemanticLayout) with lung voxels labeled.
    Deterministic given the seed.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d < 16 for d in dims):
        raise ValueError(f"phantom dims must be >= (16, 16, 16), got {dims}")
    rng = np.random.default_rng(seed)
    nz, ny, nx = dims
    z, y, x = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx),
                          indexing="ij")

    data = np.full(dims, 0.1, dtype=np.float64)
    data += 0.02 * rng.standard_normal(dims)
    labels = np.zeros(dims, dtype=np.uint8)

    # Two lungs, mirrored about the mid-sagittal plane, with jittered
    # centers and semi-axes.
    for side in (-1.0, 1.0):
        cz = nz * (0.5 + 0.03 * rng.uniform(-1, 1))
        cy = ny * (0.5 + 0.03 * rng.uniform(-1, 1))
        cx = nx * (0.5 + side * (0.22 + 0.02 * rng.uniform(-1, 1)))
        az = nz * (0.38 + 0.03 * rng.uniform(-1, 1))
        ay = ny * (0.30 + 0.03 * rng.uniform(-1, 1))
        ax = nx * (0.16 + 0.02 * rng.uniform(-1, 1))
        inside = (((z - cz) / az) ** 2 + ((y - cy) / ay) ** 2
                  + ((x - cx) / ax) ** 2) <= 1.0
        data[inside] = -0.9 + 0.03 * rng.standard_normal(int(inside.sum()))
        labels[inside] = LUNG

    # Vessel proxies: bright tubes through the lung fields.
    n_tubes = 3 + int(rng.integers(0, 3))
    for _ in range(n_tubes):
        p0 = rng.uniform([0, 0, 0], dims)
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        rel = np.stack([z - p0[0], y - p0[1], x - p0[2]], axis=-1)
        along = rel @ d
        radial2 = (rel * rel).sum(axis=-1) - along ** 2
        tube = (radial2 <= rng.uniform(1.0, 2.5) ** 2) & (labels == LUNG)
        data[tube] = 0.5

    data = np.clip(data, -1.0, 1.0)
    # Round through f32 so phantoms round-trip the binary format exactly.
    data = data.astype(np.float32).astype(np.float64)
    return VoxelVolume(data, (1.0, 1.0, 1.0)), SemanticLayout(labels, (1.0, 1.0, 1.0))


def _write(path, arr, spacing, dtype_code):
    nz, ny, nx = arr.shape
    header = _HEADER.pack(_MAGIC, _VERSION, dtype_code, nz, ny, nx, *spacing)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes(order="C"))


def _read(path, expect_dtype):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"truncated header: {len(raw)} bytes", offset=len(raw))
    magic, version, dtype_code, nz, ny, nx, sz, sy, sx = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_MAGIC!r}", offset=0)
    if version != _VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if dtype_code != expect_dtype:
        raise FormatError(
            f"dtype code {dtype_code}, expected {expect_dtype}", offset=8)
    n_vox = nz * ny * nx
    if n_vox <= 0 or n_vox > 2 ** 31:
        raise FormatError(f"dimension overflow: {(nz, ny, nx)}", offset=12)
    itemsize = 4 if dtype_code == _DTYPE_F32 else 1
    expected = _HEADER.size + n_vox * itemsize
    if len(raw) != expected:
        raise FormatError(
            f"payload size mismatch: expected {expected} bytes total "
            f"for dims {(nz, ny, nx)}, got {len(raw)}", offset=_HEADER.size)
    np_dtype = np.dtype("<f4") if dtype_code == _DTYPE_F32 else np.dtype("u1")
    payload = np.frombuffer(raw, dtype=np_dtype, offset=_HEADER.size)
    return payload.reshape(nz, ny, nx), (sz, sy, sx)


def write_volume(v, path):
    _write(path, v.data.astype("<f4"), v.spacing, _DTYPE_F32)


def read_volume(path):
    arr, spacing = _read(path, _DTYPE_F32)
    return VoxelVolume(arr.astype(np.float64), spacing)


def write_layout(layout, path):
    _write(path, layout.labels, layout.spacing, _DTYPE_U8)


def read_layout(path):
    arr, spacing = _read(path, _DTYPE_U8)
    return SemanticLayout(arr.copy(), spacing)
