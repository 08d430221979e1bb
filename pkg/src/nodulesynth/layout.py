"""Rule-based nodule semantic layout generation.

Nodules are rotated ellipsoids whose diameters follow the three-class
size distribution observed in the LIDC-style nodule population:
19% small [1.41, 6) mm, 62% medium [6, 16) mm, 19% large
[16, 57.42] mm, with uniform diameters within each class.  Placement
rasterizes the ellipsoid at a random center inside lung-labeled
regions.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import PlacementError, SearchExhaustedError
from .volume import LUNG, NODULE, CropRegion, SemanticLayout

SIZE_CLASSES = ("small", "medium", "large")


@dataclass(frozen=True)
class LayoutConfig:
    class_probs: tuple = (0.19, 0.62, 0.19)
    diameter_bounds_mm: tuple = ((1.41, 6.0), (6.0, 16.0), (16.0, 57.42))
    axis_ratio_range: tuple = (0.6, 1.0)
    max_diameter_mm: float = None  # optional extra cap (e.g. patch size)

    def __post_init__(self):
        if abs(sum(self.class_probs) - 1.0) > 1e-9:
            raise ValueError(f"class_probs must sum to 1, got {self.class_probs}")
        lo, hi = self.axis_ratio_range
        if not (0 < lo <= hi <= 1.0):
            raise ValueError(f"bad axis_ratio_range {self.axis_ratio_range}")
        prev_hi = 0.0
        for lo_d, hi_d in self.diameter_bounds_mm:
            if not (0 < lo_d < hi_d) or lo_d < prev_hi:
                raise ValueError(
                    f"diameter bounds must be ordered, got {self.diameter_bounds_mm}")
            prev_hi = lo_d


@dataclass(frozen=True)
class EllipsoidSpec:
    size_class: str
    semi_axes_mm: tuple  # (a, b, c), a is the largest
    rotation: tuple      # Euler angles (z, y, x) in radians
    center: tuple = None  # voxel coordinates, assigned by placement

    @property
    def diameter_mm(self):
        return 2.0 * max(self.semi_axes_mm)


def sample_nodule_spec(cfg, rng):
    """Draw a nodule spec: class per class_probs, diameter uniform within
    the class bounds, axis ratios and rotation uniform."""
    idx = rng.choice(len(SIZE_CLASSES), p=cfg.class_probs)
    lo, hi = cfg.diameter_bounds_mm[idx]
    if cfg.max_diameter_mm is not None:
        hi = min(hi, cfg.max_diameter_mm)
        lo = min(lo, hi)
    diameter = rng.uniform(lo, hi)
    a = diameter / 2.0
    r_lo, r_hi = cfg.axis_ratio_range
    b = a * rng.uniform(r_lo, r_hi)
    c = a * rng.uniform(r_lo, r_hi)
    rotation = tuple(rng.uniform(0.0, 2.0 * np.pi, size=3))
    return EllipsoidSpec(size_class=SIZE_CLASSES[idx], semi_axes_mm=(a, b, c),
                         rotation=rotation)


def _rotation_matrix(angles):
    """Intrinsic z-y-x Euler rotation."""
    az, ay, ax = angles
    cz, sz = np.cos(az), np.sin(az)
    cy, sy = np.cos(ay), np.sin(ay)
    cx, sx = np.cos(ax), np.sin(ax)
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    return rz @ ry @ rx


def rasterize_ellipsoid(spec, center, dims, spacing):
    """Boolean mask of the rotated ellipsoid at ``center`` (voxel coords).

    A voxel belongs to the nodule when its physical offset from the
    center, rotated into the ellipsoid frame, lies inside the unit ball
    scaled by the semi-axes.
    """
    rot = _rotation_matrix(spec.rotation)
    axes = np.asarray(spec.semi_axes_mm)
    # Bounding box in voxels: the largest semi-axis covers every rotation.
    r_vox = np.ceil(max(axes) / np.asarray(spacing)).astype(int) + 1
    lo = np.maximum(np.round(center).astype(int) - r_vox, 0)
    hi = np.minimum(np.round(center).astype(int) + r_vox + 1, dims)
    if np.any(lo >= hi):
        return np.zeros(dims, dtype=bool)
    grids = np.meshgrid(*(np.arange(l, h) for l, h in zip(lo, hi)),
                        indexing="ij")
    offsets_mm = np.stack(
        [(g - c) * sp for g, c, sp in zip(grids, center, spacing)], axis=-1)
    local = offsets_mm @ rot  # rotate world offsets into ellipsoid frame
    inside = ((local / axes) ** 2).sum(axis=-1) <= 1.0
    mask = np.zeros(dims, dtype=bool)
    mask[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = inside
    return mask


def place_nodule(spec, lung, spacing, rng, max_tries=100,
                 min_lung_overlap=0.9):
    """Place the ellipsoid at a random center with >= 90% of its voxels
    on lung labels.  Returns a new layout with nodule labels added.

    Raises PlacementError after ``max_tries`` failed placements (the
    caller may resample the spec).
    """
    lung_idx = np.argwhere(lung.labels == LUNG)
    if len(lung_idx) == 0:
        raise PlacementError("layout contains no lung-labeled voxels")
    dims = np.asarray(lung.dims)
    for _ in range(max_tries):
        center = lung_idx[rng.integers(len(lung_idx))].astype(np.float64)
        mask = rasterize_ellipsoid(spec, center, tuple(dims), spacing)
        n_total = int(mask.sum())
        if n_total == 0:
            continue
        n_lung = int((mask & (lung.labels == LUNG)).sum())
        if n_lung / n_total < min_lung_overlap:
            continue
        labels = lung.labels.copy()
        labels[mask] = NODULE
        placed = SemanticLayout(labels, lung.spacing)
        object.__setattr__(placed, "_placed_spec",
                           EllipsoidSpec(spec.size_class, spec.semi_axes_mm,
                                         spec.rotation, tuple(center)))
        return placed
    raise PlacementError(
        f"no valid placement for {spec.diameter_mm:.1f} mm nodule "
        f"after {max_tries} tries")


def pick_healthy_crop(layout, existing_nodules, size, rng, max_tries=1000,
                      min_lung_frac=0.05):
    """Uniformly pick a crop region free of existing nodule voxels and
    overlapping lung labels in at least ``min_lung_frac`` of its voxels.

    Rejection sampling over valid origins; raises SearchExhaustedError
    when the attempt budget runs out.
    """
    dims = layout.dims
    size = tuple(int(v) for v in size)
    for d, sz in zip(dims, size):
        if sz > d:
            raise ValueError(f"crop size {size} exceeds layout dims {dims}")
    nodule = existing_nodules.nodule_mask() if existing_nodules is not None \
        else np.zeros(dims, dtype=bool)
    lung = layout.labels == LUNG
    n_vox = int(np.prod(size))
    for _ in range(max_tries):
        origin = tuple(int(rng.integers(0, d - sz + 1))
                       for d, sz in zip(dims, size))
        region = CropRegion(origin, size)
        sl = region.slices()
        if nodule[sl].any():
            continue
        if int(lung[sl].sum()) < min_lung_frac * n_vox:
            continue
        return region
    raise SearchExhaustedError(
        f"no nodule-free crop of size {size} found in {max_tries} attempts")


def spec_log_entry(spec):
    """JSON-lines record for a placed nodule spec."""
    return json.dumps({
        "class": spec.size_class,
        "diameter_mm": spec.diameter_mm,
        "center": list(spec.center) if spec.center is not None else None,
        "semi_axes_mm": list(spec.semi_axes_mm),
        "rotation": list(spec.rotation),
    })
