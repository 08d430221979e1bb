"""End-to-end anatomically aware sampling.

One request turns a nodule-free reference volume plus its lung layout
into a full volume carrying one synthetic nodule and the matching
label map: sample a nodule spec and a healthy crop, diffuse the cropped
reference patch up to the start level, splice fresh noise under the
nodule mask, run the mask-conditioned solver down to a clean patch, and
paste the patch back at the exact crop coordinates.  The emitted
(volume, layout) pair is self-labeling by construction.
"""

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import PlacementError
from .forward import invert_reference, masked_mix
from .layout import (LayoutConfig, pick_healthy_crop, place_nodule,
                     sample_nodule_spec)
from .solver import SolverConfig, expected_nfe, pulmonary_solve
from .volume import NODULE, SemanticLayout, VoxelVolume, crop, paste

_PLACEMENT_RETRIES = 25


@dataclass(frozen=True)
class EaasRequest:
    reference: VoxelVolume
    lung_layout: SemanticLayout
    predictor: object
    schedule: object
    solver: SolverConfig = field(default_factory=SolverConfig)
    layout_cfg: LayoutConfig = None
    patch_size: tuple = (64, 64, 64)
    seed: int = 0

    def __post_init__(self):
        if self.lung_layout.dims != self.reference.dims:
            raise ValueError(
                f"layout dims {self.lung_layout.dims} != reference dims "
                f"{self.reference.dims}")
        for sz, d in zip(self.patch_size, self.reference.dims):
            if sz > d:
                raise ValueError(
                    f"patch size {self.patch_size} exceeds reference dims "
                    f"{self.reference.dims}")


@dataclass(frozen=True)
class EaasResult:
    full_volume: VoxelVolume
    full_layout: SemanticLayout
    crop: object
    patch: VoxelVolume
    provenance: dict


def _default_layout_cfg(req):
    # Cap diameters so the nodule can physically fit inside the patch.
    patch_mm = min(sz * sp for sz, sp in
                   zip(req.patch_size, req.reference.spacing))
    return LayoutConfig(max_diameter_mm=0.8 * patch_mm)


def run_eaas(req):
    """Execute one synthesis request; deterministic given the seed when
    gamma = 0."""
    started = time.perf_counter()
    rng = np.random.default_rng(req.seed)
    s = req.schedule
    cfg = req.solver
    layout_cfg = req.layout_cfg if req.layout_cfg is not None \
        else _default_layout_cfg(req)

    region = pick_healthy_crop(req.lung_layout, req.lung_layout,
                               req.patch_size, rng)
    ref_patch = crop(req.reference, region)
    lung_patch = crop(req.lung_layout, region)

    m = None
    last_err = None
    for _ in range(_PLACEMENT_RETRIES):
        spec = sample_nodule_spec(layout_cfg, rng)
        try:
            m = place_nodule(spec, lung_patch, ref_patch.spacing, rng)
            break
        except PlacementError as err:
            last_err = err
    if m is None:
        raise PlacementError(
            f"no placeable nodule spec after {_PLACEMENT_RETRIES} resamples: "
            f"{last_err}")

    t_start = s.T if cfg.t_start is None else int(cfg.t_start)
    eps = VoxelVolume(rng.standard_normal(ref_patch.dims), ref_patch.spacing)
    carrier = invert_reference(ref_patch, t_start, eps, s)
    noise = VoxelVolume(rng.standard_normal(ref_patch.dims), ref_patch.spacing)
    x_init = masked_mix(carrier, noise, m)

    patch = pulmonary_solve(x_init, ref_patch, m, req.predictor, cfg, rng, s)

    full_volume = paste(req.reference, patch, region)
    full_layout = paste(req.lung_layout, m, region)
    provenance = {
        "seed": int(req.seed),
        "nfe": expected_nfe(cfg.method, cfg.steps),
        "wall_time_s": time.perf_counter() - started,
        "crop_origin": list(region.origin),
        "crop_size": list(region.size),
        "nodule_voxels": int((m.labels == NODULE).sum()),
    }
    return EaasResult(full_volume=full_volume, full_layout=full_layout,
                      crop=region, patch=patch, provenance=provenance)


@dataclass(frozen=True)
class BatchItem:
    request: EaasRequest
    result: EaasResult = None
    error: str = None


def run_batch(requests, parallelism=1):
    """Run independent requests, order-aligned with the input.

    Each item is identical to a standalone :func:`run_eaas` with the
    same seed regardless of ``parallelism``; per-request failures are
    captured in the item instead of aborting the batch.
    """
    requests = list(requests)
    if parallelism < 1:
        raise ValueError(f"parallelism must be >= 1, got {parallelism}")

    def one(req):
        try:
            return BatchItem(request=req, result=run_eaas(req))
        except Exception as err:  # noqa: BLE001 - reported per item
            return BatchItem(request=req, error=f"{type(err).__name__}: {err}")

    if parallelism == 1 or len(requests) <= 1:
        return [one(req) for req in requests]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(one, requests))


def write_provenance(result, path):
    with open(path, "w") as fh:
        json.dump(result.provenance, fh, indent=2, sort_keys=True)
        fh.write("\n")
