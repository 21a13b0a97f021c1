"""Forward splatting renderer: RGB images and per-pixel 3D coordinate maps.

Both modes run the identical front-to-back accumulation; only the payload
differs (color vs. world-space center). Depth ties are broken by ascending
source index so the output is a deterministic function of the scene.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..scene import CameraView, GaussianScene
from . import kernels
from .projection import COND_LIMIT, project_arrays

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RenderedImage:
    pixels: np.ndarray  # (H, W, 3) in [0, 1]


@dataclass(frozen=True)
class CMap:
    coords: np.ndarray    # (H, W, 3) world units
    validity: np.ndarray  # (H, W) accumulated opacity in [0, 1]


def conic_and_radius(covs2d: np.ndarray, opacities: np.ndarray):
    """Inverse-conic coefficients (A, B, C) and a bounding radius per Gaussian.

    The radius is where the peak-scaled Gaussian falls below the kernel's
    contribution cutoff along the widest axis. Near-singular covariances
    (condition number > COND_LIMIT) are masked out.
    """
    a = covs2d[:, 0, 0]
    b = covs2d[:, 0, 1]
    c = covs2d[:, 1, 1]
    det = a * c - b * b
    tr = a + c
    disc = np.sqrt(np.maximum(tr * tr / 4 - det, 0.0))
    lam_max = tr / 2 + disc
    lam_min = tr / 2 - disc
    ok = (lam_min > 0) & (lam_max < COND_LIMIT * lam_min)

    safe_det = np.where(ok, det, 1.0)
    invconic = np.stack([c / safe_det, -b / safe_det, a / safe_det], axis=1)
    log_ratio = np.log(np.maximum(opacities, 1e-300) / kernels.ALPHA_CUTOFF)
    radii = np.where(log_ratio > 0, np.sqrt(2.0 * lam_max * np.maximum(log_ratio, 0.0)), 0.0)
    return invconic, radii, ok


def prepare(scene: GaussianScene, cam: CameraView, mode: str):
    """Project, cull, and depth-order a scene for one camera.

    Returns (means2d, invconic, opacities, payloads, radii, n_skipped) with
    rows sorted by (depth, source_index).
    """
    if mode not in ("rgb", "cmap"):
        raise ValueError(f"unknown render mode {mode!r}")
    arrays = scene.as_arrays()
    valid, means2d, covs2d, depths = project_arrays(arrays, cam)

    idx = np.arange(len(scene.primitives))
    invconic, radii, ok = conic_and_radius(covs2d, arrays["opacities"])
    n_skipped = int(np.count_nonzero(valid & ~ok))
    live = valid & ok

    payload = arrays["colors"] if mode == "rgb" else arrays["centers"]
    order = np.lexsort((idx[live], depths[live]))
    sel = idx[live][order]
    return (means2d[sel], invconic[sel], arrays["opacities"][sel],
            payload[sel], radii[sel], n_skipped)


def render(scene: GaussianScene, cam: CameraView, mode: str,
           background=(0.0, 0.0, 0.0), stats: dict | None = None):
    """Render a scene; mode "rgb" -> RenderedImage, "cmap" -> CMap."""
    scene.validate()
    cam.validate()
    H, W = cam.height, cam.width
    means2d, invconic, opacities, payload, radii, n_skipped = prepare(scene, cam, mode)
    if n_skipped:
        log.warning("render: skipped %d near-singular projected Gaussians", n_skipped)
    if stats is not None:
        stats["skipped_singular"] = n_skipped
        stats["composited"] = means2d.shape[0]

    out, accum = kernels.composite(means2d, invconic, opacities, payload, radii, H, W)
    if mode == "rgb":
        bg = np.asarray(background, dtype=np.float64)
        pixels = out + (1.0 - accum)[:, :, None] * bg
        return RenderedImage(pixels)
    return CMap(out, accum)
