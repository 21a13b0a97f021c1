"""Exhaustive reference renderer.

Evaluates every projected Gaussian at every pixel, re-sorts per pixel, and
composites with no cutoffs and no early exit. Single-threaded, no numba. This
is the ground truth the fast path is tested against.
"""
from __future__ import annotations

import numpy as np

from ..scene import CameraView, GaussianScene
from .kernels import ALPHA_MAX
from .projection import project_arrays
from .raster import CMap, RenderedImage, conic_and_radius


def brute_force_render(scene: GaussianScene, cam: CameraView, mode: str,
                       background=(0.0, 0.0, 0.0)):
    if mode not in ("rgb", "cmap"):
        raise ValueError(f"unknown render mode {mode!r}")
    scene.validate()
    cam.validate()
    H, W = cam.height, cam.width
    arrays = scene.as_arrays()
    valid, means2d, covs2d, depths = project_arrays(arrays, cam)
    invconic, _, ok = conic_and_radius(covs2d, arrays["opacities"])
    live = np.flatnonzero(valid & ok)

    payload = arrays["colors"] if mode == "rgb" else arrays["centers"]
    out = np.zeros((H, W, 3))
    accum = np.zeros((H, W))
    if live.size:
        m = means2d[live]
        ic = invconic[live]
        op = arrays["opacities"][live]
        pl = payload[live]
        d = depths[live]
        for v in range(H):
            for u in range(W):
                dx = u - m[:, 0]
                dy = v - m[:, 1]
                q = ic[:, 0] * dx * dx + 2.0 * ic[:, 1] * dx * dy + ic[:, 2] * dy * dy
                alpha = np.minimum(op * np.exp(-0.5 * q), ALPHA_MAX)
                order = np.lexsort((live, d))
                a = alpha[order]
                trans = np.concatenate(([1.0], np.cumprod(1.0 - a)[:-1]))
                w = a * trans
                out[v, u] = w @ pl[order]
                accum[v, u] = w.sum()

    if mode == "rgb":
        bg = np.asarray(background, dtype=np.float64)
        return RenderedImage(out + (1.0 - accum)[:, :, None] * bg)
    return CMap(out, accum)
