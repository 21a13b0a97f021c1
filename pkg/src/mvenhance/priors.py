"""3D conditioning signals: pose normalization, Plücker ray fields, anchor-frame
coordinate-map transforms, and the convolutional condition encoder.

Pose normalization re-expresses every camera in the frame of the anchor view
and divides camera centers by the maximum pairwise center distance. The
Plücker moment o x d depends on the magnitude of o, so without this step the
ray embedding would not be scale-invariant.
"""
from __future__ import annotations

import dataclasses

import numpy as np
import torch
from torch import nn

from .render.raster import CMap
from .scene import CameraView

DEGENERATE_DIST = 1e-9


def max_pairwise_distance(centers: np.ndarray) -> float:
    diff = centers[:, None, :] - centers[None, :, :]
    return float(np.sqrt((diff ** 2).sum(-1)).max())


def normalize_poses(cams: list[CameraView], anchor: int):
    """Re-express all poses in the anchor camera's frame and rescale centers.

    Returns (cams', scale). scale is the maximum pairwise center distance
    (1.0 when degenerate); the anchor pose becomes the identity.
    """
    if not cams:
        raise ValueError("empty camera list")
    if not (0 <= anchor < len(cams)):
        raise ValueError(f"anchor index {anchor} out of range")

    centers = np.stack([c.center for c in cams])
    scale = max_pairwise_distance(centers)
    if scale < DEGENERATE_DIST:
        scale = 1.0

    Ra = cams[anchor].rotation
    ta = cams[anchor].translation
    out = []
    for cam in cams:
        R_new = cam.rotation @ Ra.T
        c_new = (Ra @ cam.center + ta) / scale
        out.append(cam.with_pose(R_new, -R_new @ c_new))
    return out, scale


def plucker_field(cam: CameraView, H: int | None = None, W: int | None = None) -> np.ndarray:
    """Per-pixel (o x d, d) ray map, (H, W, 6). Directions are unit length.

    The camera is expected to already be pose-normalized; o is its center in
    the normalized frame and d the unit ray through each pixel.
    """
    H = cam.height if H is None else H
    W = cam.width if W is None else W
    o = cam.center
    u = np.arange(W, dtype=np.float64)
    v = np.arange(H, dtype=np.float64)
    x = (u[None, :] - cam.cx) / cam.fx
    y = (v[:, None] - cam.cy) / cam.fy
    d_cam = np.stack([np.broadcast_to(x, (H, W)),
                      np.broadcast_to(y, (H, W)),
                      np.ones((H, W))], axis=-1)
    d_world = d_cam @ cam.rotation  # == d_cam @ R, rows of R are camera axes
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    moment = np.cross(np.broadcast_to(o, d_world.shape), d_world)
    return np.concatenate([moment, d_world], axis=-1)


def transform_cmap(cmap: CMap, rotation: np.ndarray, translation: np.ndarray,
                   scale: float) -> CMap:
    """Map coordinates by a rigid transform, then divide by scale.

    Validity is untouched; the transform is applied to every pixel including
    zero-coverage ones (validity alone marks emptiness).
    """
    coords = (cmap.coords @ rotation.T + translation) / scale
    return CMap(coords, cmap.validity.copy())


class ConditionEncoder(nn.Module):
    """Strided conv encoder mapping stacked geometric priors to latent-shaped
    condition features.

    Input is the 10-channel (coords 3 + validity 1 + Plücker 6) stack at full
    resolution; the constant per-view reference/target mask is concatenated at
    the 8x-downsampled bottleneck. The final 1x1 layer is zero-initialized so
    conditioning starts as an exact no-op.
    """

    IN_CHANNELS = 10

    def __init__(self, d: int = 8, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.d = d
        self.conv1 = nn.Conv2d(self.IN_CHANNELS, 16, 3, stride=2, padding=1, dtype=dtype)
        self.conv2 = nn.Conv2d(16, 32, 3, stride=2, padding=1, dtype=dtype)
        self.conv3 = nn.Conv2d(32, 32, 3, stride=2, padding=1, dtype=dtype)
        self.head = nn.Conv2d(32 + 1, d, 1, dtype=dtype)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, priors: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """priors: (V, 10, H, W); mask: (V, 1, H/8, W/8) constant 0 or 1."""
        if priors.shape[1] != self.IN_CHANNELS:
            raise ValueError(f"expected {self.IN_CHANNELS} input channels, got {priors.shape[1]}")
        h = torch.nn.functional.silu(self.conv1(priors))
        h = torch.nn.functional.silu(self.conv2(h))
        h = torch.nn.functional.silu(self.conv3(h))
        if mask.shape[-2:] != h.shape[-2:]:
            raise ValueError(f"mask shape {tuple(mask.shape[-2:])} does not match "
                             f"bottleneck {tuple(h.shape[-2:])}")
        return self.head(torch.cat([h, mask], dim=1))


def prior_stack(cmap: CMap, plucker: np.ndarray) -> np.ndarray:
    """Assemble the (10, H, W) channels-first encoder input for one view."""
    if cmap.coords.shape[:2] != plucker.shape[:2]:
        raise ValueError("coordinate map and Plücker field are not aligned")
    stack = np.concatenate(
        [cmap.coords, cmap.validity[:, :, None], plucker], axis=-1
    )
    return np.ascontiguousarray(stack.transpose(2, 0, 1))
