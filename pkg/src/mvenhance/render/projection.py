"""Perspective projection of 3D Gaussians to screen-space Gaussians.

Local-affine approximation: the 3D covariance is pushed through the pinhole
projection Jacobian evaluated at the primitive center. No low-pass dilation
term is added at these resolutions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scene import CameraView, GaussianPrimitive, quat_to_rotmat

NEAR_PLANE = 1e-4
ALPHA_MAX = 0.999
# Condition-number limit above which a projected covariance is treated as
# singular and the primitive is skipped (counted, not fatal).
COND_LIMIT = 1e8


@dataclass(frozen=True)
class ScreenGaussian:
    mean2d: np.ndarray       # (2,) pixels
    cov2d: np.ndarray        # (2, 2) symmetric positive-definite, pixels^2
    depth: float             # camera-frame z, world units
    peak_opacity: float
    source_index: int


def project_arrays(arrays: dict[str, np.ndarray], cam: CameraView):
    """Vectorized projection of a whole scene.

    Returns (valid, means2d, covs2d, depths) where `valid` marks primitives in
    front of the near plane. covs2d is (N, 2, 2).
    """
    centers = arrays["centers"]
    scales = arrays["scales"]
    rotations = arrays["rotations"]
    n = centers.shape[0]

    R_wc = cam.rotation
    p_cam = centers @ R_wc.T + cam.translation
    z = p_cam[:, 2]
    valid = z > NEAR_PLANE

    means2d = np.zeros((n, 2))
    covs2d = np.zeros((n, 2, 2))
    zs = np.where(valid, z, 1.0)  # placeholder for culled rows
    means2d[:, 0] = cam.fx * p_cam[:, 0] / zs + cam.cx
    means2d[:, 1] = cam.fy * p_cam[:, 1] / zs + cam.cy

    # World covariance R(q) diag(s^2) R(q)^T, rotated into the camera frame.
    Rq = np.empty((n, 3, 3))
    for i in range(n):
        Rq[i] = quat_to_rotmat(rotations[i])
    S2 = scales ** 2
    cov_world = Rq * S2[:, None, :] @ np.transpose(Rq, (0, 2, 1))
    cov_cam = R_wc[None] @ cov_world @ R_wc.T[None]

    # Pinhole Jacobian at the center: d(u,v)/d(x,y,z).
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = cam.fx / zs
    J[:, 0, 2] = -cam.fx * p_cam[:, 0] / zs ** 2
    J[:, 1, 1] = cam.fy / zs
    J[:, 1, 2] = -cam.fy * p_cam[:, 1] / zs ** 2
    covs2d[:] = J @ cov_cam @ np.transpose(J, (0, 2, 1))

    return valid, means2d, covs2d, z


def project_gaussian(g: GaussianPrimitive, cam: CameraView,
                     source_index: int = 0) -> ScreenGaussian | None:
    """Project one primitive; None means culled (behind the near plane)."""
    arrays = {
        "centers": g.center[None],
        "scales": g.scale[None],
        "rotations": g.rotation[None],
    }
    valid, means2d, covs2d, depths = project_arrays(arrays, cam)
    if not valid[0]:
        return None
    return ScreenGaussian(means2d[0], covs2d[0], float(depths[0]),
                          float(g.opacity), source_index)


def alpha_at(sg: ScreenGaussian, pixel) -> float:
    """Opacity contribution of a screen Gaussian at a pixel, clamped to [0, max]."""
    a, b, c = sg.cov2d[0, 0], sg.cov2d[0, 1], sg.cov2d[1, 1]
    det = a * c - b * b
    tr = a + c
    disc = np.sqrt(max(tr * tr / 4 - det, 0.0))
    lam_max, lam_min = tr / 2 + disc, tr / 2 - disc
    if lam_min <= 0 or lam_max / lam_min > COND_LIMIT:
        raise ValueError("singular projected covariance")
    d = np.asarray(pixel, dtype=np.float64) - sg.mean2d
    q = (c * d[0] * d[0] - 2 * b * d[0] * d[1] + a * d[1] * d[1]) / det
    return min(sg.peak_opacity * float(np.exp(-0.5 * q)), ALPHA_MAX)


def composite_ray(samples, depths=None, debug: bool = False):
    """Front-to-back accumulation of (alpha, payload) samples along one ray.

    Returns (payload_out, accumulated_opacity). The same accumulation serves
    RGB (payload = color) and coordinate-map (payload = center) rendering.
    `depths`, when given with debug=True, is checked for ascending order.
    """
    if debug and depths is not None:
        d = np.asarray(depths)
        if np.any(np.diff(d) < 0):
            raise ValueError("samples are not depth-sorted")
    payload_out = np.zeros(3)
    transmittance = 1.0
    accumulated = 0.0
    for alpha, payload in samples:
        w = alpha * transmittance
        payload_out = payload_out + w * np.asarray(payload, dtype=np.float64)
        accumulated += w
        transmittance *= 1.0 - alpha
    return payload_out, accumulated
