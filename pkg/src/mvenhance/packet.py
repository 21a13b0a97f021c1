"""Reference-view scoring/selection and packet assembly + serialization.

A packet is the unit of joint processing: N reference views rendered from the
clean scene plus M target views rendered from the corrupted scene, with all
conditioning channels (anchor-frame coordinate maps, Plücker fields, role
masks) attached. View order inside a packet is references-then-targets; the
denoiser must not depend on that order.
"""
from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass

import numpy as np

from .priors import max_pairwise_distance, normalize_poses, plucker_field, transform_cmap
from .render import render
from .render.raster import CMap
from .scene import CameraView, GaussianScene

OVERLAP_ALPHA = 0.8
OVERLAP_BETA = 0.2
DEGENERATE_DIST = 1e-9

PACKET_MAGIC = b"MVPK"
PACKET_VERSION = 1
CHANNEL_LAYOUT = "rgb:f32[H,W,3];cmap:f32[H,W,xyz+validity];plucker:f32[H,W,moment+dir]"


class PacketError(ValueError):
    """Invalid packet request or malformed packet file."""


def view_overlap_score(cam_i: CameraView, cam_j: CameraView,
                       max_pairwise_dist: float,
                       alpha: float = OVERLAP_ALPHA, beta: float = OVERLAP_BETA) -> float:
    """alpha * cos(angle between view directions) + beta * (1 - d / d_max).

    Co-located candidate sets (d_max ~ 0) define the distance term as 1.
    """
    if max_pairwise_dist < 0:
        raise PacketError("max_pairwise_dist must be >= 0")
    vi, vj = cam_i.forward, cam_j.forward
    ni, nj = np.linalg.norm(vi), np.linalg.norm(vj)
    if ni < 1e-12 or nj < 1e-12:
        raise PacketError("zero-length view direction")
    cos_term = float(np.dot(vi, vj) / (ni * nj))
    if max_pairwise_dist < DEGENERATE_DIST:
        dist_term = 1.0
    else:
        d = float(np.linalg.norm(cam_i.center - cam_j.center))
        dist_term = 1.0 - d / max_pairwise_dist
    return alpha * cos_term + beta * dist_term


def select_references(targets: list[CameraView], pool: list[CameraView], N: int) -> list[int]:
    """Indices of the N pool cameras with the highest max-over-targets score.

    Distances are normalized by the max pairwise distance over pool + targets
    (packet-local). Ties break by ascending pool index; a pool smaller than N
    is returned whole (still score-ordered).
    """
    if not pool:
        raise PacketError("empty reference pool")
    if not targets:
        raise PacketError("empty target list")
    if N < 1:
        raise PacketError("N must be >= 1")

    centers = np.stack([c.center for c in pool] + [c.center for c in targets])
    d_max = max_pairwise_distance(centers)
    scores = [max(view_overlap_score(p, t, d_max) for t in targets) for p in pool]
    order = sorted(range(len(pool)), key=lambda i: (-scores[i], i))
    return order[: min(N, len(pool))]


@dataclass(frozen=True)
class PacketView:
    cam: CameraView          # pose-normalized (anchor frame, unit max baseline)
    image: np.ndarray        # (H, W, 3) float32
    cmap: np.ndarray         # (H, W, 4) float32, xyz + validity, anchor frame
    plucker: np.ndarray      # (H, W, 6) float32
    gt_image: np.ndarray | None = None  # (H, W, 3) float32 supervision target

    @property
    def is_target(self) -> bool:
        return self.cam.role == "target"

    def mask_grid(self) -> np.ndarray:
        """Constant indicator grid at latent resolution (H/8, W/8)."""
        h, w = self.image.shape[0] // 8, self.image.shape[1] // 8
        return np.full((h, w), 1.0 if self.is_target else 0.0, dtype=np.float32)


@dataclass(frozen=True)
class Packet:
    views: tuple[PacketView, ...]
    n_ref: int
    n_target: int
    anchor_index: int
    scale: float

    def validate(self) -> None:
        if self.n_ref < 1 or self.n_target < 1:
            raise PacketError("packet needs at least one reference and one target view")
        if self.n_ref + self.n_target != len(self.views):
            raise PacketError("view count mismatch")
        shapes = {v.image.shape[:2] for v in self.views}
        if len(shapes) != 1:
            raise PacketError("views disagree on image size")


def assemble_packet(refs: list[CameraView], targets: list[CameraView],
                    clean_scene: GaussianScene, corrupted_scene: GaussianScene,
                    size_bounds: tuple[int, int] = (2, 24),
                    include_gt: bool = True,
                    background=(0.0, 0.0, 0.0)) -> Packet:
    """Render and bundle one packet.

    References get RGB + coordinate maps from the clean scene; targets get
    both from the corrupted scene (their priors are as degraded as their
    pixels). All poses are normalized to the first target camera and all
    coordinate maps transformed into that frame.
    """
    if not refs or not targets:
        raise PacketError("zero reference or target views")
    total = len(refs) + len(targets)
    if not (size_bounds[0] <= total <= size_bounds[1]):
        raise PacketError(f"packet size {total} outside bounds {size_bounds}")

    cams = [dataclasses.replace(c, role="reference") for c in refs]
    cams += [dataclasses.replace(c, role="target") for c in targets]
    anchor_index = len(refs)
    norm_cams, scale = normalize_poses(cams, anchor_index)
    Ra = cams[anchor_index].rotation
    ta = cams[anchor_index].translation

    views = []
    for i, (cam, ncam) in enumerate(zip(cams, norm_cams)):
        is_ref = i < len(refs)
        scene = clean_scene if is_ref else corrupted_scene
        img = render(scene, cam, "rgb", background=background)
        cmap = transform_cmap(render(scene, cam, "cmap"), Ra, ta, scale)
        plucker = plucker_field(ncam)
        gt = None
        if include_gt and not is_ref:
            gt = render(clean_scene, cam, "rgb", background=background)
        views.append(PacketView(
            cam=ncam,
            image=img.pixels.astype(np.float32),
            cmap=np.concatenate([cmap.coords, cmap.validity[..., None]],
                                axis=-1).astype(np.float32),
            plucker=plucker.astype(np.float32),
            gt_image=None if gt is None else gt.pixels.astype(np.float32),
        ))
    packet = Packet(tuple(views), len(refs), len(targets), anchor_index, float(scale))
    packet.validate()
    return packet


# ---------------------------------------------------------------------------
# Packet file: versioned binary container, little-endian throughout.

_HEAD = struct.Struct("<4sBBIIIIId")  # magic, version, has_gt, n_ref, n_target, anchor, H, W, scale


def save_packet(path, packet: Packet) -> None:
    packet.validate()
    H, W = packet.views[0].image.shape[:2]
    has_gt = any(v.gt_image is not None for v in packet.views)
    layout = CHANNEL_LAYOUT.encode()
    with open(path, "wb") as f:
        f.write(_HEAD.pack(PACKET_MAGIC, PACKET_VERSION, int(has_gt),
                           packet.n_ref, packet.n_target, packet.anchor_index,
                           H, W, packet.scale))
        f.write(struct.pack("<H", len(layout)))
        f.write(layout)
        for v in packet.views:
            pose = np.eye(4)
            pose[:3, :3] = v.cam.rotation
            pose[:3, 3] = v.cam.translation
            f.write(pose.astype("<f8").tobytes())
            f.write(np.array([v.cam.fx, v.cam.fy, v.cam.cx, v.cam.cy], dtype="<f8").tobytes())
            f.write(struct.pack("<Bd", 1 if v.is_target else 0, v.cam.timestamp))
            f.write(np.ascontiguousarray(v.image, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(v.cmap, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(v.plucker, dtype="<f4").tobytes())
            if has_gt:
                gt = v.gt_image if v.gt_image is not None else np.zeros((H, W, 3), np.float32)
                f.write(np.ascontiguousarray(gt, dtype="<f4").tobytes())


def load_packet(path) -> Packet:
    with open(path, "rb") as f:
        head = f.read(_HEAD.size)
        magic, version, has_gt, n_ref, n_target, anchor, H, W, scale = _HEAD.unpack(head)
        if magic != PACKET_MAGIC:
            raise PacketError(f"not a packet file: bad magic {magic!r}")
        if version != PACKET_VERSION:
            raise PacketError(f"unsupported packet format version {version}")
        (layout_len,) = struct.unpack("<H", f.read(2))
        f.read(layout_len)

        def arr(shape):
            data = np.frombuffer(f.read(4 * int(np.prod(shape))), dtype="<f4")
            return data.reshape(shape).copy()

        views = []
        for i in range(n_ref + n_target):
            pose = np.frombuffer(f.read(128), dtype="<f8").reshape(4, 4).copy()
            fx, fy, cx, cy = np.frombuffer(f.read(32), dtype="<f8")
            role_byte, timestamp = struct.unpack("<Bd", f.read(9))
            image = arr((H, W, 3))
            cmap = arr((H, W, 4))
            plucker = arr((H, W, 6))
            gt = arr((H, W, 3)) if has_gt else None
            cam = CameraView(float(fx), float(fy), float(cx), float(cy),
                             pose[:3, :3], pose[:3, 3], W, H,
                             role="target" if role_byte else "reference",
                             timestamp=float(timestamp))
            if has_gt and role_byte == 0:
                gt = None  # references carry no supervision block
            views.append(PacketView(cam, image, cmap, plucker, gt))
    packet = Packet(tuple(views), n_ref, n_target, anchor, scale)
    packet.validate()
    return packet
