"""Procedural Gaussian scenes, camera trajectories, and controlled corruptions.

Everything here is a pure function of (inputs, seed): calling twice with the
same arguments yields bit-identical results.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

QUAT_NORM_TOL = 1e-6
ROT_ORTHO_TOL = 1e-6


class SceneError(ValueError):
    """Invalid scene/trajectory specification or malformed scene file."""


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) -> 3x3 rotation matrix."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ],
        dtype=np.float64,
    )


@dataclass(frozen=True)
class GaussianPrimitive:
    center: np.ndarray      # (3,) world units
    scale: np.ndarray       # (3,) positive world units
    rotation: np.ndarray    # (4,) unit quaternion (w, x, y, z)
    opacity: float          # in [0, 1]
    color: np.ndarray       # (3,) in [0, 1]

    def validate(self) -> None:
        if not (0.0 <= self.opacity <= 1.0):
            raise SceneError(f"opacity {self.opacity} outside [0, 1]")
        if not np.all(np.asarray(self.scale) > 0):
            raise SceneError(f"non-positive scale {self.scale}")
        n = float(np.linalg.norm(self.rotation))
        if abs(n - 1.0) > QUAT_NORM_TOL:
            raise SceneError(f"quaternion norm {n} differs from 1 by > {QUAT_NORM_TOL}")


@dataclass(frozen=True)
class GaussianScene:
    primitives: tuple[GaussianPrimitive, ...]
    bounds: np.ndarray      # (2, 3) axis-aligned [min; max]
    seed: int

    def validate(self) -> None:
        # an empty scene is legal: it renders as pure background
        lo, hi = self.bounds
        if not np.all(hi > lo):
            raise SceneError("degenerate bounds")
        for p in self.primitives:
            p.validate()
            if np.any(p.center < lo) or np.any(p.center > hi):
                raise SceneError(f"center {p.center} outside bounds")

    def as_arrays(self) -> dict[str, np.ndarray]:
        """Stack primitive fields into contiguous arrays for the renderer."""
        n = len(self.primitives)
        return {
            "centers": np.array([p.center for p in self.primitives],
                                dtype=np.float64).reshape(n, 3),
            "scales": np.array([p.scale for p in self.primitives],
                               dtype=np.float64).reshape(n, 3),
            "rotations": np.array([p.rotation for p in self.primitives],
                                  dtype=np.float64).reshape(n, 4),
            "opacities": np.array([p.opacity for p in self.primitives],
                                  dtype=np.float64).reshape(n),
            "colors": np.array([p.color for p in self.primitives],
                               dtype=np.float64).reshape(n, 3),
        }


@dataclass(frozen=True)
class CameraView:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray     # (3, 3) world-to-camera
    translation: np.ndarray  # (3,) world-to-camera
    width: int
    height: int
    role: str = "reference"  # "reference" | "target"
    timestamp: float = 0.0

    def validate(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise SceneError("focal lengths must be positive")
        R = self.rotation
        if np.max(np.abs(R @ R.T - np.eye(3))) > ROT_ORTHO_TOL:
            raise SceneError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ROT_ORTHO_TOL:
            raise SceneError("rotation determinant != +1")
        if self.role not in ("reference", "target"):
            raise SceneError(f"unknown role {self.role!r}")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def forward(self) -> np.ndarray:
        """Viewing direction (+z of the camera frame) in world coordinates."""
        return self.rotation[2].copy()

    def with_pose(self, rotation: np.ndarray, translation: np.ndarray) -> "CameraView":
        return dataclasses.replace(self, rotation=rotation, translation=translation)


DEFAULT_PALETTE = np.array(
    [
        [0.90, 0.10, 0.10],
        [0.10, 0.75, 0.20],
        [0.15, 0.25, 0.95],
        [0.95, 0.80, 0.10],
        [0.85, 0.15, 0.85],
        [0.10, 0.85, 0.90],
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class SceneSpec:
    count: int
    bounds: np.ndarray = field(
        default_factory=lambda: np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]])
    )
    palette: np.ndarray = field(default_factory=lambda: DEFAULT_PALETTE.copy())
    seed: int = 0


@dataclass(frozen=True)
class TrajectorySpec:
    kind: str                # "ring" | "line"
    n_views: int
    look_at: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius_or_step: float = 2.5
    width: int = 64
    height: int = 64
    focal: float | None = None   # pixels; defaults to 0.9 * width
    start: np.ndarray | None = None  # line only; default offset from look_at


def generate_scene(spec: SceneSpec) -> GaussianScene:
    """Draw a random scene of anisotropic Gaussian blobs inside the bounds."""
    if spec.count < 1:
        raise SceneError(f"count must be >= 1, got {spec.count}")
    bounds = np.asarray(spec.bounds, dtype=np.float64)
    lo, hi = bounds
    if not np.all(hi > lo):
        raise SceneError("zero-volume bounds")
    palette = np.asarray(spec.palette, dtype=np.float64)
    if palette.ndim != 2 or palette.shape[1] != 3:
        raise SceneError("palette must be (K, 3)")

    rng = np.random.default_rng(spec.seed)
    extent = hi - lo
    inset = 0.05 * extent
    base = float(np.min(extent))

    prims = []
    for _ in range(spec.count):
        center = rng.uniform(lo + inset, hi - inset)
        scale = rng.uniform(0.02, 0.08, size=3) * base
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        opacity = float(rng.uniform(0.55, 0.98))
        color = palette[rng.integers(len(palette))].copy()
        prims.append(GaussianPrimitive(center, scale, q, opacity, color))
    scene = GaussianScene(tuple(prims), bounds.copy(), spec.seed)
    scene.validate()
    return scene


def _look_at_rotation(position: np.ndarray, target: np.ndarray,
                      up: np.ndarray = np.array([0.0, 0.0, 1.0])) -> np.ndarray:
    """World-to-camera rotation with +z toward target, +x right, +y down."""
    fwd = target - position
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise SceneError("camera position coincides with look_at")
    fwd = fwd / n
    if abs(np.dot(fwd, up)) > 1 - 1e-8:  # degenerate up, pick another axis
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd])


def sample_trajectory(spec: TrajectorySpec) -> list[CameraView]:
    """Camera sequence on a ring (all looking at look_at) or a line (shared heading)."""
    if spec.n_views < 2:
        raise SceneError(f"n_views must be >= 2, got {spec.n_views}")
    look_at = np.asarray(spec.look_at, dtype=np.float64)
    focal = spec.focal if spec.focal is not None else 0.9 * spec.width
    cx, cy = spec.width / 2.0, spec.height / 2.0

    cams = []
    if spec.kind == "ring":
        r = float(spec.radius_or_step)
        for i in range(spec.n_views):
            th = 2.0 * np.pi * i / spec.n_views
            pos = look_at + r * np.array([np.cos(th), np.sin(th), 0.0])
            R = _look_at_rotation(pos, look_at)
            t = -R @ pos
            cams.append(CameraView(focal, focal, cx, cy, R, t,
                                   spec.width, spec.height, timestamp=float(i)))
    elif spec.kind == "line":
        step = float(spec.radius_or_step)
        start = (np.asarray(spec.start, dtype=np.float64) if spec.start is not None
                 else look_at + np.array([0.0, -3.0, 0.0]))
        R = _look_at_rotation(start, look_at)
        lateral = R[0]  # camera x-axis in world: march sideways, keep heading
        for i in range(spec.n_views):
            pos = start + i * step * lateral
            t = -R @ pos
            cams.append(CameraView(focal, focal, cx, cy, R.copy(), t,
                                   spec.width, spec.height, timestamp=float(i)))
    else:
        raise SceneError(f"unknown trajectory kind {spec.kind!r}")
    for c in cams:
        c.validate()
    return cams


def corrupt_scene(scene: GaussianScene, severity: float, seed: int) -> GaussianScene:
    """Degrade a scene the way a sparse splat fit degrades: dropout + floaters + jitter.

    severity=0 returns the scene unchanged. Three channels, all scaled by the
    one severity knob:
      - remove ~severity/2 of the primitives,
      - add low-opacity off-surface floaters,
      - jitter surviving centers with sigma proportional to severity.
    """
    if not (0.0 <= severity <= 1.0):
        raise SceneError(f"severity {severity} outside [0, 1]")
    if severity == 0.0:
        return scene

    rng = np.random.default_rng(seed)
    n = len(scene.primitives)
    lo, hi = scene.bounds
    extent = hi - lo

    # Channel (a): dropout.
    n_drop = int(np.floor(0.5 * severity * n))
    keep = np.ones(n, dtype=bool)
    if n_drop > 0:
        keep[rng.choice(n, size=n_drop, replace=False)] = False
        if not keep.any():  # never empty the scene
            keep[0] = True

    # Channel (c): center jitter on survivors.
    sigma = 0.08 * severity * float(np.mean(extent))
    prims = []
    for i, p in enumerate(scene.primitives):
        if not keep[i]:
            continue
        center = np.clip(p.center + rng.normal(0.0, sigma, size=3), lo, hi)
        prims.append(dataclasses.replace(p, center=center))

    # Channel (b): floaters, faint random blobs off any surface.
    n_float = max(1, int(np.round(0.3 * severity * n)))
    base = float(np.min(extent))
    for _ in range(n_float):
        center = rng.uniform(lo, hi)
        scale = rng.uniform(0.01, 0.05, size=3) * base
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        opacity = float(rng.uniform(0.1, 0.45))
        color = rng.uniform(0.0, 1.0, size=3)
        prims.append(GaussianPrimitive(center, scale, q, opacity, color))

    out = GaussianScene(tuple(prims), scene.bounds.copy(), seed)
    out.validate()
    return out


# ---------------------------------------------------------------------------
# Scene file: self-describing text, one record per primitive, lossless floats.

SCENE_FORMAT_VERSION = 1


def _fmt(x: float) -> str:
    return repr(float(x))


def save_scene(path, scene: GaussianScene) -> None:
    lines = [
        f"mvenhance-scene v{SCENE_FORMAT_VERSION}",
        "# fields: center(3) scale(3) quat_wxyz(4) opacity color(3)",
        "bounds " + " ".join(_fmt(v) for v in scene.bounds.ravel()),
        f"seed {scene.seed}",
        f"count {len(scene.primitives)}",
    ]
    for p in scene.primitives:
        vals = [*p.center, *p.scale, *p.rotation, p.opacity, *p.color]
        lines.append(" ".join(_fmt(v) for v in vals))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_scene(path) -> GaussianScene:
    with open(path) as f:
        lines = [ln for ln in f.read().splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split()
    if header[0] != "mvenhance-scene" or header[1] != f"v{SCENE_FORMAT_VERSION}":
        raise SceneError(f"unsupported scene file header: {lines[0]!r}")
    bounds = np.array([float(v) for v in lines[1].split()[1:]]).reshape(2, 3)
    seed = int(lines[2].split()[1])
    count = int(lines[3].split()[1])
    prims = []
    for ln in lines[4 : 4 + count]:
        v = [float(x) for x in ln.split()]
        prims.append(
            GaussianPrimitive(
                np.array(v[0:3]), np.array(v[3:6]), np.array(v[6:10]), v[10], np.array(v[11:14])
            )
        )
    if len(prims) != count:
        raise SceneError(f"scene file truncated: expected {count} records, got {len(prims)}")
    scene = GaussianScene(tuple(prims), bounds, seed)
    scene.validate()
    return scene
