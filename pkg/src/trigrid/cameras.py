"""Cameras and ray generation.

Coordinate conventions
----------------------
World is right-handed with +y up; the reconstruction volume is the axis
aligned cube [-0.5, 0.5]^3 (1 world unit = 100 cm). Every camera looks at
the cube center. A camera's position direction is

    d(azimuth, elevation) = (sin az * cos el, sin el, cos az * cos el)

so azimuth 0 is the front view on the +z axis looking along -z, azimuth 90
sits on +x, 180 on -z (back), 270 on -x. Elevation raises the camera toward
+y. Image row 0 is the top of the frame (+y side); column 0 is the -right
side, where right = normalize(cross(forward, world_up)).

Orthographic cameras place the image plane `distance` world units from the
center (default 0.5, i.e. on the cube face) and shoot parallel rays;
the plane spans [-ortho_halfwidth, +ortho_halfwidth] in camera x/y.
Perspective cameras sit `distance` units out with a full field of view of
`fov_deg` degrees across the image height/width (square images).

Ray t parameters measure world distance from the ray origin (the ortho
plane, or the perspective eye); depth maps use the same parameterization.
tNear/tFar come from slab intersection with the cube, clamped to t >= 0;
rays that miss the cube get tNear == tFar == 0.
"""

import math
from dataclasses import dataclass, field

import numpy as np

CUBE_MIN = -0.5
CUBE_MAX = 0.5

ORTHO_VIEW_AZIMUTHS = {"front": 0.0, "right": 90.0, "back": 180.0, "left": 270.0}


def orbit_distance(fov_deg: float) -> float:
    """Smallest eye distance at which the cube's circumsphere fits the frustum."""
    return (math.sqrt(3.0) / 2.0) / math.sin(math.radians(fov_deg) / 2.0)


@dataclass(frozen=True)
class Camera:
    kind: str  # "ortho" | "persp"
    azimuth_deg: float = 0.0
    elevation_deg: float = 0.0
    size: int = 512
    fov_deg: float = 30.0  # persp only
    distance: float = 0.5  # ortho: plane offset; persp: eye distance
    ortho_halfwidth: float = 0.5  # ortho only

    def __post_init__(self):
        if self.kind not in ("ortho", "persp"):
            raise ValueError(f"unknown camera kind {self.kind!r}")
        if self.kind == "persp" and not (0.0 < self.fov_deg < 180.0):
            raise ValueError(f"fov_deg must lie in (0, 180), got {self.fov_deg}")
        if self.distance <= 0.0:
            raise ValueError("camera distance must be positive")
        if abs(self.elevation_deg) >= 89.9:
            raise ValueError("elevation too close to the pole for a stable basis")
        if self.size < 1:
            raise ValueError("image size must be >= 1")

    def basis(self):
        """Returns (eye_dir, forward, right, up) as float64 unit vectors."""
        az = math.radians(self.azimuth_deg)
        el = math.radians(self.elevation_deg)
        d = np.array(
            [math.sin(az) * math.cos(el), math.sin(el), math.cos(az) * math.cos(el)]
        )
        fwd = -d
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
        right = right / np.linalg.norm(right)
        up = np.cross(right, fwd)
        up = up / np.linalg.norm(up)
        return d, fwd, right, up

    def to_json(self) -> dict:
        out = {
            "type": self.kind,
            "azimuth_deg": self.azimuth_deg,
            "elevation_deg": self.elevation_deg,
            "distance": self.distance,
        }
        if self.kind == "persp":
            out["fov_deg"] = self.fov_deg
        else:
            out["ortho_halfwidth"] = self.ortho_halfwidth
        return out

    @staticmethod
    def from_json(obj: dict, size: int) -> "Camera":
        kind = obj.get("type")
        if kind not in ("ortho", "persp"):
            raise ValueError(f"camera 'type' must be 'ortho' or 'persp', got {kind!r}")
        return Camera(
            kind=kind,
            azimuth_deg=float(obj["azimuth_deg"]),
            elevation_deg=float(obj.get("elevation_deg", 0.0)),
            size=size,
            fov_deg=float(obj.get("fov_deg", 30.0)),
            distance=float(obj.get("distance", 0.5 if kind == "ortho" else orbit_distance(30.0))),
            ortho_halfwidth=float(obj.get("ortho_halfwidth", 0.5)),
        )


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float


def ortho_camera(name_or_azimuth, elevation_deg=0.0, size=512, halfwidth=0.5, distance=0.5):
    """Convenience constructor; accepts a named view (front/right/back/left)."""
    if isinstance(name_or_azimuth, str):
        if name_or_azimuth not in ORTHO_VIEW_AZIMUTHS:
            raise ValueError(f"unknown view name {name_or_azimuth!r}")
        az = ORTHO_VIEW_AZIMUTHS[name_or_azimuth]
    else:
        az = float(name_or_azimuth)
    return Camera(
        "ortho",
        azimuth_deg=az,
        elevation_deg=elevation_deg,
        size=size,
        ortho_halfwidth=halfwidth,
        distance=distance,
    )


def make_orbit_cameras(n: int, elevation_deg: float = 0.0, fov_deg: float = 30.0, size: int = 512):
    """n perspective cameras at azimuths k*360/n, cube-fitting distance."""
    if n < 1:
        raise ValueError("need at least one orbit camera")
    dist = orbit_distance(fov_deg)
    return [
        Camera(
            "persp",
            azimuth_deg=360.0 * k / n,
            elevation_deg=elevation_deg,
            size=size,
            fov_deg=fov_deg,
            distance=dist,
        )
        for k in range(n)
    ]


def sample_random_camera(rng: np.random.Generator, size: int = 512) -> Camera:
    """Random perspective view: azimuth ~ U[0,360), elevation ~ N(0, 20 deg)
    clamped to [-60, 60], fixed 30 deg full field of view."""
    az = float(rng.uniform(0.0, 360.0))
    el = float(np.clip(rng.normal(0.0, 20.0), -60.0, 60.0))
    return Camera(
        "persp",
        azimuth_deg=az,
        elevation_deg=el,
        size=size,
        fov_deg=30.0,
        distance=orbit_distance(30.0),
    )


def _cube_slab(origins, dirs):
    """Slab intersection with the unit cube; returns (t_near, t_far) clamped
    to t >= 0, with t_near == t_far for misses."""
    o = origins
    d = dirs
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(d != 0.0, 1.0 / d, np.inf)
        t0 = (CUBE_MIN - o) * inv
        t1 = (CUBE_MAX - o) * inv
    lo = np.minimum(t0, t1)
    hi = np.maximum(t0, t1)
    # axes with zero direction: ray parallel to the slab; inside iff origin within
    par_ok = (d != 0.0) | ((o >= CUBE_MIN) & (o <= CUBE_MAX))
    lo = np.where(d != 0.0, lo, -np.inf)
    hi = np.where(d != 0.0, hi, np.inf)
    tn = np.max(lo, axis=-1)
    tf = np.min(hi, axis=-1)
    ok = (tf >= tn) & np.all(par_ok, axis=-1)
    tn = np.maximum(tn, 0.0)
    tf = np.maximum(tf, tn)
    tn = np.where(ok, tn, 0.0)
    tf = np.where(ok, tf, 0.0)
    return tn, tf


def pixel_grid_rays(cam: Camera, width=None, height=None):
    """Rays through every pixel center; returns (origins, dirs, t_near, t_far)
    with shapes (H*W, 3), (H*W, 3), (H*W,), (H*W,) in row-major pixel order."""
    w = cam.size if width is None else width
    h = cam.size if height is None else height
    d, fwd, right, up = cam.basis()
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    xn = (jj.ravel() + 0.5) / w * 2.0 - 1.0
    yn = 1.0 - (ii.ravel() + 0.5) / h * 2.0
    if cam.kind == "ortho":
        hw = cam.ortho_halfwidth
        origins = (
            d[None, :] * cam.distance
            + xn[:, None] * hw * right[None, :]
            + yn[:, None] * hw * up[None, :]
        )
        dirs = np.broadcast_to(fwd, origins.shape).copy()
    else:
        tan_half = math.tan(math.radians(cam.fov_deg) / 2.0)
        eye = d * cam.distance
        raw = (
            fwd[None, :]
            + xn[:, None] * tan_half * right[None, :]
            + yn[:, None] * tan_half * up[None, :]
        )
        dirs = raw / np.linalg.norm(raw, axis=1, keepdims=True)
        origins = np.broadcast_to(eye, dirs.shape).copy()
    tn, tf = _cube_slab(origins, dirs)
    return origins, dirs, tn, tf


def cast_ray(cam: Camera, px) -> Ray:
    """Single-pixel ray; px = (row, col) with both inside the image."""
    i, j = int(px[0]), int(px[1])
    if not (0 <= i < cam.size and 0 <= j < cam.size):
        raise ValueError(f"pixel {px} outside a {cam.size}x{cam.size} image")
    d, fwd, right, up = cam.basis()
    xn = (j + 0.5) / cam.size * 2.0 - 1.0
    yn = 1.0 - (i + 0.5) / cam.size * 2.0
    if cam.kind == "ortho":
        origin = d * cam.distance + xn * cam.ortho_halfwidth * right + yn * cam.ortho_halfwidth * up
        direction = fwd.copy()
    else:
        tan_half = math.tan(math.radians(cam.fov_deg) / 2.0)
        origin = d * cam.distance
        direction = fwd + xn * tan_half * right + yn * tan_half * up
        direction = direction / np.linalg.norm(direction)
    tn, tf = _cube_slab(origin[None, :], direction[None, :])
    return Ray(origin=origin, direction=direction, t_near=float(tn[0]), t_far=float(tf[0]))
