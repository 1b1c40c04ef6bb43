"""On-disk scene layout.

A scene directory holds one manifest.json plus per-view rasters:

    manifest.json     {resolution, unit_cm: 100, views: [...], roi?, mesh_gt?}
    <view>_rgb.png    8-bit RGB, background composited to white
    <view>_sil.png    8-bit grayscale silhouette
    <view>_depth.pfm  float32 depth in world units, +inf where invalid

Each view entry: {name, camera: {type: "ortho"|"persp", azimuth_deg,
elevation_deg, fov_deg?, ortho_halfwidth?, distance}, rgb, depth, silhouette}.
The ROI is a 2D front-view rectangle plus a 3D axis-aligned prism; the GT
mesh is a v/f-only OBJ. World convention: 1 world unit = 100 cm, scene
volume the cube [-0.5, 0.5]^3.

Loaded bundles are immutable by convention and validated: shared resolution,
silhouettes in [0,1], depth finite and non-negative wherever silhouette
exceeds 0.5.
"""

import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cameras import Camera
from .formats import atomic_write_bytes, read_obj, read_pfm, read_png, write_obj, write_pfm, write_png


class SceneError(ValueError):
    pass


@dataclass
class TriMesh:
    vertices: np.ndarray  # (N, 3) float64, world units
    faces: np.ndarray  # (M, 3) int64

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces):
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                raise SceneError("mesh face index out of range")
            f = self.faces
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise SceneError("mesh contains a degenerate face (repeated vertex index)")

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0


@dataclass
class RoiBox:
    rect2d: tuple  # (x0, y0, x1, y1) pixels in the front view
    prism3d: tuple  # ((xmin, ymin, zmin), (xmax, ymax, zmax)) world units

    def __post_init__(self):
        x0, y0, x1, y1 = self.rect2d
        if not (x0 < x1 and y0 < y1):
            raise SceneError(f"roi rect2d must satisfy x0<x1, y0<y1: {self.rect2d}")
        lo, hi = np.asarray(self.prism3d[0], float), np.asarray(self.prism3d[1], float)
        if not np.all(lo < hi):
            raise SceneError(f"roi prism3d min must be < max componentwise: {self.prism3d}")

    def to_json(self):
        return {
            "rect2d": [float(v) for v in self.rect2d],
            "prism3d": [[float(v) for v in c] for c in self.prism3d],
        }

    @staticmethod
    def from_json(obj):
        return RoiBox(rect2d=tuple(obj["rect2d"]),
                      prism3d=(tuple(obj["prism3d"][0]), tuple(obj["prism3d"][1])))


def full_cube_roi(resolution: int) -> RoiBox:
    return RoiBox(rect2d=(0.0, 0.0, float(resolution), float(resolution)),
                  prism3d=((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5)))


@dataclass
class View:
    name: str
    camera: Camera
    rgb: np.ndarray  # (H, W, 3) float32 in [0,1]
    depth: np.ndarray  # (H, W) float32, +inf invalid
    silhouette: np.ndarray  # (H, W) float32 in [0,1]


@dataclass
class SceneBundle:
    views: list
    resolution: int = 512
    roi: Optional[RoiBox] = None
    mesh_gt: Optional[TriMesh] = None

    def view(self, name: str) -> View:
        for v in self.views:
            if v.name == name:
                return v
        raise SceneError(f"scene has no view named {name!r}")

    def view_names(self):
        return [v.name for v in self.views]


def validate_bundle(bundle: SceneBundle) -> None:
    if not bundle.views:
        raise SceneError("scene must contain >= 1 view")
    res = bundle.resolution
    for v in bundle.views:
        for label, arr, shape in (
            ("rgb", v.rgb, (res, res, 3)),
            ("depth", v.depth, (res, res)),
            ("silhouette", v.silhouette, (res, res)),
        ):
            if arr.shape != shape:
                raise SceneError(
                    f"resolution mismatch for view '{v.name}': {label} has shape "
                    f"{arr.shape}, expected {shape}"
                )
        if v.silhouette.min() < 0.0 or v.silhouette.max() > 1.0:
            raise SceneError(f"view '{v.name}': silhouette outside [0,1]")
        inside = v.silhouette > 0.5
        d = v.depth[inside]
        if d.size and not np.all(np.isfinite(d)):
            raise SceneError(f"view '{v.name}': depth not finite where silhouette > 0.5")
        if d.size and d.min() < 0.0:
            raise SceneError(f"view '{v.name}': negative depth inside silhouette")


def save_scene(bundle: SceneBundle, path: str) -> None:
    validate_bundle(bundle)
    os.makedirs(path, exist_ok=True)
    views_json = []
    for v in bundle.views:
        rgb_name = f"{v.name}_rgb.png"
        sil_name = f"{v.name}_sil.png"
        depth_name = f"{v.name}_depth.pfm"
        write_png(os.path.join(path, rgb_name), v.rgb)
        write_png(os.path.join(path, sil_name), v.silhouette)
        write_pfm(os.path.join(path, depth_name), v.depth)
        views_json.append({
            "name": v.name,
            "camera": v.camera.to_json(),
            "rgb": rgb_name,
            "depth": depth_name,
            "silhouette": sil_name,
        })
    manifest = {"resolution": bundle.resolution, "unit_cm": 100, "views": views_json}
    if bundle.roi is not None:
        manifest["roi"] = bundle.roi.to_json()
    if bundle.mesh_gt is not None:
        manifest["mesh_gt"] = "mesh_gt.obj"
        write_obj(os.path.join(path, "mesh_gt.obj"), bundle.mesh_gt.vertices, bundle.mesh_gt.faces)
    blob = json.dumps(manifest, indent=2, sort_keys=True).encode() + b"\n"
    atomic_write_bytes(os.path.join(path, "manifest.json"), blob)


def _load_raster(path: str, kind: str, view_name: str):
    if not os.path.exists(path):
        raise SceneError(f"missing {kind} for view '{view_name}': {path}")
    try:
        if path.endswith(".pfm"):
            return read_pfm(path)
        return read_png(path)
    except SceneError:
        raise
    except Exception as e:  # surface decode errors with the offending path
        raise SceneError(f"failed to decode {kind} for view '{view_name}' at {path}: {e}")


def load_scene(path: str) -> SceneBundle:
    man_path = os.path.join(path, "manifest.json")
    if not os.path.exists(man_path):
        raise SceneError(f"missing manifest.json in {path}")
    with open(man_path, "r", encoding="utf-8") as f:
        try:
            manifest = json.load(f)
        except json.JSONDecodeError as e:
            raise SceneError(f"malformed manifest {man_path}: {e}")
    for key in ("resolution", "views"):
        if key not in manifest:
            raise SceneError(f"manifest missing required field '{key}'")
    res = int(manifest["resolution"])
    views = []
    for entry in manifest["views"]:
        name = entry.get("name")
        if not name:
            raise SceneError("manifest view entry missing 'name'")
        for key in ("camera", "rgb", "depth", "silhouette"):
            if key not in entry:
                raise SceneError(f"view '{name}' missing field '{key}'")
        cam = Camera.from_json(entry["camera"], size=res)
        rgb = _load_raster(os.path.join(path, entry["rgb"]), "rgb", name)
        if rgb.ndim == 3 and rgb.shape[2] == 4:
            rgb = rgb[:, :, :3]
        if rgb.ndim != 3:
            raise SceneError(f"view '{name}': rgb must be a color image")
        depth = _load_raster(os.path.join(path, entry["depth"]), "depth", name)
        sil = _load_raster(os.path.join(path, entry["silhouette"]), "silhouette", name)
        if sil.ndim == 3:
            sil = sil[:, :, 0]
        views.append(View(name=name, camera=cam, rgb=rgb, depth=depth, silhouette=sil))
    roi = RoiBox.from_json(manifest["roi"]) if "roi" in manifest else None
    mesh = None
    if "mesh_gt" in manifest:
        mesh_path = os.path.join(path, manifest["mesh_gt"])
        if not os.path.exists(mesh_path):
            raise SceneError(f"missing mesh_gt: {mesh_path}")
        v, f = read_obj(mesh_path)
        mesh = TriMesh(v, f)
    bundle = SceneBundle(views=views, resolution=res, roi=roi, mesh_gt=mesh)
    validate_bundle(bundle)
    return bundle
