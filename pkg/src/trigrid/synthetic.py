"""Analytic test scenes: spheres, boxes and capsules with flat or two-tone
albedo, rendered exactly by ray casting (diffuse albedo only, no shading,
white background) at the four fixed orthographic azimuths plus optional
held-out ortho and perspective orbit views.

Rendering supersamples by an integer factor (default 2, i.e. 1024px for a
512px target) and box-downsamples. RGB and silhouette are quantized to
k/255 in memory so that a save/load round trip through 8-bit PNG is the
identity. A pixel counts as inside the silhouette iff its quantized
coverage exceeds 0.5; depth is the mean hit distance of its covered
subsamples there and +inf elsewhere, which enforces the bundle invariant
silhouette > 0.5 <=> finite depth exactly.
"""

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .cameras import Camera, make_orbit_cameras, ortho_camera, pixel_grid_rays
from .scene import RoiBox, SceneBundle, TriMesh, View, full_cube_roi


@dataclass
class Albedo:
    """Flat color, or a two-tone split by the sign of dot(p - center, axis)."""

    color: tuple = (0.8, 0.2, 0.2)
    kind: str = "flat"  # flat | twotone
    axis: tuple = (1.0, 0.0, 0.0)
    color_neg: tuple = (0.2, 0.3, 0.8)

    def __call__(self, pts: np.ndarray, center: np.ndarray) -> np.ndarray:
        out = np.empty((len(pts), 3), dtype=np.float64)
        out[:] = self.color
        if self.kind == "twotone":
            side = (pts - center) @ np.asarray(self.axis, dtype=np.float64)
            out[side < 0.0] = self.color_neg
        elif self.kind != "flat":
            raise ValueError(f"unknown albedo kind {self.kind!r}")
        return out

    def to_json(self):
        if self.kind == "flat":
            return {"kind": "flat", "color": list(self.color)}
        return {"kind": "twotone", "color": list(self.color), "axis": list(self.axis),
                "color_neg": list(self.color_neg)}

    @staticmethod
    def from_json(obj):
        if isinstance(obj, (list, tuple)):
            return Albedo(color=tuple(obj))
        return Albedo(color=tuple(obj.get("color", (0.8, 0.2, 0.2))),
                      kind=obj.get("kind", "flat"),
                      axis=tuple(obj.get("axis", (1.0, 0.0, 0.0))),
                      color_neg=tuple(obj.get("color_neg", (0.2, 0.3, 0.8))))


@dataclass
class Sphere:
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.25
    albedo: Albedo = dc_field(default_factory=Albedo)

    def bounds(self):
        c = np.asarray(self.center, float)
        return c - self.radius, c + self.radius

    def hit(self, o, d):
        c = np.asarray(self.center, float)
        oc = o - c
        b = np.sum(oc * d, axis=1)
        cc = np.sum(oc * oc, axis=1) - self.radius**2
        disc = b * b - cc
        t = np.full(len(o), np.inf)
        ok = disc >= 0.0
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = -b - sq
        t1 = -b + sq
        near = np.where(t0 > 1e-9, t0, np.where(t1 > 1e-9, t1, np.inf))
        t[ok] = near[ok]
        return t

    def shade(self, pts):
        return self.albedo(pts, np.asarray(self.center, float))


@dataclass
class BoxPrim:
    bmin: tuple = (-0.2, -0.2, -0.2)
    bmax: tuple = (0.2, 0.2, 0.2)
    albedo: Albedo = dc_field(default_factory=Albedo)

    def bounds(self):
        return np.asarray(self.bmin, float), np.asarray(self.bmax, float)

    def hit(self, o, d):
        lo = np.asarray(self.bmin, float)
        hi = np.asarray(self.bmax, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(d != 0.0, 1.0 / d, np.inf)
        t0 = (lo - o) * inv
        t1 = (hi - o) * inv
        par_ok = (d != 0.0) | ((o >= lo) & (o <= hi))
        tn = np.max(np.where(d != 0.0, np.minimum(t0, t1), -np.inf), axis=1)
        tf = np.min(np.where(d != 0.0, np.maximum(t0, t1), np.inf), axis=1)
        ok = (tf >= tn) & (tf > 1e-9) & np.all(par_ok, axis=1)
        near = np.where(tn > 1e-9, tn, tf)
        return np.where(ok, near, np.inf)

    def shade(self, pts):
        c = 0.5 * (np.asarray(self.bmin, float) + np.asarray(self.bmax, float))
        return self.albedo(pts, c)


@dataclass
class Capsule:
    p0: tuple = (0.0, -0.2, 0.0)
    p1: tuple = (0.0, 0.2, 0.0)
    radius: float = 0.1
    albedo: Albedo = dc_field(default_factory=Albedo)

    def bounds(self):
        a = np.asarray(self.p0, float)
        b = np.asarray(self.p1, float)
        return np.minimum(a, b) - self.radius, np.maximum(a, b) + self.radius

    def hit(self, o, d):
        a = np.asarray(self.p0, float)
        b = np.asarray(self.p1, float)
        ab = b - a
        ab2 = float(ab @ ab)
        t_best = np.full(len(o), np.inf)
        # infinite cylinder about the segment axis, clipped to the segment span
        if ab2 > 0:
            u = ab / math.sqrt(ab2)
            oa = o - a
            d_perp = d - np.outer(d @ u, u)
            o_perp = oa - np.outer(oa @ u, u)
            A = np.sum(d_perp * d_perp, axis=1)
            B = np.sum(d_perp * o_perp, axis=1)
            Cc = np.sum(o_perp * o_perp, axis=1) - self.radius**2
            disc = B * B - A * Cc
            with np.errstate(divide="ignore", invalid="ignore"):
                sq = np.sqrt(np.maximum(disc, 0.0))
                for sign in (-1.0, 1.0):
                    t = np.where(A > 0, (-B + sign * sq) / A, np.inf)
                    p = o + t[:, None] * d
                    s = (p - a) @ u
                    ok = (disc >= 0) & (t > 1e-9) & (s >= 0) & (s <= math.sqrt(ab2))
                    t_best = np.where(ok & (t < t_best), t, t_best)
        for cap_c in (a, b):
            t = Sphere(center=tuple(cap_c), radius=self.radius).hit(o, d)
            t_best = np.minimum(t_best, t)
        return t_best

    def shade(self, pts):
        c = 0.5 * (np.asarray(self.p0, float) + np.asarray(self.p1, float))
        return self.albedo(pts, c)


@dataclass
class SyntheticSpec:
    primitives: list
    resolution: int = 512
    supersample: int = 2
    orbit_views: int = 0  # perspective GT orbit views at 30 deg fov
    holdout_azimuths: tuple = ()  # extra ortho views, e.g. (45.0,)

    def to_json(self):
        prims = []
        for p in self.primitives:
            if isinstance(p, Sphere):
                prims.append({"type": "sphere", "center": list(p.center), "radius": p.radius,
                              "albedo": p.albedo.to_json()})
            elif isinstance(p, BoxPrim):
                prims.append({"type": "box", "bmin": list(p.bmin), "bmax": list(p.bmax),
                              "albedo": p.albedo.to_json()})
            elif isinstance(p, Capsule):
                prims.append({"type": "capsule", "p0": list(p.p0), "p1": list(p.p1),
                              "radius": p.radius, "albedo": p.albedo.to_json()})
            else:
                raise ValueError(f"unknown primitive {type(p)}")
        return {"primitives": prims, "resolution": self.resolution,
                "supersample": self.supersample, "orbit_views": self.orbit_views,
                "holdout_azimuths": list(self.holdout_azimuths)}

    @staticmethod
    def from_json(obj):
        prims = []
        for e in obj.get("primitives", []):
            alb = Albedo.from_json(e.get("albedo", [0.8, 0.2, 0.2]))
            if e["type"] == "sphere":
                prims.append(Sphere(center=tuple(e["center"]), radius=float(e["radius"]), albedo=alb))
            elif e["type"] == "box":
                prims.append(BoxPrim(bmin=tuple(e["bmin"]), bmax=tuple(e["bmax"]), albedo=alb))
            elif e["type"] == "capsule":
                prims.append(Capsule(p0=tuple(e["p0"]), p1=tuple(e["p1"]),
                                     radius=float(e["radius"]), albedo=alb))
            else:
                raise ValueError(f"unknown primitive type {e['type']!r}")
        return SyntheticSpec(primitives=prims,
                             resolution=int(obj.get("resolution", 512)),
                             supersample=int(obj.get("supersample", 2)),
                             orbit_views=int(obj.get("orbit_views", 0)),
                             holdout_azimuths=tuple(obj.get("holdout_azimuths", ())))


def _check_bounds(primitives):
    for p in primitives:
        lo, hi = p.bounds()
        if np.any(lo < -0.5) or np.any(hi > 0.5):
            raise ValueError(
                f"primitive exits unit cube: {type(p).__name__} spans {lo} .. {hi}"
            )


def quantize8(img: np.ndarray) -> np.ndarray:
    """Round to the 8-bit lattice k/255 (PNG round-trip becomes lossless)."""
    return (np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


def render_analytic(primitives, cam: Camera, supersample: int = 2):
    """Exact primary-ray render: returns (rgb, sil, depth) at cam.size."""
    ss = max(1, int(supersample))
    hs = cam.size * ss
    o, d, _, _ = pixel_grid_rays(cam, width=hs, height=hs)
    t = np.full(len(o), np.inf)
    pid = np.full(len(o), -1, dtype=np.int64)
    for i, prim in enumerate(primitives):
        ti = prim.hit(o, d)
        closer = ti < t
        t[closer] = ti[closer]
        pid[closer] = i
    rgb = np.ones((len(o), 3), dtype=np.float64)
    for i, prim in enumerate(primitives):
        sel = pid == i
        if np.any(sel):
            pts = o[sel] + t[sel, None] * d[sel]
            rgb[sel] = prim.shade(pts)
    hit = np.isfinite(t)
    rgb4 = rgb.reshape(hs, hs, 3)
    hit4 = hit.reshape(hs, hs).astype(np.float64)
    t4 = np.where(hit, t, 0.0).reshape(hs, hs)
    # box downsample
    n = cam.size
    rgb_px = rgb4.reshape(n, ss, n, ss, 3).mean(axis=(1, 3))
    cover = hit4.reshape(n, ss, n, ss).mean(axis=(1, 3))
    tsum = t4.reshape(n, ss, n, ss).sum(axis=(1, 3))
    hitn = hit4.reshape(n, ss, n, ss).sum(axis=(1, 3))
    rgb_q = quantize8(rgb_px)
    sil_q = quantize8(cover)
    inside = sil_q > 0.5
    with np.errstate(invalid="ignore", divide="ignore"):
        depth = np.where(inside & (hitn > 0), tsum / np.maximum(hitn, 1), np.inf)
    return rgb_q, sil_q, depth.astype(np.float32)


def sphere_mesh(center, radius, n_lat: int = 48, n_lon: int = 96) -> TriMesh:
    """UV tessellation with vertices exactly on the sphere."""
    cx, cy, cz = center
    verts = [(cx, cy + radius, cz)]
    for i in range(1, n_lat):
        th = math.pi * i / n_lat
        for j in range(n_lon):
            ph = 2.0 * math.pi * j / n_lon
            verts.append((cx + radius * math.sin(th) * math.cos(ph),
                          cy + radius * math.cos(th),
                          cz + radius * math.sin(th) * math.sin(ph)))
    verts.append((cx, cy - radius, cz))
    last = len(verts) - 1
    faces = []
    for j in range(n_lon):
        faces.append((0, 1 + (j + 1) % n_lon, 1 + j))
    for i in range(n_lat - 2):
        a0 = 1 + i * n_lon
        b0 = 1 + (i + 1) * n_lon
        for j in range(n_lon):
            j1 = (j + 1) % n_lon
            faces.append((a0 + j, a0 + j1, b0 + j))
            faces.append((a0 + j1, b0 + j1, b0 + j))
    for j in range(n_lon):
        a0 = 1 + (n_lat - 2) * n_lon
        faces.append((last, a0 + j, a0 + (j + 1) % n_lon))
    return TriMesh(np.asarray(verts), np.asarray(faces))


def box_mesh(bmin, bmax) -> TriMesh:
    lo = np.asarray(bmin, float)
    hi = np.asarray(bmax, float)
    corners = np.array([[lo[0], lo[1], lo[2]], [hi[0], lo[1], lo[2]],
                        [hi[0], hi[1], lo[2]], [lo[0], hi[1], lo[2]],
                        [lo[0], lo[1], hi[2]], [hi[0], lo[1], hi[2]],
                        [hi[0], hi[1], hi[2]], [lo[0], hi[1], hi[2]]])
    quads = [(0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4), (2, 3, 7, 6), (1, 2, 6, 5), (3, 0, 4, 7)]
    faces = []
    for a, b, c, d in quads:
        faces.append((a, b, c))
        faces.append((a, c, d))
    return TriMesh(corners, np.asarray(faces))


def capsule_mesh(p0, p1, radius, n_seg: int = 32, n_ring: int = 16) -> TriMesh:
    """Lathe tessellation; assumes the axis is not degenerate."""
    a = np.asarray(p0, float)
    b = np.asarray(p1, float)
    axis = b - a
    ln = np.linalg.norm(axis)
    if ln < 1e-12:
        return sphere_mesh(tuple(a), radius)
    u = axis / ln
    ref = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(u, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)
    profile = []  # (axial offset from a, radial distance)
    for i in range(n_ring + 1):
        th = math.pi / 2 * i / n_ring
        profile.append((-radius * math.cos(th), radius * math.sin(th)))
    for i in range(1, n_ring + 1):
        th = math.pi / 2 * i / n_ring
        profile.append((ln + radius * math.sin(th), radius * math.cos(th)))
    verts = []
    rows = []
    for h, r in profile:
        if r <= 1e-12:
            rows.append((len(verts), 1))
            verts.append(a + u * h)
        else:
            rows.append((len(verts), n_seg))
            for j in range(n_seg):
                ph = 2 * math.pi * j / n_seg
                verts.append(a + u * h + r * (math.cos(ph) * e1 + math.sin(ph) * e2))
    faces = []
    for k in range(len(rows) - 1):
        i0, c0 = rows[k]
        i1, c1 = rows[k + 1]
        if c0 == 1 and c1 > 1:
            for j in range(c1):
                faces.append((i0, i1 + j, i1 + (j + 1) % c1))
        elif c0 > 1 and c1 == 1:
            for j in range(c0):
                faces.append((i1, i0 + (j + 1) % c0, i0 + j))
        elif c0 > 1 and c1 > 1:
            for j in range(c0):
                j1 = (j + 1) % c0
                faces.append((i0 + j, i1 + j, i1 + j1))
                faces.append((i0 + j, i1 + j1, i0 + j1))
    return TriMesh(np.asarray(verts), np.asarray(faces))


def primitive_mesh(prim) -> TriMesh:
    if isinstance(prim, Sphere):
        return sphere_mesh(prim.center, prim.radius)
    if isinstance(prim, BoxPrim):
        return box_mesh(prim.bmin, prim.bmax)
    if isinstance(prim, Capsule):
        return capsule_mesh(prim.p0, prim.p1, prim.radius)
    raise ValueError(f"unknown primitive {type(prim)}")


def merge_meshes(meshes) -> TriMesh:
    vs = []
    fs = []
    off = 0
    for m in meshes:
        vs.append(m.vertices)
        fs.append(m.faces + off)
        off += len(m.vertices)
    if not vs:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriMesh(np.concatenate(vs), np.concatenate(fs))


def gen_synthetic(spec: SyntheticSpec, seed: int = 0) -> SceneBundle:
    """Deterministic analytic scene bundle (seed kept for API symmetry)."""
    _check_bounds(spec.primitives)
    res = spec.resolution
    cams = [("front", ortho_camera("front", size=res)),
            ("right", ortho_camera("right", size=res)),
            ("back", ortho_camera("back", size=res)),
            ("left", ortho_camera("left", size=res))]
    for az in spec.holdout_azimuths:
        cams.append((f"holdout_{int(round(az))}", ortho_camera(float(az), size=res)))
    for k, cam in enumerate(make_orbit_cameras(spec.orbit_views, size=res) if spec.orbit_views else []):
        cams.append((f"orbit_{k:02d}", cam))
    views = []
    for name, cam in cams:
        rgb, sil, depth = render_analytic(spec.primitives, cam, spec.supersample)
        views.append(View(name=name, camera=cam, rgb=rgb, depth=depth, silhouette=sil))
    mesh = merge_meshes([primitive_mesh(p) for p in spec.primitives]) if spec.primitives else None
    return SceneBundle(views=views, resolution=res, roi=full_cube_roi(res), mesh_gt=mesh)


def preset_spec(name: str, resolution: int = 512, orbit_views: int = 12,
                holdout: bool = True) -> SyntheticSpec:
    hold = (45.0,) if holdout else ()
    if name == "sphere":
        prims = [Sphere(radius=0.25, albedo=Albedo(color=(0.8, 0.2, 0.2)))]
    elif name == "twotone-sphere":
        prims = [Sphere(radius=0.25, albedo=Albedo(kind="twotone", color=(0.85, 0.25, 0.2),
                                                   axis=(1.0, 0.0, 0.0),
                                                   color_neg=(0.2, 0.35, 0.85)))]
    elif name == "blobby":
        prims = [
            Sphere(center=(-0.15, 0.1, 0.0), radius=0.18,
                   albedo=Albedo(color=(0.85, 0.3, 0.2))),
            BoxPrim(bmin=(0.02, -0.3, -0.15), bmax=(0.32, 0.0, 0.15),
                    albedo=Albedo(color=(0.2, 0.6, 0.3))),
            Capsule(p0=(-0.1, -0.25, 0.05), p1=(0.1, 0.2, -0.05), radius=0.08,
                    albedo=Albedo(color=(0.3, 0.35, 0.8))),
        ]
    else:
        raise ValueError(f"unknown preset {name!r}")
    return SyntheticSpec(primitives=prims, resolution=resolution,
                         orbit_views=orbit_views, holdout_azimuths=hold)
