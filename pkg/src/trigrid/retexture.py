"""Front-projection retexturing of a fitted field.

The optimized field tends to wash out high-frequency texture, so the final
render stitches the original (line-removed) front input back on as a
projected texture wherever the surface is visible from the front. Per
pixel of the target view: find the expected ray termination point, cast a
few jittered rays from just in front of it toward the front cube face, and
if the mean transmittance clears a threshold, replace the rendered color
with a bilinear sample of the front image at the point's orthographic
(x, y) footprint. Alpha and depth are never touched; the cutover at the
visibility threshold is hard (no blending).
"""

import numpy as np

from .cameras import CUBE_MAX, CUBE_MIN, pixel_grid_rays
from .kernels import counter_uniforms
from .render import CHUNK_SAMPLES, DEFAULT_SAMPLES, RenderBuffers, eval_field, render_rays

FRONT_DIR = np.array([0.0, 0.0, 1.0])
DEFAULT_JITTER_RADIUS = 1.0 / 512.0
OFFSET_STEPS = 2  # surface-escape offset, in units of the marching quadrature step


def transmittance_to_front(field, origins: np.ndarray, n_samples: int = DEFAULT_SAMPLES,
                           chunk_rays: int = 0) -> np.ndarray:
    """exp(-integral of sigma) from each origin straight to the +z cube face,
    midpoint quadrature. Matches the compositing product of (1 - alpha_i)."""
    origins = np.asarray(origins, np.float64).reshape(-1, 3)
    n = len(origins)
    out = np.empty(n)
    if not chunk_rays:
        chunk_rays = max(1, CHUNK_SAMPLES // max(1, n_samples))
    frac = (np.arange(n_samples) + 0.5) / n_samples
    for r0 in range(0, n, chunk_rays):
        o = origins[r0:r0 + chunk_rays]
        t_far = np.maximum(CUBE_MAX - o[:, 2], 0.0)
        ts = t_far[:, None] * frac[None, :]
        pts = o[:, None, :] + ts[:, :, None] * FRONT_DIR
        sigma, _ = eval_field(field, pts.reshape(-1, 3))
        tau = sigma.reshape(len(o), n_samples).sum(axis=1) * (t_far / n_samples)
        out[r0:r0 + chunk_rays] = np.exp(-tau)
    return out


def front_visibility(field, points: np.ndarray, n_jitter: int = 4,
                     jitter_radius: float = DEFAULT_JITTER_RADIUS,
                     n_samples: int = DEFAULT_SAMPLES, seed: int = 0) -> np.ndarray:
    """Mean transmittance toward the front over n_jitter rays per point.

    Ray origins are jittered uniformly in an (x, y) disc and pushed
    OFFSET_STEPS quadrature steps toward the front face so the surface's
    own density shell does not occlude the test; the step is the cube
    z-extent over n_samples, the same spacing the renderer marches at, so
    the escape distance tracks the shell thickness the fit can resolve.
    Deterministic in seed.
    """
    points = np.asarray(points, np.float64).reshape(-1, 3)
    n = len(points)
    if n == 0:
        return np.zeros(0)
    if n_jitter < 1:
        raise ValueError(f"n_jitter must be >= 1, got {n_jitter}")
    u = counter_uniforms(seed, 0, (n, n_jitter, 2))
    ang = 2.0 * np.pi * u[..., 0]
    rad = jitter_radius * np.sqrt(u[..., 1])
    offs = np.zeros((n, n_jitter, 3))
    offs[..., 0] = rad * np.cos(ang)
    offs[..., 1] = rad * np.sin(ang)

    step = (CUBE_MAX - CUBE_MIN) / n_samples
    origins = points[:, None, :] + offs
    origins[..., 2] += OFFSET_STEPS * step
    origins = np.clip(origins, CUBE_MIN, CUBE_MAX)
    T = transmittance_to_front(field, origins.reshape(-1, 3), n_samples=n_samples)
    return T.reshape(n, n_jitter).mean(axis=1)


def surface_points(field, cam, n_samples: int = DEFAULT_SAMPLES, seed: int = 0):
    """Per-pixel expected termination points of the field under cam.

    Returns (points (H, W, 3), valid (H, W), RenderBuffers). A pixel is
    valid iff its rendered alpha exceeds 0.5; points are clamped into the
    unit cube.
    """
    origins, dirs, t_near, t_far = pixel_grid_rays(cam)
    rgb, alpha, depth = render_rays(field, origins, dirs, t_near, t_far,
                                    n_samples=n_samples, mode="midpoint", seed=seed)
    h = w = cam.size
    pts = origins + depth[:, None] * dirs
    pts = np.clip(pts, CUBE_MIN, CUBE_MAX).reshape(h, w, 3)
    valid = (alpha > 0.5).reshape(h, w)
    bufs = RenderBuffers(rgb=np.clip(rgb, 0.0, 1.0).reshape(h, w, 3),
                         alpha=alpha.reshape(h, w), depth=depth.reshape(h, w))
    return pts, valid, bufs


def bilinear_sample(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Clamped bilinear lookup of (H, W, C) img at fractional (row, col)."""
    h, w = img.shape[:2]
    r = np.clip(rows, 0.0, h - 1.0)
    c = np.clip(cols, 0.0, w - 1.0)
    r0 = np.minimum(np.floor(r).astype(np.int64), h - 2) if h > 1 else np.zeros_like(r, np.int64)
    c0 = np.minimum(np.floor(c).astype(np.int64), w - 2) if w > 1 else np.zeros_like(c, np.int64)
    r0 = np.maximum(r0, 0)
    c0 = np.maximum(c0, 0)
    fr = (r - r0)[..., None]
    fc = (c - c0)[..., None]
    i00 = img[r0, c0]
    i01 = img[r0, np.minimum(c0 + 1, w - 1)]
    i10 = img[np.minimum(r0 + 1, h - 1), c0]
    i11 = img[np.minimum(r0 + 1, h - 1), np.minimum(c0 + 1, w - 1)]
    top = i00 * (1 - fc) + i01 * fc
    bot = i10 * (1 - fc) + i11 * fc
    return top * (1 - fr) + bot * fr


def project_front(points: np.ndarray, size: int, halfwidth: float = 0.5):
    """World (x, y) -> fractional (row, col) of the front orthographic
    raster: column tracks +x, row 0 is the +y edge."""
    p = np.asarray(points, np.float64)
    col = (p[..., 0] / halfwidth * 0.5 + 0.5) * size - 0.5
    row = (0.5 - p[..., 1] / halfwidth * 0.5) * size - 0.5
    return row, col


def retexture_render(field, front_rgb: np.ndarray, cam, v_thresh: float = 0.5,
                     n_jitter: int = 4, jitter_radius: float = DEFAULT_JITTER_RADIUS,
                     n_samples: int = DEFAULT_SAMPLES, seed: int = 0):
    """Render cam through the field, re-painting front-visible pixels from
    front_rgb. Returns (RenderBuffers, info) where info carries the
    retextured mask, the visibility map (NaN where invalid), the surface
    points and the validity mask for audit."""
    front_rgb = np.asarray(front_rgb, np.float64)
    if front_rgb.ndim != 3 or front_rgb.shape[2] < 3:
        raise ValueError(f"front input must be (H, W, 3+), got {front_rgb.shape}")
    fh, fw = front_rgb.shape[:2]
    if fh != fw:
        raise ValueError(f"front input resolution mismatch: expected square, got {fh}x{fw}")
    if fh < 2:
        raise ValueError(f"front input too small: {fh}x{fw}")

    pts, valid, bufs = surface_points(field, cam, n_samples=n_samples, seed=seed)
    h, w = valid.shape
    vis_map = np.full((h, w), np.nan)
    retex = np.zeros((h, w), dtype=bool)
    if valid.any():
        vis = front_visibility(field, pts[valid], n_jitter=n_jitter,
                               jitter_radius=jitter_radius, n_samples=n_samples, seed=seed)
        vis_map[valid] = vis
        retex[valid] = vis > v_thresh
    out_rgb = bufs.rgb.copy()
    if retex.any():
        row, col = project_front(pts[retex], fh)
        out_rgb[retex] = np.clip(bilinear_sample(front_rgb[..., :3], row, col), 0.0, 1.0)
    out = RenderBuffers(rgb=out_rgb, alpha=bufs.alpha, depth=bufs.depth)
    info = {"retextured": retex, "visibility": vis_map, "points": pts, "valid": valid,
            "plain_rgb": bufs.rgb}
    return out, info
