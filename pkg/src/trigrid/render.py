"""Volume rendering of a tri-grid field into RGB / alpha / depth buffers.

Quadrature convention (per ray, S samples):

    delta_i = t_{i+1} - t_i, last delta = tFar - t_{S-1}
    alpha_i = 1 - exp(-sigma_i delta_i)
    T_i     = prod_{j<i} (1 - alpha_j)
    w_i     = T_i alpha_i
    rgb     = sum w_i c_i + (1 - sum w_i) * white
    alpha   = sum w_i
    depth   = sum w_i t_i / max(sum w_i, 1e-6)

Sample positions are either deterministic midpoints (evaluation, tests) or
stratified: t_i = tNear + (i + u_i)/S * (tFar - tNear) with u_i ~ U[0,1)
drawn from a counter-based hash, so the jitter for ray k is independent of
chunking or worker count.
"""

from dataclasses import dataclass

import numpy as np

from . import cameras as cam_mod
from .field import Decoder, TriGrid, decoder_forward
from .kernels import composite_forward, counter_uniforms, trigrid_gather

DEFAULT_SAMPLES = 96
CHUNK_SAMPLES = 262144


@dataclass
class RenderBuffers:
    rgb: np.ndarray  # (H, W, 3) in [0,1], composited over white
    alpha: np.ndarray  # (H, W) accumulated opacity
    depth: np.ndarray  # (H, W) expected termination distance

    def rgba(self) -> np.ndarray:
        return np.concatenate([self.rgb, self.alpha[..., None]], axis=-1)


def sample_ts(t_near, t_far, n_samples: int, mode: str, seed: int = 0, ray_ids=None):
    """(nr, S) sample positions. ray_ids identify rays for stratified jitter."""
    nr = t_near.shape[0]
    span = (t_far - t_near)[:, None]
    idx = np.arange(n_samples, dtype=np.float64)[None, :]
    if mode == "midpoint":
        frac = (idx + 0.5) / n_samples
    elif mode == "stratified":
        if ray_ids is None:
            ray_ids = np.arange(nr, dtype=np.uint64)
        u = np.empty((nr, n_samples), dtype=np.float64)
        for k in range(nr):  # draws keyed by global ray id, not batch position
            u[k] = counter_uniforms(seed, int(ray_ids[k]) * n_samples, (n_samples,))
        frac = (idx + u) / n_samples
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    return t_near[:, None] + span * frac


def sample_ts_block(t_near, t_far, n_samples: int, mode: str, seed: int = 0, id_start: int = 0):
    """Like sample_ts but for a contiguous id range [id_start, id_start+nr)."""
    nr = t_near.shape[0]
    span = (t_far - t_near)[:, None]
    idx = np.arange(n_samples, dtype=np.float64)[None, :]
    if mode == "midpoint":
        frac = (idx + 0.5) / n_samples
    elif mode == "stratified":
        u = counter_uniforms(seed, id_start * n_samples, (nr, n_samples))
        frac = (idx + u) / n_samples
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    return t_near[:, None] + span * frac


def eval_field(field, pts: np.ndarray):
    """field is (TriGrid, Decoder) or a callable pts -> (sigma, rgb)."""
    if callable(field):
        return field(pts)
    tg, dec = field
    p = np.ascontiguousarray(pts, dtype=tg.planes.dtype)
    feats = np.zeros((p.shape[0], tg.C), dtype=tg.planes.dtype)
    trigrid_gather(tg.planes, p, feats)
    return decoder_forward(dec, feats)


def render_rays(
    field,
    origins: np.ndarray,
    dirs: np.ndarray,
    t_near: np.ndarray,
    t_far: np.ndarray,
    n_samples: int = DEFAULT_SAMPLES,
    mode: str = "midpoint",
    seed: int = 0,
    chunk_samples: int = CHUNK_SAMPLES,
):
    """Render arbitrary rays; returns (rgb (N,3), alpha (N,), depth (N,))."""
    if n_samples < 2:
        raise ValueError("need at least 2 samples per ray")
    nr = origins.shape[0]
    out_rgb = np.empty((nr, 3), dtype=np.float64)
    out_alpha = np.empty(nr, dtype=np.float64)
    out_depth = np.empty(nr, dtype=np.float64)
    rays_per_chunk = max(1, chunk_samples // n_samples)
    for r0 in range(0, nr, rays_per_chunk):
        r1 = min(r0 + rays_per_chunk, nr)
        ts = sample_ts_block(t_near[r0:r1], t_far[r0:r1], n_samples, mode, seed, id_start=r0)
        pts = origins[r0:r1, None, :] + ts[:, :, None] * dirs[r0:r1, None, :]
        sigma, rgb = eval_field(field, pts.reshape(-1, 3))
        composite_forward(
            np.ascontiguousarray(sigma, dtype=np.float64),
            np.ascontiguousarray(rgb, dtype=np.float64),
            ts,
            np.ascontiguousarray(t_far[r0:r1], dtype=np.float64),
            out_rgb[r0:r1],
            out_alpha[r0:r1],
            out_depth[r0:r1],
        )
    return out_rgb, out_alpha, out_depth


def render_view(
    tg: TriGrid,
    dec: Decoder,
    cam: cam_mod.Camera,
    n_samples: int = DEFAULT_SAMPLES,
    mode: str = "midpoint",
    seed: int = 0,
) -> RenderBuffers:
    """Full-frame render of a camera view."""
    o, d, tn, tf = cam_mod.pixel_grid_rays(cam)
    rgb, alpha, depth = render_rays((tg, dec), o, d, tn, tf, n_samples, mode, seed)
    h = w = cam.size
    return RenderBuffers(
        rgb=np.clip(rgb, 0.0, 1.0).reshape(h, w, 3),
        alpha=np.clip(alpha, 0.0, 1.0).reshape(h, w),
        depth=depth.reshape(h, w),
    )
