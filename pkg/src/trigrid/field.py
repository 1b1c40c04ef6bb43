"""Multi-layer triplane (tri-grid) scene representation and feature decoder.

The field stores three axis-aligned feature planes, each a stack of L layers
over an R x R grid with C channels. A query point p in the unit cube
[-0.5, 0.5]^3 is normalized to q = p + 0.5 in [0,1]^3 and each plane is
sampled with its two spanned coordinates as in-plane (u, v) and the third
as the layer coordinate w:

    planes_xy: (u, v, w) = (qx, qy, qz)
    planes_xz: (u, v, w) = (qx, qz, qy)
    planes_yz: (u, v, w) = (qy, qz, qx)

In-plane sampling is bilinear on the node lattice u*(R-1), v*(R-1); layers
interpolate linearly at w*(L-1), so grid nodes reproduce stored features
exactly and L = 1 has no w dependence. With L = R a plane is an R^3 grid
and plane sampling equals trilinear voxel interpolation. The three plane
samples are summed (EG3D aggregation). Out-of-range queries clamp.

A small fully-connected decoder maps the C aggregated features to 4 logits;
density is softplus(logit0) and color is the logistic of the rest. Hidden
activation is softplus, a smooth member of the rectifier family, chosen so
finite-difference gradient oracles are meaningful everywhere.
"""

import os
from dataclasses import dataclass

import numpy as np

from .formats import atomic_write_bytes, struct_pack_f32_le, struct_unpack_u32_le

CHECKPOINT_MAGIC = b"MLTP1"

# plane axis assignment: (u axis, v axis, w axis) per plane, order XY, XZ, YZ
PLANE_AXES = ((0, 1, 2), (0, 2, 1), (1, 2, 0))


@dataclass
class TriGrid:
    """planes: (3, L, R, R, C) array, plane order XY, XZ, YZ."""

    planes: np.ndarray

    def __post_init__(self):
        if self.planes.ndim != 5 or self.planes.shape[0] != 3:
            raise ValueError(f"planes must be (3, L, R, R, C), got {self.planes.shape}")
        if self.planes.shape[2] != self.planes.shape[3]:
            raise ValueError("plane grids must be square")

    @property
    def L(self) -> int:
        return self.planes.shape[1]

    @property
    def R(self) -> int:
        return self.planes.shape[2]

    @property
    def C(self) -> int:
        return self.planes.shape[4]

    def copy(self) -> "TriGrid":
        return TriGrid(self.planes.copy())


@dataclass
class Decoder:
    """Fully-connected [C, *hidden, 4] net; weights[i] has shape (in, out)."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights/biases length mismatch")
        if self.weights[-1].shape[1] != 4:
            raise ValueError("decoder must emit 4 logits (1 density + 3 color)")

    @property
    def widths(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "Decoder":
        return Decoder([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def softplus(z):
    # log(1 + e^z) = max(z, 0) + log1p(e^{-|z|}), stable in both tails and
    # much faster than np.logaddexp on large arrays
    z = np.asarray(z)
    return np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))


def softplus_prime_from_value(s):
    # d softplus / dz = sigmoid(z) = 1 - e^{-softplus(z)}
    return 1.0 - np.exp(-s)


def sigmoid(z):
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def inverse_softplus(y):
    """z with softplus(z) = y, for y > 0."""
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def sample_plane(plane: np.ndarray, u, v, w) -> np.ndarray:
    """Sample one (L, R, R, C) plane at in-plane (u, v) and layer coord w,
    all in [0,1] (clamped). Scalar or array coords; returns (..., C)."""
    L, R = plane.shape[0], plane.shape[1]
    u = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)
    w = np.clip(np.asarray(w, dtype=np.float64), 0.0, 1.0)
    uc = u * (R - 1)
    vc = v * (R - 1)
    wc = w * (L - 1)
    i0 = np.minimum(np.floor(uc).astype(np.int64), R - 2) if R > 1 else np.zeros_like(uc, dtype=np.int64)
    j0 = np.minimum(np.floor(vc).astype(np.int64), R - 2) if R > 1 else np.zeros_like(vc, dtype=np.int64)
    l0 = np.minimum(np.floor(wc).astype(np.int64), L - 2) if L > 1 else np.zeros_like(wc, dtype=np.int64)
    fu = uc - i0
    fv = vc - j0
    fw = wc - l0
    i1 = np.minimum(i0 + 1, R - 1)
    j1 = np.minimum(j0 + 1, R - 1)
    l1 = np.minimum(l0 + 1, L - 1)
    fu = fu[..., None]
    fv = fv[..., None]
    fw = fw[..., None]
    out = 0.0
    for li, lw in ((l0, 1.0 - fw), (l1, fw)):
        c00 = plane[li, i0, j0]
        c10 = plane[li, i1, j0]
        c01 = plane[li, i0, j1]
        c11 = plane[li, i1, j1]
        bil = (
            c00 * (1.0 - fu) * (1.0 - fv)
            + c10 * fu * (1.0 - fv)
            + c01 * (1.0 - fu) * fv
            + c11 * fu * fv
        )
        out = out + bil * lw
    return out


def sample_points(tg: TriGrid, pts: np.ndarray) -> np.ndarray:
    """Sum of the three plane samples at world points pts (..., 3)."""
    q = np.clip(np.asarray(pts, dtype=np.float64) + 0.5, 0.0, 1.0)
    out = 0.0
    for p in range(3):
        ua, va, wa = PLANE_AXES[p]
        out = out + sample_plane(tg.planes[p], q[..., ua], q[..., va], q[..., wa])
    return out


def sample_point(tg: TriGrid, p) -> np.ndarray:
    return sample_points(tg, np.asarray(p, dtype=np.float64))


def decoder_forward(dec: Decoder, feats: np.ndarray, keep_hidden: bool = False):
    """feats (N, C) -> (sigma (N,), rgb (N, 3)); hidden layers use softplus.

    With keep_hidden, also returns the post-activation hidden states, the
    activation derivatives sigmoid(z) per hidden layer (nearly free here by
    reusing exp(-|z|)), and the raw output logits, all needed by the
    analytic backward pass.
    """
    h = np.asarray(feats)
    hs = []
    primes = []
    n = len(dec.weights)
    for i in range(n - 1):
        z = h @ dec.weights[i] + dec.biases[i]
        e = np.exp(-np.abs(z))
        h = np.maximum(z, 0) + np.log1p(e)
        if keep_hidden:
            hs.append(h)
            primes.append(np.where(z >= 0, 1.0, e) / (1.0 + e))
    out = h @ dec.weights[-1] + dec.biases[-1]
    sigma = softplus(out[:, 0])
    rgb = sigmoid(out[:, 1:4])
    if keep_hidden:
        return sigma, rgb, hs, primes, out
    return sigma, rgb


def decode(dec: Decoder, feat) -> tuple:
    """Single feature vector -> (sigma, rgb)."""
    f = np.asarray(feat, dtype=np.float64)[None, :]
    sigma, rgb = decoder_forward(dec, f)
    return float(sigma[0]), rgb[0]


def field_sigma_rgb(tg: TriGrid, dec: Decoder, pts: np.ndarray):
    """Convenience evaluator: world points (N, 3) -> (sigma (N,), rgb (N, 3))."""
    feats = sample_points(tg, pts)
    return decoder_forward(dec, feats)


def init_field(R: int, L: int, C: int, seed: int, hidden=(64, 64), dtype=np.float32):
    """Fresh tri-grid + decoder. Features ~ N(0, 0.01 std); He-init hidden
    weights; density bias -1 so the field starts near-empty."""
    if R < 1 or L < 1 or C < 1:
        raise ValueError(f"invalid field dims R={R} L={L} C={C}")
    rng = np.random.default_rng(seed)
    planes = rng.normal(0.0, 0.01, size=(3, L, R, R, C)).astype(dtype)
    widths = [C] + list(hidden) + [4]
    weights = []
    biases = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)).astype(dtype)
        weights.append(w)
        biases.append(np.zeros(fan_out, dtype=dtype))
    biases[-1][0] = -1.0
    return TriGrid(planes), Decoder(weights, biases)


def save_checkpoint(path: str, tg: TriGrid, dec: Decoder) -> None:
    """Binary blob: magic MLTP1, uint32 header (R, L, C, nWidths, widths...),
    then float32 LE arrays: planes XY, XZ, YZ, then W1,b1,...,Wn,bn."""
    widths = dec.widths
    if widths[0] != tg.C:
        raise ValueError(f"decoder input width {widths[0]} != field channels {tg.C}")
    head = [tg.R, tg.L, tg.C, len(widths)] + widths
    blob = bytearray(CHECKPOINT_MAGIC)
    blob += np.asarray(head, dtype="<u4").tobytes()
    for p in range(3):
        blob += struct_pack_f32_le(tg.planes[p])
    for w, b in zip(dec.weights, dec.biases):
        blob += struct_pack_f32_le(w)
        blob += struct_pack_f32_le(b)
    atomic_write_bytes(path, bytes(blob))


def load_checkpoint(path: str):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:5] != CHECKPOINT_MAGIC:
        raise ValueError(f"bad magic MLTP1 in {path!r} (got {blob[:5]!r})")
    off = 5
    (R, L, C, n_widths), off = struct_unpack_u32_le(blob, off, 4)
    widths, off = struct_unpack_u32_le(blob, off, n_widths)
    widths = list(widths)
    if widths[0] != C or widths[-1] != 4:
        raise ValueError(f"checkpoint decoder widths {widths} inconsistent with C={C}")
    def take(shape):
        nonlocal off
        n = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
        return np.ascontiguousarray(arr)
    planes = np.stack([take((L, R, R, C)) for _ in range(3)])
    weights = []
    biases = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(take((fan_in, fan_out)))
        biases.append(take((fan_out,)))
    if off != len(blob):
        raise ValueError(f"checkpoint has {len(blob) - off} trailing bytes")
    return TriGrid(planes), Decoder(weights, biases)
