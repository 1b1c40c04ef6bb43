"""Raster and mesh file I/O: PFM float maps, 8-bit PNGs, OBJ meshes.

All writers go through an atomic write-then-rename so an interrupted run
never leaves a truncated artifact behind.
"""

import os
import struct
import tempfile

import numpy as np
from PIL import Image

__all__ = [
    "read_pfm",
    "write_pfm",
    "read_png",
    "write_png",
    "read_obj",
    "write_obj",
    "atomic_write_bytes",
]


def atomic_write_bytes(path, data: bytes):
    """Write bytes to `path` via a temp file + rename in the same directory."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_pfm(path, values: np.ndarray):
    """Write a single-channel float32 raster as a little-endian PFM.

    Header is "Pf", then "width height", then scale -1.0 (negative marks
    little-endian). Scanlines are stored bottom-to-top per PFM convention.
    """
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"PFM writer expects a 2D array, got shape {arr.shape}")
    h, w = arr.shape
    header = b"Pf\n" + f"{w} {h}\n".encode("ascii") + b"-1.0\n"
    payload = arr[::-1].astype("<f4").tobytes()
    atomic_write_bytes(path, header + payload)


def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM into a float32 (H, W) array (top-down rows)."""
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"Pf":
            raise ValueError(f"{path}: not a grayscale PFM (magic {magic!r})")
        dims = f.readline().split()
        if len(dims) != 2:
            raise ValueError(f"{path}: malformed PFM dimension line")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        data = f.read(w * h * 4)
    if len(data) != w * h * 4:
        raise ValueError(f"{path}: truncated PFM payload")
    dt = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(data, dtype=dt).reshape(h, w)
    return np.ascontiguousarray(arr[::-1].astype(np.float32))


def write_png(path, pixels: np.ndarray):
    """Write float pixels in [0, 1] as an 8-bit PNG.

    (H, W) saves grayscale, (H, W, 3) RGB, (H, W, 4) RGBA. Quantization is
    round(v * 255); values are clipped to [0, 1] first. PNG encoding settings
    are Pillow defaults, which are deterministic for fixed pixel data.
    """
    arr = np.asarray(pixels, dtype=np.float64)
    q = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    if q.ndim == 2:
        img = Image.fromarray(q, mode="L")
    elif q.ndim == 3 and q.shape[2] == 3:
        img = Image.fromarray(q, mode="RGB")
    elif q.ndim == 3 and q.shape[2] == 4:
        img = Image.fromarray(q, mode="RGBA")
    else:
        raise ValueError(f"unsupported PNG shape {arr.shape}")
    import io

    buf = io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def read_png(path) -> np.ndarray:
    """Read a PNG into float32 in [0, 1]; grayscale -> (H, W), else (H, W, C)."""
    with Image.open(path) as img:
        if img.mode == "L":
            arr = np.asarray(img, dtype=np.float32)
        elif img.mode in ("RGB", "RGBA"):
            arr = np.asarray(img, dtype=np.float32)
        else:
            arr = np.asarray(img.convert("RGBA"), dtype=np.float32)
    return arr / np.float32(255.0)


def write_obj(path, vertices: np.ndarray, faces: np.ndarray):
    """Write a v/f-only OBJ. Faces are 0-based index triples in memory."""
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces, dtype=np.int64)
    lines = []
    for x, y, z in v.tolist():  # python floats: repr is shortest round-trip text
        lines.append(f"v {x!r} {y!r} {z!r}")
    for a, b, c in f.tolist():
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("ascii"))


def read_obj(path):
    """Read a v/f OBJ; returns (vertices (N,3) float64, faces (M,3) int64).

    Only "v" and triangular "f" records are honored; "f" entries may carry
    texture/normal slashes which are stripped.
    """
    verts, faces = [], []
    with open(path, "r", encoding="ascii") as fh:
        for ln, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise ValueError(f"{path}:{ln}: malformed vertex line")
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise ValueError(f"{path}:{ln}: only triangle faces supported")
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    v = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    return v, f


def struct_pack_f32_le(arrays) -> bytes:
    """Concatenate arrays as little-endian float32 bytes in order."""
    out = bytearray()
    for a in arrays:
        out += np.ascontiguousarray(a, dtype="<f4").tobytes()
    return bytes(out)


def struct_unpack_u32_le(buf, offset, n):
    vals = struct.unpack_from("<" + "I" * n, buf, offset)
    return vals, offset + 4 * n
