"""Binary silhouettes of meshes under an orthographic camera.

The camera looks down -Z with +Y up; a view at ``rotation_deg`` first spins
the body about the vertical line through its vertex centroid. Frames are
auto-scaled so the body's vertical extent fills ``1 - 2 * margin`` of the
image height and centered horizontally.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bodymodel import TriMesh
from .errors import ImageFormatError, ShapeSizeError


@dataclass(frozen=True, eq=False)
class Silhouette:
    pixels: np.ndarray  # (height, width) uint8 in {0, 1}

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim != 2:
            raise ShapeSizeError(f"silhouette must be 2-D, got shape {p.shape}")
        p = (p != 0).astype(np.uint8)
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def is_empty(self) -> bool:
        return not self.pixels.any()

    def __eq__(self, other):
        return isinstance(other, Silhouette) and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True)
class SilhouettePair:
    front: Silhouette
    side: Silhouette
    subject_id: str = ""

    def __post_init__(self):
        if self.front.pixels.shape != self.side.pixels.shape:
            raise ShapeSizeError(
                f"front {self.front.pixels.shape} and side {self.side.pixels.shape} differ in size"
            )


@dataclass(frozen=True)
class ViewSpec:
    rotation_deg: float = 0.0
    margin_fraction: float = 0.05

    def __post_init__(self):
        if not 0 <= self.rotation_deg < 360:
            raise ValueError("rotation_deg must lie in [0, 360)")
        if not 0 <= self.margin_fraction < 0.5:
            raise ValueError("margin_fraction must lie in [0, 0.5)")


FRONT = ViewSpec(0.0)
SIDE = ViewSpec(90.0)


def rotate_view(vertices: np.ndarray, theta_deg: float) -> np.ndarray:
    """Right-handed rotation about +Y through the vertex centroid's vertical line."""
    v = np.array(vertices, dtype=np.float64)
    if theta_deg % 360 == 0:
        return v
    t = np.deg2rad(theta_deg)
    # exact values at quarter turns keep repeated 90-degree rotations closed
    quarter = {90: (0.0, 1.0), 180: (-1.0, 0.0), 270: (0.0, -1.0)}
    c, s = quarter.get(theta_deg % 360, (np.cos(t), np.sin(t)))
    cx, cz = v[:, 0].mean(), v[:, 2].mean()
    x, z = v[:, 0] - cx, v[:, 2] - cz
    v[:, 0] = cx + c * x + s * z
    v[:, 2] = cz - s * x + c * z
    return v


def _project(mesh: TriMesh, view: ViewSpec, width: int, height: int) -> np.ndarray:
    v = rotate_view(mesh.vertices, view.rotation_deg)
    x, y = v[:, 0], v[:, 1]
    y_lo, y_hi = y.min(), y.max()
    extent = y_hi - y_lo
    if not extent > 0:
        raise ValueError("mesh has zero vertical extent")
    scale = (1.0 - 2.0 * view.margin_fraction) * height / extent
    x_mid = 0.5 * (x.min() + x.max())
    px = 0.5 * width + (x - x_mid) * scale
    py = view.margin_fraction * height + (y_hi - y) * scale
    return np.stack([px, py], axis=1)


def rasterize_points(pts: np.ndarray, faces: np.ndarray, width: int, height: int) -> np.ndarray:
    """Fill projected triangles, sampling pixel centers.

    Scanline form of the top-left rule: a sample at (cx, cy) is covered when
    y_top <= cy < y_bottom and x_left <= cx < x_right.
    """
    tri = pts[faces]  # (F, 3, 2)
    p0 = tri
    p1 = np.roll(tri, -1, axis=1)
    y0, y1 = p0[..., 1], p1[..., 1]
    x0, x1 = p0[..., 0], p1[..., 0]
    e_lo = np.minimum(y0, y1)
    e_hi = np.maximum(y0, y1)
    dy = np.where(y1 != y0, y1 - y0, 1.0)
    slope = (x1 - x0) / dy

    t_lo = tri[..., 1].min(axis=1)
    t_hi = tri[..., 1].max(axis=1)
    img = np.zeros((height, width), dtype=np.uint8)
    r_first = max(int(np.ceil(t_lo.min() - 0.5)), 0)
    r_last = min(int(np.ceil(t_hi.max() - 0.5)), height)
    for r in range(r_first, r_last):
        cy = r + 0.5
        live = (t_lo <= cy) & (cy < t_hi)
        if not live.any():
            continue
        hit = (e_lo[live] <= cy) & (cy < e_hi[live])
        xs = x0[live] + (cy - y0[live]) * slope[live]
        left = np.where(hit, xs, np.inf).min(axis=1)
        right = np.where(hit, xs, -np.inf).max(axis=1)
        start = np.clip(np.ceil(left - 0.5), 0, width).astype(np.int64)
        stop = np.clip(np.ceil(right - 0.5), 0, width).astype(np.int64)
        keep = stop > start
        if not keep.any():
            continue
        diff = np.zeros(width + 1, dtype=np.int64)
        np.add.at(diff, start[keep], 1)
        np.add.at(diff, stop[keep], -1)
        img[r] = np.cumsum(diff[:width]) > 0
    return img


def rasterize(mesh: TriMesh, view: ViewSpec = FRONT, width: int = 64, height: int = 64) -> Silhouette:
    if mesh.num_vertices == 0 or len(mesh.faces) == 0:
        raise ValueError("cannot rasterize an empty mesh")
    if width < 16 or height < 16:
        raise ValueError("image must be at least 16x16")
    pts = _project(mesh, view, width, height)
    return Silhouette(rasterize_points(pts, mesh.faces, width, height))


def render_pair(mesh: TriMesh, resolution: int, subject_id: str = "", margin: float = 0.05) -> SilhouettePair:
    return SilhouettePair(
        rasterize(mesh, ViewSpec(0.0, margin), resolution, resolution),
        rasterize(mesh, ViewSpec(90.0, margin), resolution, resolution),
        subject_id,
    )


def pixel_accuracy(a, b) -> float:
    """Fraction of equal pixels; real-valued inputs are thresholded at 0.5."""
    pa = _binary(a)
    pb = _binary(b)
    if pa.shape != pb.shape:
        raise ShapeSizeError(f"image sizes differ: {pa.shape} vs {pb.shape}")
    return float(np.mean(pa == pb))


def _binary(img) -> np.ndarray:
    if isinstance(img, Silhouette):
        return img.pixels.astype(bool)
    arr = np.asarray(img)
    if arr.dtype == bool:
        return arr
    return arr >= 0.5


# ---------------------------------------------------------------------------
# PGM I/O


def save_silhouette(s: Silhouette, path) -> None:
    header = f"P5\n{s.width} {s.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + (s.pixels * 255).astype(np.uint8).tobytes())


def _header_tokens(data: bytes, count: int):
    """Whitespace-separated header tokens, skipping '#' comments; returns tokens and payload offset."""
    tokens, pos, n = [], 0, len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1  # one whitespace byte separates header from raster


def load_silhouette(path) -> Silhouette:
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P5", b"P2"):
        raise ImageFormatError(f"{path}: not a PGM file (magic {magic!r})")
    try:
        tokens, offset = _header_tokens(data, 4)
        w, h, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise ImageFormatError(f"{path}: malformed PGM header") from None
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: invalid PGM dimensions or maxval")
    if magic == b"P5":
        dtype = np.dtype(">u2" if maxval > 255 else np.uint8)
        need = w * h * dtype.itemsize
        raster = data[offset:offset + need]
        if len(raster) != need:
            raise ImageFormatError(f"{path}: expected {need} raster bytes, found {len(raster)}")
        values = np.frombuffer(raster, dtype=dtype).astype(np.float64)
    else:
        try:
            values = np.array(data[offset:].split(), dtype=np.float64)
        except ValueError:
            raise ImageFormatError(f"{path}: non-numeric P2 raster") from None
        if values.size != w * h:
            raise ImageFormatError(f"{path}: expected {w * h} samples, found {values.size}")
    gray = values.reshape(h, w) * (255.0 / maxval)
    return Silhouette(gray >= 128)
