"""Linear shape-basis body model.

A body is ``template + shape_dirs @ beta``: a fixed-pose template mesh plus a
linear displacement basis with ten coefficients.  The default model is built
procedurally from lofted elliptical cross-sections (torso/neck/head, two arms,
two legs), each a closed tube, so the union is watertight.  Externally
supplied bases can be loaded from a bundle directory.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import (
    ConstructionError,
    MeshParseError,
    MeshTopologyError,
    ShapeSizeError,
    UnsupportedFormatError,
)

NUM_BETAS = 10

BASIS_NAMES = (
    "height",
    "girth",
    "bust",
    "waist",
    "hip",
    "shoulder_width",
    "limb_thickness",
    "limb_length",
    "torso_length",
    "head_size",
)

BASIS_MAGIC = b"S2SBASIS"


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Triangle mesh in meters. Faces are CCW seen from outside."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64)
        f = np.array(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ShapeSizeError(f"vertices must be (V, 3), got {v.shape}")
        if f.size == 0:
            f = f.reshape(0, 3)
        if f.ndim != 2 or f.shape[1] != 3:
            raise ShapeSizeError(f"faces must be (F, 3), got {f.shape}")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshTopologyError("face index out of range")
        if f.size and np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise MeshTopologyError("degenerate face with repeated vertex index")
        object.__setattr__(self, "vertices", _readonly(v))
        # share the face buffer when it is already a frozen int64 array
        if isinstance(self.faces, np.ndarray) and self.faces.dtype == np.int64 and not self.faces.flags.writeable:
            f = self.faces
        object.__setattr__(self, "faces", _readonly(f))

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        """Same connectivity (same face array object), new positions."""
        return TriMesh(vertices, self.faces)

    def boundary_edge(self):
        """First directed edge lacking a unique opposite twin, or None."""
        f = self.faces
        if len(f) == 0:
            return None
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        n = np.int64(len(self.vertices))
        keys = directed[:, 0] * n + directed[:, 1]
        twins = directed[:, 1] * n + directed[:, 0]
        uniq, counts = np.unique(keys, return_counts=True)
        dup = uniq[counts > 1]
        if len(dup):
            k = int(dup[0])
            return (k // int(n), k % int(n))
        missing = ~np.isin(twins, uniq)
        if missing.any():
            i = int(np.argmax(missing))
            return (int(directed[i, 0]), int(directed[i, 1]))
        return None

    @cached_property
    def is_watertight(self) -> bool:
        return len(self.faces) > 0 and self.boundary_edge() is None

    def check_watertight(self) -> None:
        if len(self.faces) == 0:
            raise MeshTopologyError("mesh has no faces")
        edge = self.boundary_edge()
        if edge is not None:
            raise MeshTopologyError(
                f"mesh is not watertight/consistently oriented at edge {edge[0]}-{edge[1]}"
            )

    def translated(self, offset) -> "TriMesh":
        return self.with_vertices(self.vertices + np.asarray(offset, dtype=float))

    def scaled(self, factor, center=None) -> "TriMesh":
        c = self.vertices.mean(axis=0) if center is None else np.asarray(center, float)
        return self.with_vertices(c + (self.vertices - c) * np.asarray(factor, float))


@dataclass(frozen=True)
class ShapeParams:
    beta: np.ndarray

    def __post_init__(self):
        b = np.array(self.beta, dtype=np.float64).reshape(-1)
        if b.shape != (NUM_BETAS,):
            raise ShapeSizeError(f"beta must have {NUM_BETAS} entries, got {b.size}")
        if not np.all(np.isfinite(b)):
            raise ValueError("beta contains non-finite values")
        object.__setattr__(self, "beta", _readonly(b))

    @classmethod
    def zeros(cls) -> "ShapeParams":
        return cls(np.zeros(NUM_BETAS))


@dataclass(frozen=True, eq=False)
class BodyModel:
    template: TriMesh
    shape_dirs: np.ndarray
    up_axis: str = "y"
    units: str = "m"

    def __post_init__(self):
        d = np.array(self.shape_dirs, dtype=np.float64)
        if d.ndim != 3 or d.shape[1] != 3:
            raise ShapeSizeError(f"shape_dirs must be (V, 3, K), got {d.shape}")
        if d.shape[0] != self.template.num_vertices:
            raise ShapeSizeError(
                f"shape_dirs has {d.shape[0]} vertices, template has {self.template.num_vertices}"
            )
        object.__setattr__(self, "shape_dirs", _readonly(d))

    @property
    def num_betas(self) -> int:
        return self.shape_dirs.shape[2]


def deform(model: BodyModel, beta) -> TriMesh:
    """Template plus the shape basis contracted with ``beta``."""
    b = beta.beta if isinstance(beta, ShapeParams) else np.asarray(beta, dtype=np.float64).reshape(-1)
    if b.shape[0] != model.num_betas:
        raise ShapeSizeError(f"beta has {b.shape[0]} entries, basis has {model.num_betas}")
    if not np.all(np.isfinite(b)):
        raise ValueError("beta contains non-finite values")
    offsets = model.shape_dirs @ b
    return model.template.with_vertices(model.template.vertices + offsets)


def sample_shapes(count: int, stddev: float = 1.0, seed: int = 0) -> list[ShapeParams]:
    if count < 1:
        raise ValueError("count must be >= 1")
    if not stddev > 0:
        raise ValueError("stddev must be > 0")
    rng = np.random.default_rng(seed)
    draws = rng.normal(0.0, stddev, size=(count, NUM_BETAS))
    return [ShapeParams(row) for row in draws]


# ---------------------------------------------------------------------------
# procedural model


@dataclass
class ProceduralBodyConfig:
    """Base proportions and tessellation of the procedural body.

    ``height`` is stature in meters. Each basis column is the symmetric
    difference of the bodies built at +1 and -1 of that coefficient.
    """

    height: float = 1.70
    torso_rings: int = 64
    torso_segments: int = 32
    limb_rings: int = 24
    limb_segments: int = 16
    # per-unit-coefficient effects
    height_gain: float = 0.04  # relative stature
    girth_gain: float = 0.06  # relative radii, whole body
    bust_gain: float = 0.015  # meters
    waist_gain: float = 0.02
    hip_gain: float = 0.02
    shoulder_gain: float = 0.02
    limb_thickness_gain: float = 0.12  # relative limb radii
    limb_length_gain: float = 0.04  # meters
    torso_length_gain: float = 0.04
    head_gain: float = 0.08  # relative head radii


# Torso/neck/head profile: (fraction of stature, lateral semi-axis, sagittal semi-axis).
_TORSO = np.array([
    [0.465, 0.000, 0.000],
    [0.470, 0.120, 0.100],
    [0.490, 0.160, 0.125],
    [0.520, 0.175, 0.135],
    [0.570, 0.160, 0.125],
    [0.620, 0.140, 0.115],
    [0.670, 0.150, 0.125],
    [0.720, 0.165, 0.135],
    [0.770, 0.170, 0.125],
    [0.810, 0.185, 0.105],
    [0.830, 0.130, 0.080],
    [0.845, 0.055, 0.050],
    [0.870, 0.052, 0.050],
    [0.885, 0.070, 0.080],
    [0.920, 0.082, 0.098],
    [0.960, 0.075, 0.090],
    [0.985, 0.050, 0.060],
    [1.000, 0.000, 0.000],
])
_CROTCH, _SHOULDER, _NECK_TOP = 0.465, 0.810, 0.870
# per-station weights of the regional girth bumps, matched to _TORSO rows
_BUST_W = np.array([0, 0, 0, 0, 0, 0, 0.3, 1.0, 0.6, 0.2, 0, 0, 0, 0, 0, 0, 0, 0], float)
_WAIST_W = np.array([0, 0, 0, 0, 0.4, 1.0, 0.4, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0], float)
_HIP_W = np.array([0, 0.3, 0.7, 1.0, 0.4, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0], float)
_HEAD_W = (_TORSO[:, 0] > _NECK_TOP).astype(float)

# Leg profile from sole to top: (fraction of stature, radius).
_LEG = np.array([
    [0.000, 0.000],
    [0.006, 0.035],
    [0.030, 0.040],
    [0.120, 0.050],
    [0.200, 0.058],
    [0.280, 0.050],
    [0.380, 0.075],
    [0.440, 0.082],
    [0.455, 0.080],
    [0.460, 0.000],
])
_LEG_X = 0.09

# Arm profile from shoulder (s=0) to fingertip (s=1): (s, radius).
_ARM = np.array([
    [0.00, 0.000],
    [0.02, 0.034],
    [0.06, 0.048],
    [0.45, 0.040],
    [0.80, 0.033],
    [0.92, 0.036],
    [1.00, 0.000],
])
_ARM_TOP, _ARM_LENGTH, _ARM_GAP, _ARM_TILT = 0.805, 0.40, 0.012, 0.05


def _loft(ys, cx, cz, a, b, knots, rings: int, segments: int):
    """Closed tube through elliptical stations; first/last stations are apexes."""
    s = np.union1d(np.linspace(knots[0], knots[-1], rings + 2)[1:-1], knots[1:-1])
    rings = len(s)
    y = np.interp(s, knots, ys)
    x0 = np.interp(s, knots, cx)
    z0 = np.interp(s, knots, cz)
    ra = np.interp(s, knots, a)
    rb = np.interp(s, knots, b)
    phi = 2.0 * np.pi * np.arange(segments) / segments
    ring_v = np.stack([
        x0[:, None] + ra[:, None] * np.cos(phi)[None, :],
        np.broadcast_to(y[:, None], (rings, segments)),
        z0[:, None] - rb[:, None] * np.sin(phi)[None, :],
    ], axis=-1).reshape(-1, 3)
    bottom = np.array([[cx[0], ys[0], cz[0]]])
    top = np.array([[cx[-1], ys[-1], cz[-1]]])
    verts = np.concatenate([bottom, ring_v, top])

    idx = 1 + np.arange(rings * segments).reshape(rings, segments)
    nxt = np.roll(idx, -1, axis=1)
    lo, lo_n, hi, hi_n = idx[:-1], nxt[:-1], idx[1:], nxt[1:]
    quads = np.concatenate([
        np.stack([lo, lo_n, hi_n], -1).reshape(-1, 3),
        np.stack([lo, hi_n, hi], -1).reshape(-1, 3),
    ])
    top_i = len(verts) - 1
    caps = np.concatenate([
        np.stack([np.zeros(segments, int), nxt[0], idx[0]], -1),
        np.stack([np.full(segments, top_i), idx[-1], nxt[-1]], -1),
    ])
    return verts, np.concatenate([quads, caps]).astype(np.int64)


def _build_body(cfg: ProceduralBodyConfig, beta: np.ndarray):
    """Vertex positions and faces of the body at coefficients ``beta``.

    Every station coordinate is affine in beta, so the output is too.
    """
    (b_h, b_girth, b_bust, b_waist, b_hip, b_sh, b_limb, b_len, b_torso, b_head) = beta
    stature = cfg.height * (1.0 + cfg.height_gain * b_h)
    girth = 1.0 + cfg.girth_gain * b_girth
    limb = girth + cfg.limb_thickness_gain * b_limb
    leg_extra = cfg.limb_length_gain * b_len

    f = _TORSO[:, 0]
    stretch = np.clip((f - _CROTCH) / (_SHOULDER - _CROTCH), 0.0, 1.0)
    head_lift = np.clip((f - _NECK_TOP) / (1.0 - _NECK_TOP), 0.0, 1.0)
    t_y = (
        f * stature
        + leg_extra
        + cfg.torso_length_gain * b_torso * stretch
        + 0.015 * b_head * head_lift
    )
    head_scale = 1.0 + cfg.head_gain * b_head * _HEAD_W
    region = cfg.bust_gain * b_bust * _BUST_W + cfg.waist_gain * b_waist * _WAIST_W + cfg.hip_gain * b_hip * _HIP_W
    shoulder = np.where(np.isclose(f, _SHOULDER), cfg.shoulder_gain * b_sh, 0.0)
    nonzero = (_TORSO[:, 1] > 0).astype(float)
    t_a = (_TORSO[:, 1] * girth + region + shoulder) * head_scale * nonzero
    t_b = (_TORSO[:, 2] * girth + 0.7 * region) * head_scale * nonzero
    zeros = np.zeros_like(f)

    parts = [(t_y, zeros, zeros, t_a, t_b, f, cfg.torso_rings, cfg.torso_segments)]

    lf = _LEG[:, 0]
    l_y = lf * stature + leg_extra * lf / lf[-1]
    top_w = np.clip((lf - 0.3) / 0.15, 0.0, 1.0)
    l_r = _LEG[:, 1] * limb + 0.5 * cfg.hip_gain * b_hip * top_w * (_LEG[:, 1] > 0)
    leg_x = _LEG_X * girth + 0.5 * cfg.hip_gain * b_hip
    for side in (-1.0, 1.0):
        cx = np.full_like(lf, side * leg_x)
        parts.append((l_y, cx, np.zeros_like(lf), l_r, l_r, lf, cfg.limb_rings, cfg.limb_segments))

    s = _ARM[:, 0]
    shoulder_y = _ARM_TOP * stature + leg_extra + cfg.torso_length_gain * b_torso
    arm_len = _ARM_LENGTH * stature + 0.9 * cfg.limb_length_gain * b_len
    a_y = shoulder_y - s * arm_len
    a_r = _ARM[:, 1] * limb
    top_r = _ARM[:, 1].max() * limb
    shoulder_a = 0.185 * girth + cfg.shoulder_gain * b_sh
    top_x = shoulder_a + top_r + _ARM_GAP + cfg.bust_gain * b_bust
    a_x = top_x + s * (_ARM_TILT + cfg.hip_gain * b_hip)
    for side in (-1.0, 1.0):
        parts.append((a_y, side * a_x, np.zeros_like(s), a_r, a_r, s, cfg.limb_rings, cfg.limb_segments))

    verts, faces, offset = [], [], 0
    for ys, cx, cz, a, b, knots, rings, segs in parts:
        v, fc = _loft(ys, cx, cz, a, b, knots, rings, segs)
        verts.append(v)
        faces.append(fc + offset)
        offset += len(v)
    return np.concatenate(verts), np.concatenate(faces)


def make_procedural_model(config: ProceduralBodyConfig | None = None) -> BodyModel:
    cfg = config or ProceduralBodyConfig()
    if cfg.torso_segments < 3 or cfg.limb_segments < 3 or cfg.torso_rings < 2 or cfg.limb_rings < 2:
        raise ConstructionError("tessellation too coarse for a closed surface")
    if not 1.0 <= cfg.height <= 2.5:
        raise ConstructionError(f"implausible base height {cfg.height} m")
    verts, faces = _build_body(cfg, np.zeros(NUM_BETAS))
    template = TriMesh(verts, faces)
    if not template.is_watertight:
        raise ConstructionError("generated template is not watertight")
    dirs = np.empty((len(verts), 3, NUM_BETAS))
    for k in range(NUM_BETAS):
        e = np.zeros(NUM_BETAS)
        e[k] = 1.0
        plus, _ = _build_body(cfg, e)
        minus, _ = _build_body(cfg, -e)
        dirs[:, :, k] = 0.5 * (plus - minus)
    return BodyModel(template, dirs)


# ---------------------------------------------------------------------------
# file I/O


def save_mesh(mesh: TriMesh, path) -> None:
    lines = [f"v {x:.9f} {y:.9f} {z:.9f}" for x, y, z in mesh.vertices]
    lines += [f"f {i + 1} {j + 1} {k + 1}" for i, j, k in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> TriMesh:
    verts, faces, face_lines = [], [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tag, *rest = line.split()
            if tag == "v":
                if len(rest) < 3:
                    raise MeshParseError(f"{path}, line {lineno}: vertex needs 3 coordinates")
                try:
                    verts.append([float(t) for t in rest[:3]])
                except ValueError:
                    raise MeshParseError(f"{path}, line {lineno}: bad vertex coordinate") from None
            elif tag == "f":
                if len(rest) != 3:
                    raise UnsupportedFormatError(
                        f"{path}, line {lineno}: only triangular faces are supported, got {len(rest)} corners"
                    )
                try:
                    idx = [int(t.split("/")[0]) for t in rest]
                except ValueError:
                    raise MeshParseError(f"{path}, line {lineno}: bad face index") from None
                if min(idx) < 1:
                    raise MeshParseError(f"{path}, line {lineno}: face indices must be positive (1-based)")
                faces.append([i - 1 for i in idx])
                face_lines.append(lineno)
            # vn, vt, o, g, s, usemtl ... are ignored
    if not verts:
        raise MeshParseError(f"{path}: no vertices")
    f = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if f.size and f.max() >= len(verts):
        bad = int(np.argmax(f.max(axis=1) >= len(verts)))
        raise MeshParseError(
            f"{path}, line {face_lines[bad]}: face references vertex {f[bad].max() + 1}, only {len(verts)} defined"
        )
    try:
        return TriMesh(np.array(verts), f)
    except MeshTopologyError as exc:
        raise MeshParseError(f"{path}: {exc}") from None


def save_model_bundle(model: BodyModel, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_mesh(model.template, d / "template.obj")
    dirs = np.ascontiguousarray(model.shape_dirs, dtype="<f4")
    with open(d / "shape_dirs.bin", "wb") as fh:
        fh.write(BASIS_MAGIC)
        fh.write(struct.pack("<3I", *dirs.shape))
        fh.write(dirs.tobytes())


def load_model_bundle(directory) -> BodyModel:
    d = Path(directory)
    template = load_mesh(d / "template.obj")
    raw = (d / "shape_dirs.bin").read_bytes()
    if raw[:8] != BASIS_MAGIC or len(raw) < 20:
        raise MeshParseError(f"{d / 'shape_dirs.bin'}: bad magic header")
    dims = struct.unpack("<3I", raw[8:20])
    if dims[1] != 3:
        raise MeshParseError(f"shape_dirs second dimension must be 3, got {dims[1]}")
    expected = 4 * int(np.prod(dims))
    if len(raw) - 20 != expected:
        raise MeshParseError(f"shape_dirs payload is {len(raw) - 20} bytes, expected {expected}")
    dirs = np.frombuffer(raw, dtype="<f4", offset=20).reshape(dims).astype(np.float64)
    return BodyModel(template, dirs)
