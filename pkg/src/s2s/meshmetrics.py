"""Anthropometry on triangle meshes.

Height counts evenly spaced horizontal cuts between the lowest and highest
point, weight is enclosed volume times body density, and bust/waist/hip are
tape-measure (convex hull) perimeters of horizontal cross-sections.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .bodymodel import TriMesh
from .errors import MeshTopologyError, SliceError

AXES = {"x": 0, "y": 1, "z": 2}
DEFAULT_DENSITY = 0.985  # kg/L


@dataclass(frozen=True)
class SliceSpec:
    axis: str = "y"
    cut_spacing: float = 0.005
    hip_fraction: float = 0.52
    waist_fraction: float = 0.62
    bust_fraction: float = 0.72

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown axis {self.axis!r}")
        if not self.cut_spacing > 0:
            raise ValueError("cut_spacing must be > 0")
        if not 0 < self.hip_fraction < self.waist_fraction < self.bust_fraction < 1:
            raise ValueError("landmark fractions must satisfy 0 < hip < waist < bust < 1")

    @property
    def landmark_fractions(self) -> tuple[float, float, float]:
        return (self.bust_fraction, self.waist_fraction, self.hip_fraction)


@dataclass(frozen=True)
class Measurements:
    height: float  # mm
    weight: float  # kg
    bust: float  # mm
    waist: float  # mm
    hip: float  # mm

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value}")
        for name in ("bust", "waist", "hip"):
            if getattr(self, name) >= 3000:
                raise ValueError(f"{name} of {getattr(self, name):.1f} mm exceeds the 3000 mm sanity bound")

    def to_record(self) -> str:
        return (
            f"height_mm={self.height:.3f}\nweight_kg={self.weight:.3f}\n"
            f"bust_mm={self.bust:.3f}\nwaist_mm={self.waist:.3f}\nhip_mm={self.hip:.3f}\n"
        )

    @classmethod
    def from_record(cls, text: str) -> "Measurements":
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        return cls(
            float(kv["height_mm"]), float(kv["weight_kg"]),
            float(kv["bust_mm"]), float(kv["waist_mm"]), float(kv["hip_mm"]),
        )

    def to_csv_row(self, subject_id: str) -> str:
        return f"{subject_id},{self.height:.3f},{self.weight:.3f},{self.bust:.3f},{self.waist:.3f},{self.hip:.3f}"

    @classmethod
    def from_csv_row(cls, row: str) -> tuple[str, "Measurements"]:
        sid, *vals = row.strip().split(",")
        return sid, cls(*map(float, vals))


CSV_HEADER = "id,height_mm,weight_kg,bust_mm,waist_mm,hip_mm"


def _up(mesh: TriMesh, spec: SliceSpec) -> np.ndarray:
    if mesh.num_vertices == 0:
        raise ValueError("empty mesh")
    return mesh.vertices[:, AXES[spec.axis]]


def height(mesh: TriMesh, spec: SliceSpec = SliceSpec()) -> float:
    """Number of cut planes between the vertical extrema times their spacing, in mm."""
    up = _up(mesh, spec)
    extent = float(up.max() - up.min())
    n_cuts = math.floor(extent / spec.cut_spacing * (1 + 1e-9) + 1e-9)
    return n_cuts * spec.cut_spacing * 1000.0


def volume(mesh: TriMesh) -> float:
    """Enclosed volume in m^3 from the signed tetrahedra against the origin."""
    mesh.check_watertight()
    v = mesh.vertices
    f = mesh.faces
    # shift to the centroid to limit cancellation for far-from-origin meshes
    c = v.mean(axis=0)
    a, b, d = v[f[:, 0]] - c, v[f[:, 1]] - c, v[f[:, 2]] - c
    vol = float(np.einsum("ij,ij->i", a, np.cross(b, d)).sum() / 6.0)
    if vol <= 0:
        raise MeshTopologyError("mesh encloses non-positive volume (inward-facing winding)")
    return vol


def weight(mesh: TriMesh, density: float = DEFAULT_DENSITY) -> float:
    """Body mass in kg; density in kg/L, 1000 L per m^3."""
    return volume(mesh) * density * 1000.0


def _horizontal(axis: str) -> list[int]:
    return [i for i in range(3) if i != AXES[axis]]


def slice_loops(mesh: TriMesh, level: float, axis: str = "y") -> list[np.ndarray]:
    """Closed cross-section polylines at ``up == level`` as (n, 2) arrays.

    Vertices lying exactly on the plane count as above it, so each straddling
    face contributes exactly one segment between two crossing edges.
    """
    up = mesh.vertices[:, AXES[axis]]
    f = mesh.faces
    above = up[f] >= level
    cnt = above.sum(axis=1)
    crossing = f[(cnt == 1) | (cnt == 2)]
    if len(crossing) == 0:
        raise SliceError(f"plane at {level:.4f} m does not intersect the mesh")
    ab = up[crossing] >= level
    # for each face, the two edges (i, i+1) whose endpoints straddle the plane
    e_from = crossing
    e_to = np.roll(crossing, -1, axis=1)
    straddle = ab != np.roll(ab, -1, axis=1)
    n = np.int64(mesh.num_vertices)
    lo = np.minimum(e_from, e_to)
    hi = np.maximum(e_from, e_to)
    keys = (lo * n + hi)[straddle].reshape(-1, 2)
    uniq, inv = np.unique(keys, return_inverse=True)
    inv = inv.reshape(-1, 2)
    deg = np.bincount(inv.ravel(), minlength=len(uniq))
    if np.any(deg != 2):
        raise SliceError("cross-section does not close (mesh is not watertight)")

    # adjacency: each crossing edge joins two faces
    nbr = np.full((len(uniq), 2), -1, dtype=np.int64)
    fill = np.zeros(len(uniq), dtype=np.int64)
    for a, b in inv:
        nbr[a, fill[a]] = b
        fill[a] += 1
        nbr[b, fill[b]] = a
        fill[b] += 1

    ea, eb = uniq // n, uniq % n
    ya, yb = up[ea], up[eb]
    t = (level - ya) / (yb - ya)
    h = _horizontal(axis)
    pa = mesh.vertices[ea][:, h]
    pb = mesh.vertices[eb][:, h]
    pts = pa + t[:, None] * (pb - pa)

    seen = np.zeros(len(uniq), dtype=bool)
    loops = []
    for start in range(len(uniq)):
        if seen[start]:
            continue
        order = [start]
        seen[start] = True
        prev, cur = -1, start
        while True:
            a, b = nbr[cur]
            nxt = b if a == prev else a
            if nxt == start or seen[nxt]:
                break
            seen[nxt] = True
            order.append(nxt)
            prev, cur = cur, nxt
        loops.append(pts[order])
    return loops


def hull_perimeter(points: np.ndarray) -> float:
    pts = np.unique(np.round(points, 12), axis=0)
    if len(pts) < 3:
        return float(2 * np.linalg.norm(pts.max(0) - pts.min(0))) if len(pts) == 2 else 0.0
    try:
        hull = ConvexHull(pts)
    except QhullError:
        # collinear cross-section
        return float(2 * np.linalg.norm(pts.max(0) - pts.min(0)))
    return float(hull.area)  # in 2-D, "area" is the perimeter


def circumference(
    mesh: TriMesh,
    height_fraction: float,
    spec: SliceSpec = SliceSpec(),
    merge_interior: bool = False,
) -> float:
    """Tape-measure girth in mm at a fraction of body height.

    The loop with the largest hull perimeter is taken as the torso. With
    ``merge_interior`` every loop whose centroid lies inside the torso loop's
    bounding box is hulled together with it (legs joining at the hip).
    """
    up = _up(mesh, spec)
    lo, hi = float(up.min()), float(up.max())
    if hi <= lo:
        raise SliceError("mesh has zero vertical extent")
    level = lo + height_fraction * (hi - lo)
    loops = slice_loops(mesh, level, spec.axis)
    perims = [hull_perimeter(p) for p in loops]
    main = int(np.argmax(perims))
    if not merge_interior:
        return perims[main] * 1000.0
    box_lo, box_hi = loops[main].min(axis=0), loops[main].max(axis=0)
    members = [
        p for p in loops
        if np.all(p.mean(axis=0) >= box_lo) and np.all(p.mean(axis=0) <= box_hi)
    ]
    return hull_perimeter(np.concatenate(members)) * 1000.0


def measure_values(
    mesh: TriMesh,
    spec: SliceSpec = SliceSpec(),
    density: float = DEFAULT_DENSITY,
    waist_window: float = 0.05,
    waist_steps: int = 21,
) -> dict:
    """Raw height/volume/weight/girths as a dict, without plausibility checks."""
    bust = circumference(mesh, spec.bust_fraction, spec)
    hip = circumference(mesh, spec.hip_fraction, spec, merge_interior=True)
    candidates = np.linspace(spec.waist_fraction - waist_window, spec.waist_fraction + waist_window, waist_steps)
    waist = min(circumference(mesh, float(fr), spec) for fr in candidates)
    v = volume(mesh)
    return {"height_mm": height(mesh, spec), "volume_m3": v, "weight_kg": v * density * 1000.0,
            "bust_mm": bust, "waist_mm": waist, "hip_mm": hip}


def measure_all(
    mesh: TriMesh,
    spec: SliceSpec = SliceSpec(),
    density: float = DEFAULT_DENSITY,
    waist_window: float = 0.05,
    waist_steps: int = 21,
) -> Measurements:
    """Height, weight and bust/waist/hip. The waist is the narrowest girth
    within ``waist_window`` of the configured waist fraction."""
    m = measure_values(mesh, spec, density, waist_window, waist_steps)
    return Measurements(m["height_mm"], m["weight_kg"], m["bust_mm"], m["waist_mm"], m["hip_mm"])


def per_vertex_error(pred: TriMesh, truth: TriMesh) -> tuple[float, np.ndarray]:
    """Mean vertex distance in mm plus the per-vertex distances of ``pred``.

    Matching vertex counts use correspondences; otherwise nearest-vertex
    distances averaged over both directions.
    """
    if pred.num_vertices == 0 or truth.num_vertices == 0:
        raise ValueError("empty mesh")
    if pred.num_vertices == truth.num_vertices:
        d = np.linalg.norm(pred.vertices - truth.vertices, axis=1) * 1000.0
        return float(d.mean()), d
    d_pt, _ = cKDTree(truth.vertices).query(pred.vertices)
    d_tp, _ = cKDTree(pred.vertices).query(truth.vertices)
    d_pt = d_pt * 1000.0
    return float(0.5 * (d_pt.mean() + d_tp.mean() * 1000.0)), d_pt


def save_heatmap(values: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        fh.writelines(f"{v:.6f}\n" for v in values)


def load_heatmap(path) -> np.ndarray:
    return np.loadtxt(path, dtype=np.float64, ndmin=1)
