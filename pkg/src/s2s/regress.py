"""Polynomial-kernel ridge regression from silhouette codes (+ height, weight).

Solved in the dual: with standardized inputs X, Gram matrix
K = (scale * X X^T + offset) ** degree and centered targets Y, the
coefficients satisfy (K + lambda I) alpha = Y. A new point x predicts
k(x, X) @ alpha plus the training target mean.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import ShapeSizeError, SolverError

CODE_DIM = 256
FEATURE_DIM = 2 * CODE_DIM + 2
KRR_MAGIC = b"S2SKRR1\0"
TARGET_KINDS = ("shape", "measurements")


def build_features(front_z, side_z, height_mm: float, weight_kg: float) -> np.ndarray:
    """[front code | side code | height | weight], length 514."""
    f = np.asarray(front_z, dtype=np.float64).reshape(-1)
    s = np.asarray(side_z, dtype=np.float64).reshape(-1)
    if f.size != CODE_DIM or s.size != CODE_DIM:
        raise ShapeSizeError(f"codes must have {CODE_DIM} entries, got {f.size} and {s.size}")
    if not (height_mm > 0 and weight_kg > 0):
        raise ValueError("height and weight must be positive")
    out = np.concatenate([f, s, [height_mm, weight_kg]])
    if not np.all(np.isfinite(out)):
        raise ValueError("feature vector contains non-finite values")
    return out


def split_features(features):
    v = np.asarray(features)
    return v[:CODE_DIM], v[CODE_DIM:2 * CODE_DIM], float(v[-2]), float(v[-1])


@dataclass(frozen=True)
class KernelSpec:
    degree: int = 3
    scale: float | None = None  # None -> 1 / feature dimension
    offset: float = 1.0
    kind: str = "polynomial"

    def __post_init__(self):
        if self.kind != "polynomial":
            raise ValueError(f"unsupported kernel {self.kind!r}")
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if self.scale is not None and not self.scale > 0:
            raise ValueError("scale must be > 0")

    def resolved_scale(self, dim: int) -> float:
        return 1.0 / dim if self.scale is None else self.scale

    def __call__(self, a, b):
        a = np.atleast_2d(a)
        b = np.atleast_2d(b)
        return (self.resolved_scale(a.shape[1]) * (a @ b.T) + self.offset) ** self.degree


def default_hyperparams() -> tuple[KernelSpec, float]:
    return KernelSpec(degree=3), 0.1


@dataclass(frozen=True, eq=False)
class KrrModel:
    train_x: np.ndarray  # standardized, (n, d)
    feat_mean: np.ndarray
    feat_scale: np.ndarray
    target_mean: np.ndarray  # (m,)
    dual_coef: np.ndarray  # (n, m)
    lam: float
    kernel: KernelSpec
    target_kind: str = "measurements"

    @property
    def dim(self) -> int:
        return self.train_x.shape[1]

    @property
    def output_dim(self) -> int:
        return self.dual_coef.shape[1]

    def standardize(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.feat_mean) / self.feat_scale


def gram(kernel: KernelSpec, a, b=None) -> np.ndarray:
    return kernel(a, a if b is None else b)


def fit(features, targets, kernel: KernelSpec | None = None, lam: float = 0.1,
        target_kind: str = "measurements") -> KrrModel:
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if x.ndim != 2 or len(x) < 2:
        raise ValueError("need at least 2 training rows")
    if len(y) != len(x):
        raise ShapeSizeError(f"{len(x)} feature rows but {len(y)} target rows")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("NaN or infinite values in training data")
    if not lam > 0:
        raise ValueError("lambda must be > 0")
    if target_kind not in TARGET_KINDS:
        raise ValueError(f"target_kind must be one of {TARGET_KINDS}")
    kernel = kernel or default_hyperparams()[0]

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    scale = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 1.0)
    xs = (x - mean) / scale
    y_mean = y.mean(axis=0)

    k = gram(kernel, xs)
    k[np.diag_indices_from(k)] += lam
    try:
        factor = cho_factor(k, lower=True, check_finite=False)
    except LinAlgError:
        raise SolverError(
            f"Gram matrix + lambda*I is not positive definite at lambda={lam}; try a larger lambda"
        ) from None
    alpha = cho_solve(factor, y - y_mean, check_finite=False)
    return KrrModel(xs, mean, scale, y_mean, alpha, float(lam), kernel, target_kind)


def predict(model: KrrModel, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.dim:
        raise ShapeSizeError(f"feature length {x.shape[1]} != trained length {model.dim}")
    out = gram(model.kernel, model.standardize(x), model.train_x) @ model.dual_coef + model.target_mean
    return out[0] if single else out


def save_krr(model: KrrModel, path) -> None:
    n, d = model.train_x.shape
    m = model.output_dim
    scale = model.kernel.resolved_scale(d)
    head = KRR_MAGIC + struct.pack(
        "<4I3dB", n, d, m, model.kernel.degree, scale, model.kernel.offset, model.lam,
        TARGET_KINDS.index(model.target_kind),
    )
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in (
        model.feat_mean, model.feat_scale, model.target_mean, model.train_x, model.dual_coef))
    Path(path).write_bytes(head + body)


def load_krr(path) -> KrrModel:
    data = Path(path).read_bytes()
    if data[:8] != KRR_MAGIC:
        raise SolverError(f"{path}: not a KRR model file")
    fmt = "<4I3dB"
    n, d, m, degree, scale, offset, lam, kind = struct.unpack_from(fmt, data, 8)
    arr = np.frombuffer(data, dtype="<f8", offset=8 + struct.calcsize(fmt))
    sizes = [d, d, m, n * d, n * m]
    if arr.size != sum(sizes):
        raise SolverError(f"{path}: truncated KRR model payload")
    parts = np.split(arr.astype(np.float64), np.cumsum(sizes)[:-1])
    return KrrModel(
        parts[3].reshape(n, d), parts[0], parts[1], parts[2], parts[4].reshape(n, m),
        lam, KernelSpec(degree, scale, offset), TARGET_KINDS[kind],
    )
