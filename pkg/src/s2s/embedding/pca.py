"""Linear baseline: PCA of flattened silhouettes via thin SVD."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeSizeError
from ..silhouette import Silhouette
from .autoencoder import LATENT_DIM


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray  # (P,)
    components: np.ndarray  # (k, P), orthonormal rows
    shape: tuple[int, int]
    code_dim: int = LATENT_DIM

    @property
    def n_components(self) -> int:
        return self.components.shape[0]


def _flat(images) -> np.ndarray:
    if isinstance(images, (Silhouette, np.ndarray)) and np.ndim(getattr(images, "pixels", images)) == 2:
        images = [images]
    return np.stack([np.asarray(getattr(im, "pixels", im), dtype=np.float64).reshape(-1) for im in images])


def pca_fit(images, n_components: int = LATENT_DIM) -> PcaModel:
    """Top right singular vectors of the centered image matrix."""
    x = _flat(images)
    if len(x) < 2:
        raise ValueError("PCA needs at least 2 images")
    first = images[0]
    shape = tuple(np.shape(getattr(first, "pixels", first)))
    mean = x.mean(axis=0)
    _, sv, vt = np.linalg.svd(x - mean, full_matrices=False)
    # directions with numerically zero variance carry no signal, only rounding noise
    tol = sv[0] * max(x.shape) * np.finfo(np.float64).eps if sv.size else 0.0
    k = max(1, min(n_components, int(np.sum(sv > tol))))
    return PcaModel(mean, vt[:k].copy(), shape, max(n_components, LATENT_DIM))


def pca_encode(model: PcaModel, image) -> np.ndarray:
    """Projection coefficients, zero-padded to ``code_dim`` when fewer components exist."""
    x = _flat(image)
    if x.shape[1] != model.mean.size:
        raise ShapeSizeError(f"image has {x.shape[1]} pixels, model expects {model.mean.size}")
    codes = np.zeros((len(x), model.code_dim))
    codes[:, : model.n_components] = (x - model.mean) @ model.components.T
    return codes[0] if np.ndim(getattr(image, "pixels", image)) == 2 else codes


def pca_decode(model: PcaModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[1] != model.code_dim:
        raise ShapeSizeError(f"code has {z.shape[1]} entries, expected {model.code_dim}")
    img = model.mean + z[:, : model.n_components] @ model.components
    img = np.clip(img, 0.0, 1.0).reshape((len(z),) + model.shape)
    return img[0] if single else img


def save_pca(model: PcaModel, path) -> None:
    with open(path, "wb") as fh:
        np.savez(fh, mean=model.mean, components=model.components,
                 shape=np.array(model.shape), code_dim=np.array(model.code_dim))


def load_pca(path) -> PcaModel:
    with np.load(path) as d:
        return PcaModel(d["mean"], d["components"], tuple(int(s) for s in d["shape"]), int(d["code_dim"]))
