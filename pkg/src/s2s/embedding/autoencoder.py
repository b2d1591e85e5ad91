"""Convolutional silhouette autoencoder.

Encoder: five blocks of 3x3 conv (32 filters) -> batch norm -> leaky ReLU ->
2x2 max pool, then a dense projection to the 256-d code. Decoder: dense back
to the pooled feature map, five blocks of x2 nearest upsampling -> 3x3 conv ->
batch norm -> ReLU, then a 1x1 conv whose sigmoid gives pixel probabilities.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ShapeSizeError
from ..silhouette import Silhouette
from .layers import BatchNorm, Conv2D, Dense, LeakyReLU, MaxPool2, ReLU, Upsample2, run_forward

LATENT_DIM = 256
CKPT_MAGIC = b"S2SAE01\0"
PROB_EPS = 1e-7


@dataclass
class AutoencoderParams:
    resolution: int = 64
    channels: int = 32
    latent: int = LATENT_DIM
    depth: int = 5
    dtype: str = "float32"
    tensors: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.resolution % (2 ** self.depth):
            raise ShapeSizeError(
                f"resolution {self.resolution} is not divisible by {2 ** self.depth}"
            )
        self.encoder, self.decoder = _build_layers(self.resolution, self.channels, self.latent, self.depth)

    @property
    def bottom(self) -> int:
        return self.resolution // 2 ** self.depth

    @property
    def trainable(self) -> list[str]:
        buffers = {n for n in self.tensors if n.endswith((".running_mean", ".running_var"))}
        return [n for n in self.tensors if n not in buffers]

    def copy(self) -> "AutoencoderParams":
        return AutoencoderParams(
            self.resolution, self.channels, self.latent, self.depth, self.dtype,
            {k: v.copy() for k, v in self.tensors.items()},
        )

    def astype(self, dtype: str) -> "AutoencoderParams":
        return AutoencoderParams(
            self.resolution, self.channels, self.latent, self.depth, dtype,
            {k: v.astype(dtype) for k, v in self.tensors.items()},
        )


def _build_layers(res, ch, latent, depth):
    enc, dec = [], []
    cin = 1
    for i in range(depth):
        enc += [Conv2D(f"enc{i}.conv", cin, ch), BatchNorm(f"enc{i}.bn", ch), LeakyReLU(), MaxPool2()]
        cin = ch
    bottom = res // 2 ** depth
    flat = bottom * bottom * ch
    enc.append(Dense("enc.fc", flat, (latent,)))
    dec.append(Dense("dec.fc", latent, (bottom, bottom, ch)))
    for i in range(depth):
        dec += [Upsample2(), Conv2D(f"dec{i}.conv", ch, ch), BatchNorm(f"dec{i}.bn", ch), ReLU()]
    dec.append(Conv2D("out.conv", ch, 1, k=1, bias=True))
    return enc, dec


def init_params(resolution=64, channels=32, latent=LATENT_DIM, depth=5, seed=0, dtype="float32",
                rng=None) -> AutoencoderParams:
    params = AutoencoderParams(resolution, channels, latent, depth, dtype)
    rng = rng if rng is not None else np.random.default_rng(seed)
    for layer in params.encoder + params.decoder:
        if hasattr(layer, "init"):
            params.tensors.update(layer.init(rng, dtype))
    return params


def _as_batch(params: AutoencoderParams, images) -> np.ndarray:
    if isinstance(images, Silhouette):
        images = [images]
    if isinstance(images, np.ndarray):
        arr = images if images.ndim == 3 else images[None]
    else:
        arr = np.stack([im.pixels if isinstance(im, Silhouette) else np.asarray(im) for im in images])
    r = params.resolution
    if arr.shape[1:] != (r, r):
        raise ShapeSizeError(f"expected {r}x{r} images, got {arr.shape[1:]}")
    return arr.astype(params.dtype)[..., None]


def encode_batch(params: AutoencoderParams, images, train=False, updates=None) -> np.ndarray:
    z, _ = run_forward(params.encoder, params.tensors, _as_batch(params, images), train, updates)
    return z


def encode(params: AutoencoderParams, image) -> np.ndarray:
    """256-d code of one silhouette (inference-mode batch norm)."""
    return encode_batch(params, [image])[0].astype(np.float64)


def decode_logits(params: AutoencoderParams, z, train=False, updates=None) -> np.ndarray:
    z = np.asarray(z, dtype=params.dtype)
    if z.ndim == 1:
        z = z[None]
    if z.shape[1] != params.latent:
        raise ShapeSizeError(f"code has {z.shape[1]} entries, expected {params.latent}")
    logits, _ = run_forward(params.decoder, params.tensors, z, train, updates)
    return logits[..., 0]


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def decode(params: AutoencoderParams, z) -> np.ndarray:
    """Pixel probabilities in (0, 1) for one code (or a batch of codes)."""
    single = np.ndim(z) == 1
    p = np.clip(sigmoid(decode_logits(params, z)), PROB_EPS, 1.0 - PROB_EPS)
    return p[0] if single else p


def reconstruct(params: AutoencoderParams, images) -> np.ndarray:
    return decode(params, encode_batch(params, images))


# ---------------------------------------------------------------------------
# checkpoint I/O


def save_checkpoint(params: AutoencoderParams, path) -> None:
    chunks = [CKPT_MAGIC, struct.pack("<5I", params.resolution, len(params.tensors),
                                      params.channels, params.latent, params.depth)]
    for name, arr in params.tensors.items():
        raw = name.encode("ascii")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path, dtype="float32") -> AutoencoderParams:
    data = Path(path).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise ShapeSizeError(f"{path}: not an autoencoder checkpoint")
    res, count, ch, latent, depth = struct.unpack_from("<5I", data, 8)
    pos = 8 + 20
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + nlen].decode("ascii")
        pos += nlen
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape))
        tensors[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape).astype(dtype)
        pos += 4 * size
    return AutoencoderParams(res, ch, latent, depth, dtype, tensors)
