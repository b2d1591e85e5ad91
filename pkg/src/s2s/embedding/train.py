"""Two-view reconstruction loss, Adam, training loop and gradient checking."""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from ..errors import ShapeSizeError, TrainingDivergedError
from ..silhouette import SilhouettePair
from .autoencoder import PROB_EPS, AutoencoderParams, init_params, reconstruct, sigmoid
from .layers import LeakyReLU, MaxPool2, ReLU, run_backward, run_forward


@dataclass
class TrainConfig:
    batch_size: int = 32  # pairs per step
    epochs: int = 50
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    channels: int = 32
    single_thread: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")


def bce_loss(pred, target) -> float:
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    p = np.asarray(pred, dtype=np.float64)
    q = np.asarray(getattr(target, "pixels", target), dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeSizeError(f"prediction {p.shape} and target {q.shape} differ in size")
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return float(-np.mean(q * np.log(p) + (1.0 - q) * np.log1p(-p)))


def _stack(pairs, dtype):
    front = np.stack([pr.front.pixels for pr in pairs]).astype(dtype)
    side = np.stack([pr.side.pixels for pr in pairs]).astype(dtype)
    return front, side


def _forward(params: AutoencoderParams, front, side, train, updates):
    b = front.shape[0]
    x = np.concatenate([front, side])[..., None].astype(params.dtype)
    z, tape_e = run_forward(params.encoder, params.tensors, x, train, updates)
    logits, tape_d = run_forward(params.decoder, params.tensors, z, train, updates)
    prob = sigmoid(logits[..., 0])
    q = x[..., 0].astype(np.float64)
    loss = bce_loss(prob[:b], q[:b]) + bce_loss(prob[b:], q[b:])
    return loss, prob, q, tape_e, tape_d


def batch_loss_and_grads(params: AutoencoderParams, front, side, train=True, updates=None,
                         need_grads=True):
    """Summed per-view BCE over a batch and its gradient w.r.t. all trainable tensors.

    ``front`` and ``side`` are (B, R, R) arrays; both views go through the
    same network in one batch.
    """
    loss, prob, q, tape_e, tape_d = _forward(params, front, side, train, updates)
    if not need_grads:
        return loss, None
    # gradient of the unclamped BCE through the sigmoid; each view is a mean over b*R*R pixels
    n_pix = front.shape[0] * q.shape[1] * q.shape[2]
    g = ((prob - q) / n_pix).astype(params.dtype)[..., None]
    grads: dict = {}
    gz = run_backward(params.decoder, params.tensors, tape_d, g, grads)
    run_backward(params.encoder, params.tensors, tape_e, gz, grads)
    return loss, grads


def pair_loss(params: AutoencoderParams, pair: SilhouettePair, train=False) -> float:
    """Front-view BCE plus side-view BCE for one subject."""
    if train:
        front, side = _stack([pair], params.dtype)
        return batch_loss_and_grads(params, front, side, train=True, need_grads=False)[0]
    return (bce_loss(reconstruct(params, pair.front)[0], pair.front)
            + bce_loss(reconstruct(params, pair.side)[0], pair.side))


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, tensors: dict, grads: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            update = (self.lr / corr1) * m / (np.sqrt(v / corr2) + self.eps)
            tensors[name] -= update.astype(tensors[name].dtype, copy=False)


def _maybe_single_thread(flag: bool):
    return threadpool_limits(limits=1) if flag else contextlib.nullcontext()


def train_autoencoder(dataset: list[SilhouettePair], cfg: TrainConfig = TrainConfig(),
                      params: AutoencoderParams | None = None, log=None):
    """Adam on the two-view BCE. Returns (params, per-epoch mean loss list)."""
    if not dataset:
        raise ValueError("empty training set")
    res = dataset[0].front.height
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(res, cfg.channels, seed=cfg.seed, rng=rng)
    else:
        params = params.copy()
    if params.resolution != res:
        raise ShapeSizeError(f"dataset resolution {res} != network resolution {params.resolution}")
    front_all, side_all = _stack(dataset, params.dtype)
    opt = Adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    trainable = set(params.trainable)
    history = []
    with _maybe_single_thread(cfg.single_thread):
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(dataset))
            total, seen = 0.0, 0
            for bi, start in enumerate(range(0, len(order), cfg.batch_size)):
                idx = order[start:start + cfg.batch_size]
                updates: dict = {}
                loss, grads = batch_loss_and_grads(params, front_all[idx], side_all[idx], True, updates)
                if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                    raise TrainingDivergedError(
                        f"non-finite loss/gradient at epoch {epoch}, batch {bi + 1}"
                    )
                opt.step(params.tensors, {k: v for k, v in grads.items() if k in trainable})
                for name, value in updates.items():
                    params.tensors[name] = value.astype(params.dtype, copy=False)
                total += loss * len(idx)
                seen += len(idx)
            history.append(total / seen)
            if log is not None:
                log(epoch, history[-1])
    return params, history


def write_loss_history(history, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,mean_loss\n")
        fh.writelines(f"{i},{v:.10g}\n" for i, v in enumerate(history, start=1))


def read_loss_history(path) -> list[float]:
    lines = open(path).read().splitlines()[1:]
    return [float(line.split(",")[1]) for line in lines if line]


# ---------------------------------------------------------------------------
# gradient checking


def relative_discrepancy(analytic, numeric, floor=1e-8) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def _kink_pattern(params, tape_e, tape_d):
    """Activation signs and pooling winners: the loss is smooth while these stay fixed."""
    out = []
    for layers, tape in ((params.encoder, tape_e), (params.decoder, tape_d)):
        for layer, cache in zip(layers, tape):
            if isinstance(layer, (ReLU, LeakyReLU)):
                out.append(cache)
            elif isinstance(layer, MaxPool2):
                out.append(cache[0])
    return out


def grad_check(params: AutoencoderParams, pairs, n_samples: int = 200, step: float = 1e-4,
               seed: int = 0, train: bool = True, return_details: bool = False):
    """Max relative gap between backprop and central differences of the pair loss.

    Runs in float64 on a copy of ``params``. Samples are spread evenly over
    every trainable tensor. A coordinate whose +-step perturbation flips a
    ReLU sign or a max-pool winner is skipped (the central difference is not
    a derivative estimate across a kink) and another one is drawn.
    """
    if isinstance(pairs, SilhouettePair):
        pairs = [pairs]
    p64 = params.astype("float64")
    front, side = _stack(pairs, "float64")

    def probe():
        loss, _, _, te, td = _forward(p64, front, side, train, None)
        return loss, _kink_pattern(p64, te, td)

    _, grads = batch_loss_and_grads(p64, front, side, train=train)
    _, base = probe()
    rng = np.random.default_rng(seed)
    names = p64.trainable
    per = max(1, math.ceil(n_samples / len(names)))
    analytic, numeric, where = [], [], []
    skipped = 0

    def try_coord(name, i) -> bool:
        nonlocal skipped
        flat = p64.tensors[name].reshape(-1)
        old = flat[i]
        flat[i] = old + step
        up, pat_up = probe()
        flat[i] = old - step
        down, pat_down = probe()
        flat[i] = old
        if not all(np.array_equal(a, b) and np.array_equal(a, c)
                   for a, b, c in zip(base, pat_up, pat_down)):
            skipped += 1
            return False
        numeric.append((up - down) / (2 * step))
        analytic.append(grads[name].reshape(-1)[i])
        where.append((name, int(i)))
        return True

    # stratified pass, then top up from all tensors until n_samples are checked
    leftovers = []
    for name in names:
        order = rng.permutation(p64.tensors[name].size)
        taken, pos = 0, 0
        while taken < per and pos < min(len(order), 10 * per):
            taken += try_coord(name, int(order[pos]))
            pos += 1
        leftovers += [(name, int(i)) for i in order[pos:]]
    pool = rng.permutation(len(leftovers))
    for j in pool[: 20 * n_samples]:
        if len(analytic) >= n_samples:
            break
        try_coord(*leftovers[j])
    rel = relative_discrepancy(analytic, numeric)
    if return_details:
        return float(rel.max()), {"analytic": np.array(analytic), "numeric": np.array(numeric),
                                  "where": where, "relative": rel, "skipped": skipped}
    return float(rel.max())
