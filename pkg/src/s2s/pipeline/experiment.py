"""Training, prediction and evaluation over a synthetic dataset."""

from __future__ import annotations

import contextlib
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from ..bodymodel import BodyModel, ShapeParams, TriMesh, deform, load_model_bundle, save_mesh
from ..embedding.autoencoder import AutoencoderParams, encode_batch, load_checkpoint, reconstruct, save_checkpoint
from ..embedding.pca import PcaModel, load_pca, pca_decode, pca_encode, pca_fit, save_pca
from ..embedding.train import TrainConfig, train_autoencoder, write_loss_history
from ..errors import DatasetError, ShapeSizeError
from ..meshmetrics import per_vertex_error, save_heatmap
from ..regress import KernelSpec, build_features, fit, load_krr, predict, save_krr
from ..silhouette import Silhouette, SilhouettePair, pixel_accuracy
from .dataset import BODY_DIR, DatasetManifest

log = logging.getLogger(__name__)

MEASURE_KEYS = ("bust", "waist", "hip")
ENCODERS = ("ae", "pca")
HEADS = ("shape", "measurements")
AE_FILE = "autoencoder.ckpt"
PCA_FILE = "pca.npz"
META_FILE = "metadata.txt"
LOSS_FILE = "loss_history.csv"


def _krr_file(encoder: str, head: str) -> str:
    return f"krr_{head}_{encoder}.bin"


@dataclass
class ModelBundle:
    ae: AutoencoderParams
    pca: PcaModel
    heads: dict  # (encoder, head) -> KrrModel
    body: BodyModel
    metadata: dict = field(default_factory=dict)

    @property
    def resolution(self) -> int:
        return self.ae.resolution

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(self.ae, out / AE_FILE)
        save_pca(self.pca, out / PCA_FILE)
        for (enc, head), model in self.heads.items():
            save_krr(model, out / _krr_file(enc, head))
        (out / META_FILE).write_text("".join(f"{k}={v}\n" for k, v in self.metadata.items()))


def load_bundle(model_dir, body_dir=None) -> ModelBundle:
    d = Path(model_dir)
    if not (d / AE_FILE).is_file():
        raise DatasetError(f"{d}: no trained model ({AE_FILE} missing)")
    heads = {(e, h): load_krr(d / _krr_file(e, h)) for e in ENCODERS for h in HEADS}
    meta = {}
    if (d / META_FILE).is_file():
        meta = dict(l.split("=", 1) for l in (d / META_FILE).read_text().splitlines() if "=" in l)
    body = load_model_bundle(body_dir or d / BODY_DIR)
    return ModelBundle(load_checkpoint(d / AE_FILE), load_pca(d / PCA_FILE), heads, body, meta)


def _codes(bundle_ae, bundle_pca, pairs, encoder: str, chunk: int = 64):
    """(front codes, side codes) for a list of silhouette pairs."""
    fronts = [p.front for p in pairs]
    sides = [p.side for p in pairs]
    if encoder == "pca":
        return pca_encode(bundle_pca, fronts), pca_encode(bundle_pca, sides)
    out = []
    for views in (fronts, sides):
        parts = [encode_batch(bundle_ae, views[i:i + chunk]) for i in range(0, len(views), chunk)]
        out.append(np.concatenate(parts).astype(np.float64))
    return out[0], out[1]


def _features(front_z, side_z, records):
    return np.stack([
        build_features(f, s, r.measurements.height, r.measurements.weight)
        for f, s, r in zip(front_z, side_z, records)
    ])


def _measure_targets(records) -> np.ndarray:
    return np.array([[getattr(r.measurements, k) for k in MEASURE_KEYS] for r in records])


def train_all(manifest: DatasetManifest, train_cfg: TrainConfig, kernel: KernelSpec, lam: float,
              out_dir, extra_meta: dict | None = None) -> ModelBundle:
    """Autoencoder + PCA on train-split silhouettes, then KRR heads on both code types."""
    train = manifest.split("train")
    if not train:
        raise DatasetError("train split is empty")
    pairs = [manifest.pair(r) for r in train]
    res = pairs[0].front.height
    if any(p.front.pixels.shape != (res, res) for p in pairs):
        raise ShapeSizeError("silhouettes in the train split have mixed resolutions")
    log.info("training autoencoder on %d pairs at %dx%d", len(pairs), res, res)
    ae, history = train_autoencoder(
        pairs, train_cfg, log=lambda e, l: log.info("epoch %d mean loss %.6f", e, l))
    pca = pca_fit([p.front for p in pairs] + [p.side for p in pairs])

    betas = np.stack([manifest.beta(r).beta for r in train])
    meas = _measure_targets(train)
    heads = {}
    with threadpool_limits(limits=1) if train_cfg.single_thread else contextlib.nullcontext():
        for enc in ENCODERS:
            fz, sz = _codes(ae, pca, pairs, enc)
            x = _features(fz, sz, train)
            heads[(enc, "shape")] = fit(x, betas, kernel, lam, "shape")
            heads[(enc, "measurements")] = fit(x, meas, kernel, lam, "measurements")

    meta = {
        "resolution": res, "train_subjects": len(train), "ae_seed": train_cfg.seed,
        "epochs": train_cfg.epochs, "batch_size": train_cfg.batch_size,
        "learning_rate": train_cfg.learning_rate, "channels": train_cfg.channels,
        "krr_degree": kernel.degree, "krr_scale": kernel.resolved_scale(2 * 256 + 2),
        "krr_offset": kernel.offset, "krr_lambda": lam, "split_seed": manifest.split_seed,
        "dataset_seed": manifest.extra.get("seed", ""),
        "final_loss": f"{history[-1]:.10g}", **(extra_meta or {}),
    }
    val = manifest.split("val")
    if val:
        vpairs = [manifest.pair(r) for r in val]
        vtrue = _measure_targets(val)
        for enc in ENCODERS:
            fz, sz = _codes(ae, pca, vpairs, enc)
            err = np.abs(predict(heads[(enc, "measurements")], _features(fz, sz, val)) - vtrue).mean(axis=0)
            for k, e in zip(MEASURE_KEYS, err):
                meta[f"val_mae_{enc}_{k}_mm"] = f"{e:.6f}"
            log.info("val MAE (%s features): %s", enc, ", ".join(f"{k} {e:.2f} mm" for k, e in zip(MEASURE_KEYS, err)))
    bundle = ModelBundle(ae, pca, heads, manifest.body_model(), meta)
    out = Path(out_dir)
    bundle.save(out)
    write_loss_history(history, out / LOSS_FILE)
    if (out / BODY_DIR).resolve() != (manifest.root / BODY_DIR).resolve():
        shutil.copytree(manifest.root / BODY_DIR, out / BODY_DIR, dirs_exist_ok=True)
    return bundle


@dataclass
class SubjectPrediction:
    beta: ShapeParams
    bust: float
    waist: float
    hip: float
    mesh: TriMesh


def predict_subject(bundle: ModelBundle, front: Silhouette, side: Silhouette, height_mm: float,
                    weight_kg: float, encoder: str = "ae") -> SubjectPrediction:
    r = bundle.resolution
    for name, s in (("front", front), ("side", side)):
        if s.pixels.shape != (r, r):
            raise ShapeSizeError(f"{name} silhouette is {s.width}x{s.height}, model expects {r}x{r}")
        if s.is_empty:
            raise DatasetError(f"{name} silhouette has no foreground pixels")
    fz, sz = _codes(bundle.ae, bundle.pca, [SilhouettePair(front, side)], encoder)
    x = build_features(fz[0], sz[0], height_mm, weight_kg)
    beta = ShapeParams(predict(bundle.heads[(encoder, "shape")], x))
    bwh = predict(bundle.heads[(encoder, "measurements")], x)
    return SubjectPrediction(beta, *map(float, bwh), deform(bundle.body, beta))


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    split: str
    n: int
    mae: dict  # encoder -> {bust, waist, hip}
    baseline_mae: dict  # {bust, waist, hip} of the train-mean predictor
    per_vertex: dict  # encoder -> mm
    baseline_per_vertex: float
    pixel_accuracy: dict  # encoder -> {front, side}

    def rows(self):
        yield "split", self.split
        yield "n", self.n
        for enc, d in self.mae.items():
            for k in MEASURE_KEYS:
                yield f"{enc}_mae_{k}_mm", d[k]
        for k in MEASURE_KEYS:
            yield f"baseline_mae_{k}_mm", self.baseline_mae[k]
        for enc, v in self.per_vertex.items():
            yield f"{enc}_per_vertex_mm", v
        yield "baseline_per_vertex_mm", self.baseline_per_vertex
        for enc, d in self.pixel_accuracy.items():
            for view in ("front", "side"):
                yield f"{enc}_pixel_accuracy_{view}", d[view]

    def to_csv(self) -> str:
        def fmt(v):
            return f"{v:.10g}" if isinstance(v, float) else str(v)

        return "metric,value\n" + "".join(f"{k},{fmt(v)}\n" for k, v in self.rows())

    def summary(self) -> str:
        lines = [f"split={self.split} subjects={self.n}", "measurement MAE (mm):"]
        lines.append(f"  {'':>10}" + "".join(f"{k:>10}" for k in MEASURE_KEYS))
        for enc, d in list(self.mae.items()) + [("mean-pred", self.baseline_mae)]:
            lines.append(f"  {enc:>10}" + "".join(f"{d[k]:10.2f}" for k in MEASURE_KEYS))
        lines.append("per-vertex mean error (mm):")
        for enc, v in self.per_vertex.items():
            lines.append(f"  {enc:>10}{v:10.3f}")
        lines.append(f"  {'mean-beta':>10}{self.baseline_per_vertex:10.3f}")
        lines.append("reconstruction pixel accuracy (%):")
        lines.append(f"  {'':>10}{'front':>10}{'side':>10}")
        for enc, d in self.pixel_accuracy.items():
            lines.append(f"  {enc:>10}{100 * d['front']:10.2f}{100 * d['side']:10.2f}")
        return "\n".join(lines) + "\n"


def evaluate(bundle: ModelBundle, manifest: DatasetManifest, split: str = "val", out_dir=None,
             predictor=None, single_thread: bool = True) -> EvalReport:
    """MAE, per-vertex error and reconstruction accuracy over one split.

    ``predictor(record, features) -> (beta, [bust, waist, hip])`` replaces the
    AE heads when given (used to inject known answers).
    """
    recs = manifest.split(split)
    if not recs:
        raise DatasetError(f"split {split!r} is empty")
    train = manifest.split("train")
    if not train:
        raise DatasetError("train split is empty; no baseline available")
    with threadpool_limits(limits=1) if single_thread else contextlib.nullcontext():
        return _evaluate(bundle, manifest, split, recs, train, out_dir, predictor)


def _evaluate(bundle, manifest, split, recs, train, out_dir, predictor):
    pairs = [manifest.pair(r) for r in recs]
    true_beta = np.stack([manifest.beta(r).beta for r in recs])
    true_meas = _measure_targets(recs)
    truth_meshes = [deform(bundle.body, b) for b in true_beta]

    base_beta = np.mean([manifest.beta(r).beta for r in train], axis=0)
    base_meas = _measure_targets(train).mean(axis=0)
    baseline_mae = dict(zip(MEASURE_KEYS, np.abs(true_meas - base_meas).mean(axis=0).tolist()))
    base_mesh = deform(bundle.body, base_beta)
    baseline_pv = float(np.mean([per_vertex_error(base_mesh, t)[0] for t in truth_meshes]))

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "heatmaps").mkdir(parents=True, exist_ok=True)

    mae, pv, acc = {}, {}, {}
    for enc in ENCODERS:
        fz, sz = _codes(bundle.ae, bundle.pca, pairs, enc)
        x = _features(fz, sz, recs)
        if predictor is not None and enc == "ae":
            preds = [predictor(r, xi) for r, xi in zip(recs, x)]
            beta_hat = np.stack([np.asarray(p[0], float) for p in preds])
            meas_hat = np.stack([np.asarray(p[1], float) for p in preds])
        else:
            beta_hat = predict(bundle.heads[(enc, "shape")], x)
            meas_hat = predict(bundle.heads[(enc, "measurements")], x)
        mae[enc] = dict(zip(MEASURE_KEYS, np.abs(meas_hat - true_meas).mean(axis=0).tolist()))
        errs = []
        for r, b, truth in zip(recs, beta_hat, truth_meshes):
            mesh = deform(bundle.body, b)
            mean_mm, per_v = per_vertex_error(mesh, truth)
            errs.append(mean_mm)
            if out is not None and enc == "ae":
                save_heatmap(per_v, out / "heatmaps" / f"{r.id}_heat.txt")
                save_mesh(mesh, out / "heatmaps" / f"{r.id}_pred.obj")
        pv[enc] = float(np.mean(errs))

        fronts = [p.front for p in pairs]
        sides = [p.side for p in pairs]
        if enc == "ae":
            rec_f, rec_s = reconstruct(bundle.ae, fronts), reconstruct(bundle.ae, sides)
        else:
            rec_f, rec_s = pca_decode(bundle.pca, fz), pca_decode(bundle.pca, sz)
        acc[enc] = {
            "front": float(np.mean([pixel_accuracy(a, b) for a, b in zip(rec_f, fronts)])),
            "side": float(np.mean([pixel_accuracy(a, b) for a, b in zip(rec_s, sides)])),
        }

    report = EvalReport(split, len(recs), mae, baseline_mae, pv, baseline_pv, acc)
    if out is not None:
        (out / "report.csv").write_text(report.to_csv())
        (out / "summary.txt").write_text(report.summary())
    return report


def load_report_csv(path) -> dict:
    lines = Path(path).read_text().splitlines()[1:]
    return dict(line.split(",", 1) for line in lines if line)
