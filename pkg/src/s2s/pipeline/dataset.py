"""Synthetic dataset: sampled shapes, ground-truth labels, silhouette pairs."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..bodymodel import BodyModel, ShapeParams, deform, load_model_bundle, sample_shapes, save_model_bundle
from ..errors import DatasetError
from ..meshmetrics import DEFAULT_DENSITY, Measurements, SliceSpec, measure_all
from ..silhouette import SilhouettePair, load_silhouette, render_pair, save_silhouette
from .config import parse_config_text

log = logging.getLogger(__name__)

MANIFEST_HEADER = "id,beta_path,front_path,side_path,height_mm,weight_kg,bust_mm,waist_mm,hip_mm,split"
MANIFEST_NAME = "manifest.csv"
META_NAME = "dataset.cfg"
BODY_DIR = "body_model"
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SubjectRecord:
    id: str
    beta_path: str
    front_path: str
    side_path: str
    measurements: Measurements
    split: str

    def to_row(self) -> str:
        m = self.measurements
        return (f"{self.id},{self.beta_path},{self.front_path},{self.side_path},"
                f"{m.height:.3f},{m.weight:.3f},{m.bust:.3f},{m.waist:.3f},{m.hip:.3f},{self.split}")


@dataclass
class DatasetManifest:
    root: Path
    records: list[SubjectRecord]
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    split_seed: int = 1234
    extra: dict = field(default_factory=dict)

    def split(self, name: str) -> list[SubjectRecord]:
        if name == "all":
            return list(self.records)
        if name not in SPLITS:
            raise DatasetError(f"unknown split {name!r}")
        return [r for r in self.records if r.split == name]

    def beta(self, rec: SubjectRecord) -> ShapeParams:
        return read_beta(self.root / rec.beta_path)

    def pair(self, rec: SubjectRecord) -> SilhouettePair:
        return SilhouettePair(
            load_silhouette(self.root / rec.front_path),
            load_silhouette(self.root / rec.side_path),
            rec.id,
        )

    def body_model(self) -> BodyModel:
        return load_model_bundle(self.root / BODY_DIR)

    def validate(self) -> None:
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise DatasetError("duplicate subject ids in manifest")
        for r in self.records:
            if r.split not in SPLITS:
                raise DatasetError(f"subject {r.id}: unknown split {r.split!r}")
            for rel in (r.beta_path, r.front_path, r.side_path):
                if not (self.root / rel).is_file():
                    raise DatasetError(f"subject {r.id}: missing file {rel}")


def write_beta(beta: ShapeParams, path) -> None:
    Path(path).write_text("".join(f"{float(b)!r}\n" for b in beta.beta))


def read_beta(path) -> ShapeParams:
    try:
        return ShapeParams(np.array([float(t) for t in Path(path).read_text().split()]))
    except ValueError as exc:
        raise DatasetError(f"{path}: {exc}") from None


def assign_splits(count: int, train_fraction: float, val_fraction: float, seed: int) -> list[str]:
    if not (0 < train_fraction <= 1 and 0 <= val_fraction and train_fraction + val_fraction <= 1):
        raise ValueError("invalid split fractions")
    n_train = int(round(train_fraction * count))
    n_val = min(int(round(val_fraction * count)), count - n_train)
    order = np.random.default_rng(seed).permutation(count)
    labels = np.empty(count, dtype=object)
    labels[order[:n_train]] = "train"
    labels[order[n_train:n_train + n_val]] = "val"
    labels[order[n_train + n_val:]] = "test"
    return list(labels)


def synthesize_dataset(
    model: BodyModel,
    count: int,
    seed: int,
    resolution: int,
    out_dir,
    stddev: float = 1.0,
    spec: SliceSpec = SliceSpec(),
    density: float = DEFAULT_DENSITY,
    margin: float = 0.05,
    train_fraction: float = 0.8,
    val_fraction: float = 0.1,
    split_seed: int = 1234,
) -> DatasetManifest:
    """Sample shapes, label them, render both views and write a manifest.

    The manifest is written last (atomically), so its presence marks a
    complete dataset.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    root = Path(out_dir)
    try:
        for sub in ("betas", "images"):
            (root / sub).mkdir(parents=True, exist_ok=True)
        save_model_bundle(model, root / BODY_DIR)
    except OSError as exc:
        raise DatasetError(f"cannot write dataset to {root}: {exc}") from None

    splits = assign_splits(count, train_fraction, val_fraction, split_seed)
    records = []
    for i, beta in enumerate(sample_shapes(count, stddev, seed)):
        sid = f"s{i:05d}"
        try:
            mesh = deform(model, beta)
            meas = measure_all(mesh, spec, density)
            pair = render_pair(mesh, resolution, sid, margin)
            rec = SubjectRecord(
                sid, f"betas/{sid}.txt", f"images/{sid}_front.pgm", f"images/{sid}_side.pgm", meas, splits[i]
            )
            write_beta(beta, root / rec.beta_path)
            save_silhouette(pair.front, root / rec.front_path)
            save_silhouette(pair.side, root / rec.side_path)
        except Exception as exc:
            raise DatasetError(f"subject {sid}: {exc}") from exc
        records.append(rec)
        if (i + 1) % 50 == 0:
            log.info("synthesized %d/%d subjects", i + 1, count)

    meta = {
        "count": count, "seed": seed, "resolution": resolution, "stddev": stddev, "margin": margin,
        "density": density, "cut_spacing": spec.cut_spacing, "train_fraction": train_fraction,
        "val_fraction": val_fraction, "test_fraction": round(1 - train_fraction - val_fraction, 12),
        "split_seed": split_seed,
    }
    (root / META_NAME).write_text("".join(f"{k}={v}\n" for k, v in meta.items()))
    manifest = DatasetManifest(root, records, train_fraction, val_fraction, split_seed, meta)
    write_manifest(manifest)
    return manifest


def write_manifest(manifest: DatasetManifest) -> None:
    path = manifest.root / MANIFEST_NAME
    tmp = path.with_suffix(".csv.tmp")
    tmp.write_text(MANIFEST_HEADER + "\n" + "".join(r.to_row() + "\n" for r in manifest.records))
    os.replace(tmp, path)


def load_manifest(root) -> DatasetManifest:
    root = Path(root)
    path = root / MANIFEST_NAME
    if not path.is_file():
        raise DatasetError(f"{root}: no {MANIFEST_NAME} (incomplete or missing dataset)")
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise DatasetError(f"{path}: unexpected header")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 10:
            raise DatasetError(f"{path}:{lineno}: expected 10 columns, got {len(parts)}")
        try:
            meas = Measurements(*(float(v) for v in parts[4:9]))
        except ValueError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from None
        records.append(SubjectRecord(parts[0], parts[1], parts[2], parts[3], meas, parts[9]))
    meta = parse_config_text((root / META_NAME).read_text()) if (root / META_NAME).is_file() else {}
    manifest = DatasetManifest(
        root, records,
        float(meta.get("train_fraction", 0.8)), float(meta.get("val_fraction", 0.1)),
        int(meta.get("split_seed", 1234)), meta,
    )
    manifest.validate()
    return manifest
