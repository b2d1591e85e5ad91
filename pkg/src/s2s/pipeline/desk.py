"""One-call synthesize, train and evaluate run used by the scripts and the acceptance suite."""

from __future__ import annotations

from pathlib import Path

from ..bodymodel import make_procedural_model
from .config import ExperimentConfig
from .dataset import load_manifest, synthesize_dataset
from .experiment import EvalReport, evaluate, train_all


def run_experiment(cfg: ExperimentConfig, root, split: str = "test") -> EvalReport:
    """Writes ROOT/data, ROOT/model and ROOT/eval_SPLIT; returns the report."""
    root = Path(root)
    synthesize_dataset(
        make_procedural_model(), cfg.count, cfg.seed, cfg.resolution, root / "data", cfg.stddev,
        cfg.slice_spec(), cfg.density, cfg.margin, cfg.train_fraction, cfg.val_fraction, cfg.split_seed,
    )
    manifest = load_manifest(root / "data")
    bundle = train_all(manifest, cfg.train_config(), cfg.kernel(), cfg.krr_lambda, root / "model")
    return evaluate(bundle, manifest, split, root / f"eval_{split}", single_thread=cfg.single_thread)
