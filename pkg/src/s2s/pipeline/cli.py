"""Command-line entry point: ``s2s <subcommand> [--config FILE] [overrides]``.

Exit status is 0 on success, 1 for usage errors and 2 for data or model
errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..bodymodel import load_mesh, load_model_bundle, make_procedural_model, save_mesh
from ..errors import S2SError
from ..meshmetrics import measure_values
from ..silhouette import ViewSpec, load_silhouette, rasterize, save_silhouette
from .config import ExperimentConfig, load_config, write_config
from .dataset import load_manifest, synthesize_dataset
from .experiment import evaluate, load_bundle, predict_subject, train_all

SNAPSHOT = "effective_config.txt"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add(p, flag, key, kind, help_text):
    default = getattr(ExperimentConfig(), key)
    p.add_argument(flag, dest=key, type=kind, default=None, help=f"{help_text} (default {default})")


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _synthesis_flags(p):
    _add(p, "--count", "count", int, "number of subjects")
    _add(p, "--seed", "seed", int, "shape sampling seed")
    _add(p, "--resolution", "resolution", int, "silhouette size in pixels (multiple of 32)")
    _add(p, "--stddev", "stddev", float, "standard deviation of sampled shape coefficients")
    _add(p, "--margin", "margin", float, "frame margin as a fraction of image height")
    _add(p, "--train-fraction", "train_fraction", float, "share of subjects in the train split")
    _add(p, "--val-fraction", "val_fraction", float, "share of subjects in the val split")
    _add(p, "--split-seed", "split_seed", int, "seed of the split assignment")


def _anthro_flags(p):
    _add(p, "--density", "density", float, "body density in kg/L")
    _add(p, "--cut-spacing", "cut_spacing", float, "slice spacing in meters")
    _add(p, "--hip-fraction", "hip_fraction", float, "hip height as a fraction of stature")
    _add(p, "--waist-fraction", "waist_fraction", float, "waist height as a fraction of stature")
    _add(p, "--bust-fraction", "bust_fraction", float, "bust height as a fraction of stature")


def _train_flags(p):
    _add(p, "--epochs", "epochs", int, "autoencoder epochs")
    _add(p, "--batch-size", "batch_size", int, "silhouette pairs per step")
    _add(p, "--learning-rate", "learning_rate", float, "Adam step size")
    _add(p, "--ae-seed", "ae_seed", int, "autoencoder init/shuffle seed")
    _add(p, "--channels", "channels", int, "filters per conv layer")
    _add(p, "--single-thread", "single_thread", _bool, "pin BLAS to one thread for reproducibility")
    _add(p, "--krr-degree", "krr_degree", int, "polynomial kernel degree")
    _add(p, "--krr-lambda", "krr_lambda", float, "ridge regularization")
    _add(p, "--krr-offset", "krr_offset", float, "polynomial kernel offset")
    _add(p, "--krr-scale", "krr_scale", float, "inner-product scale, 0 for 1/feature-dim")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="s2s", description="Body shape and measurements from two silhouettes.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", type=Path, help="key=value experiment config file")
        return p

    p = command("gen-data", "Synthesize a labelled silhouette dataset.")
    p.add_argument("--out", type=Path, required=True, help="output dataset directory")
    p.add_argument("--body-model", type=Path, help="body model bundle directory (default: procedural)")
    _synthesis_flags(p)
    _anthro_flags(p)

    p = command("measure", "Print height, weight and girths of a mesh.")
    p.add_argument("--mesh", type=Path, required=True, help="triangle mesh (.obj)")
    _anthro_flags(p)

    p = command("render", "Rasterize front and side silhouettes of a mesh.")
    p.add_argument("--mesh", type=Path, required=True, help="triangle mesh (.obj)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--id", help="file name prefix (default: mesh file stem)")
    p.add_argument("--angle", type=float, action="append",
                   help="extra view angle in degrees; repeatable (front and side are always written)")
    _add(p, "--resolution", "resolution", int, "image size in pixels")
    _add(p, "--margin", "margin", float, "frame margin as a fraction of image height")

    p = command("train", "Train the autoencoder, PCA baseline and regressors.")
    p.add_argument("--data", type=Path, required=True, help="dataset directory")
    p.add_argument("--out", type=Path, help="model directory (default: DATA/model)")
    _train_flags(p)

    p = command("predict", "Estimate shape and girths for one subject.")
    p.add_argument("--model", type=Path, required=True, help="trained model directory")
    p.add_argument("--front", type=Path, required=True, help="front silhouette (.pgm)")
    p.add_argument("--side", type=Path, required=True, help="side silhouette (.pgm)")
    p.add_argument("--height", type=float, required=True, help="stature in mm")
    p.add_argument("--weight", type=float, required=True, help="body mass in kg")
    p.add_argument("--features", choices=("ae", "pca"), default="ae", help="silhouette code type (default ae)")
    p.add_argument("--out-mesh", type=Path, help="write the reconstructed mesh here")

    p = command("eval", "Evaluate a trained model on one split.")
    p.add_argument("--data", type=Path, required=True, help="dataset directory")
    p.add_argument("--model", type=Path, help="model directory (default: DATA/model)")
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="val",
                   help="subjects to evaluate (default val)")
    p.add_argument("--out", type=Path, help="report directory (default: MODEL/eval_SPLIT)")
    _add(p, "--single-thread", "single_thread", _bool, "pin BLAS to one thread")
    return parser


def _config(args) -> ExperimentConfig:
    keys = set(vars(ExperimentConfig()))
    overrides = {k: v for k, v in vars(args).items() if k in keys and v is not None}
    return load_config(args.config, **overrides)


def _snapshot(cfg: ExperimentConfig, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    write_config(cfg, directory / SNAPSHOT)


def cmd_gen_data(args, cfg):
    model = load_model_bundle(args.body_model) if args.body_model else make_procedural_model()
    manifest = synthesize_dataset(
        model, cfg.count, cfg.seed, cfg.resolution, args.out, cfg.stddev, cfg.slice_spec(), cfg.density,
        cfg.margin, cfg.train_fraction, cfg.val_fraction, cfg.split_seed,
    )
    _snapshot(cfg, args.out)
    counts = {s: len(manifest.split(s)) for s in ("train", "val", "test")}
    print(f"wrote {len(manifest.records)} subjects to {args.out} "
          f"(train {counts['train']}, val {counts['val']}, test {counts['test']})")


def cmd_measure(args, cfg):
    values = measure_values(load_mesh(args.mesh), cfg.slice_spec(), cfg.density)
    for key, value in values.items():
        print(f"{key}={value:.6f}" if key == "volume_m3" else f"{key}={value:.3f}")


def cmd_render(args, cfg):
    mesh = load_mesh(args.mesh)
    stem = args.id or args.mesh.stem
    args.out.mkdir(parents=True, exist_ok=True)
    views = {"front": 0.0, "side": 90.0}
    for a in args.angle or []:
        views[f"rot{a:g}"] = a % 360.0
    for label, angle in views.items():
        s = rasterize(mesh, ViewSpec(angle, cfg.margin), cfg.resolution, cfg.resolution)
        path = args.out / f"{stem}_{label}.pgm"
        save_silhouette(s, path)
        print(path)


def cmd_train(args, cfg):
    manifest = load_manifest(args.data)
    out = args.out or args.data / "model"
    _snapshot(cfg, out)
    bundle = train_all(manifest, cfg.train_config(), cfg.kernel(), cfg.krr_lambda, out)
    print(f"model written to {out} (final autoencoder loss {bundle.metadata['final_loss']})")
    for enc in ("ae", "pca"):
        vals = [bundle.metadata.get(f"val_mae_{enc}_{k}_mm") for k in ("bust", "waist", "hip")]
        if all(v is not None for v in vals):
            print(f"val MAE [{enc}] bust {float(vals[0]):.2f} waist {float(vals[1]):.2f} hip {float(vals[2]):.2f} mm")


def cmd_predict(args, cfg):
    bundle = load_bundle(args.model)
    pred = predict_subject(bundle, load_silhouette(args.front), load_silhouette(args.side),
                           args.height, args.weight, args.features)
    print("beta=" + " ".join(f"{b:.6f}" for b in pred.beta.beta))
    print(f"bust_mm={pred.bust:.3f}\nwaist_mm={pred.waist:.3f}\nhip_mm={pred.hip:.3f}")
    if args.out_mesh:
        save_mesh(pred.mesh, args.out_mesh)


def cmd_eval(args, cfg):
    manifest = load_manifest(args.data)
    model_dir = args.model or args.data / "model"
    out = args.out or model_dir / f"eval_{args.split}"
    _snapshot(cfg, out)
    report = evaluate(load_bundle(model_dir), manifest, args.split, out, single_thread=cfg.single_thread)
    sys.stdout.write(report.summary())


COMMANDS = {
    "gen-data": cmd_gen_data, "measure": cmd_measure, "render": cmd_render,
    "train": cmd_train, "predict": cmd_predict, "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except KeyError as exc:
        print(f"s2s {args.command}: error: {exc.args[0]}", file=sys.stderr)
        return 2
    except (S2SError, OSError, ValueError) as exc:
        print(f"s2s {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
