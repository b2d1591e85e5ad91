"""Synthesize, train and evaluate the 300-subject desk experiment.

    python scripts/run_desk_experiment.py --out runs/desk
    python scripts/run_desk_experiment.py --out runs/desk --set epochs=10 --split val
"""

import argparse
import logging
import time
from pathlib import Path

from s2s.pipeline.config import load_config, parse_config_text
from s2s.pipeline.desk import run_experiment

DEFAULT_CFG = Path(__file__).resolve().parents[1] / "configs" / "desk.cfg"


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", type=Path, default=DEFAULT_CFG)
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load_config(args.config, **parse_config_text("\n".join(args.set)))
    start = time.perf_counter()
    report = run_experiment(cfg, args.out, args.split)
    print(report.summary())
    ratios = [report.mae["ae"][k] / report.baseline_mae[k] for k in report.baseline_mae]
    print("AE / mean-predictor MAE ratio: " + " ".join(f"{r:.3f}" for r in ratios))
    print(f"AE / mean-beta per-vertex ratio: {report.per_vertex['ae'] / report.baseline_per_vertex:.3f}")
    print(f"wall time {time.perf_counter() - start:.0f} s; artifacts in {args.out}")


if __name__ == "__main__":
    main()
