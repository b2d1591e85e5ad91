"""Refit the regression heads of a trained model over a kernel grid and score them on the val split.

Only the val split is read, so the test split stays untouched for reporting.

    python scripts/select_krr.py --data runs/desk/data --model runs/desk/model
"""

import argparse
import itertools
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from s2s.bodymodel import deform
from s2s.meshmetrics import per_vertex_error
from s2s.pipeline.dataset import load_manifest
from s2s.pipeline.experiment import _codes, _features, _measure_targets, load_bundle
from s2s.regress import KernelSpec, fit, predict


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--data", type=Path, required=True)
    ap.add_argument("--model", type=Path, required=True)
    ap.add_argument("--encoder", default="ae", choices=("ae", "pca"))
    ap.add_argument("--degrees", type=int, nargs="+", default=[1, 3])
    ap.add_argument("--scales", type=float, nargs="+", default=[1 / 514, 1 / 2056, 1 / 8224])
    ap.add_argument("--lambdas", type=float, nargs="+", default=[1e-4, 1e-3, 1e-2, 0.1, 1.0])
    args = ap.parse_args()

    manifest = load_manifest(args.data)
    bundle = load_bundle(args.model)
    train, val = manifest.split("train"), manifest.split("val")

    def features(recs):
        fz, sz = _codes(bundle.ae, bundle.pca, [manifest.pair(r) for r in recs], args.encoder)
        return _features(fz, sz, recs)

    xt, xv = features(train), features(val)
    bt = np.stack([manifest.beta(r).beta for r in train])
    mt, mv = _measure_targets(train), _measure_targets(val)
    truth = [deform(bundle.body, manifest.beta(r).beta) for r in val]

    def pv(betas):
        return float(np.mean([per_vertex_error(deform(bundle.body, b), t)[0] for b, t in zip(betas, truth)]))

    base_pv = pv(np.tile(bt.mean(axis=0), (len(val), 1)))
    base_mae = np.abs(mv - mt.mean(axis=0)).mean(axis=0)
    print(f"val baseline: per-vertex {base_pv:.2f} mm, MAE " + " ".join(f"{e:.1f}" for e in base_mae))
    print("degree     scale    lambda   pv_mm  pv_ratio  bust  waist   hip")
    with threadpool_limits(limits=1):
        for deg, scale, lam in itertools.product(args.degrees, args.scales, args.lambdas):
            kernel = KernelSpec(deg, scale=scale)
            err = pv(predict(fit(xt, bt, kernel, lam), xv))
            mae = np.abs(predict(fit(xt, mt, kernel, lam), xv) - mv).mean(axis=0)
            print(f"{deg:6d} {scale:9.3g} {lam:9.3g} {err:7.2f} {err / base_pv:9.3f} "
                  + " ".join(f"{e:5.1f}" for e in mae), flush=True)


if __name__ == "__main__":
    main()
