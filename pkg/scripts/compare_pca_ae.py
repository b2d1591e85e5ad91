"""Silhouette reconstruction accuracy of the autoencoder against PCA with the same code size.

PCA is fitted on the same train-split images as the autoencoder. Accuracy is
the share of pixels that match after thresholding at 0.5, averaged per view.

    python scripts/compare_pca_ae.py --data runs/desk/data --model runs/desk/model
"""

import argparse
from pathlib import Path

import numpy as np

from s2s.embedding.autoencoder import reconstruct
from s2s.embedding.pca import pca_decode, pca_encode, pca_fit
from s2s.pipeline.dataset import load_manifest
from s2s.pipeline.experiment import load_bundle
from s2s.silhouette import pixel_accuracy


def accuracy(recon, images):
    return float(np.mean([pixel_accuracy(r, s) for r, s in zip(recon, images)]))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--data", type=Path, required=True)
    ap.add_argument("--model", type=Path, required=True)
    ap.add_argument("--components", type=int, nargs="+", default=[16, 64, 256],
                    help="PCA code sizes to compare (the autoencoder code is 256)")
    args = ap.parse_args()

    manifest = load_manifest(args.data)
    bundle = load_bundle(args.model)
    train_pairs = [manifest.pair(r) for r in manifest.split("train")]
    fitted = {k: pca_fit([p.front for p in train_pairs] + [p.side for p in train_pairs], k)
              for k in args.components}

    print(f"{'split':>6} {'view':>6} {'ae':>8} " + " ".join(f"{'pca' + str(k):>8}" for k in args.components))
    for split in ("train", "test"):
        pairs = [manifest.pair(r) for r in manifest.split(split)]
        for view in ("front", "side"):
            images = [getattr(p, view) for p in pairs]
            row = [accuracy(reconstruct(bundle.ae, images), images)]
            row += [accuracy(pca_decode(m, pca_encode(m, images)), images) for m in fitted.values()]
            print(f"{split:>6} {view:>6} " + " ".join(f"{100 * a:7.2f}%" for a in row))


if __name__ == "__main__":
    main()
