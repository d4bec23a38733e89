#!/usr/bin/env python3
"""Rebuild five ODDS benchmark sets as CSV from copies bundled in PyPI wheels.

The ODDS .mat files are derived from UCI datasets by fixed recipes. The raw
UCI tables ship inside a few PyPI wheels, so the benchmark files can be
reconstructed without network access beyond a package index:

    pip download --no-deps -d wheels/ mil rdatasets orange3
    python scripts/build_odds_datasets.py --wheels wheels/ --out data/odds/

Recipes (ODDS descriptions):

* Musk: Musk version 2; non-musk molecules j146, j147 and 252 are inliers,
  musk molecules 211 and 213 outliers. The ``mil`` copy has anonymised bag ids,
  so the molecules are identified by their conformation counts (1044, 1010,
  911 inliers; 78 and 19 outliers), which reproduces N=3062 with 97 outliers.
* BreastW: Wisconsin breast cancer (original), rows with a missing value
  dropped, malignant = outlier (683 x 9, 239 outliers). Taken from MASS::biopsy.
* Ionosphere: 351 x 34 with the constant second attribute dropped, "bad"
  returns = outlier (351 x 33, 126 outliers).
* Wine: classes 2 and 3 are inliers, class 1 downsampled to 10 outliers
  (129 x 13). The ODDS draw is not published; a seeded draw is used.
* WBC: Wisconsin diagnostic breast cancer, benign inliers plus 21 malignant
  rows (378 x 30). Seeded draw as for Wine.
"""

import argparse
import glob
import io
import lzma
import os
import pickle
import sys
import zipfile

import numpy as np
import pandas as pd
from sklearn.datasets import load_breast_cancer, load_wine

from oedpm.data_io import Dataset, write_csv

DOWNSAMPLE_SEED = 20240101

MUSK_INLIER_BAG_SIZES = (1044, 1010, 911)
MUSK_OUTLIER_BAG_SIZES = (78, 19)


def _wheel(wheels, prefix):
    hits = sorted(glob.glob(os.path.join(wheels, f"{prefix}-*.whl")))
    if not hits:
        sys.exit(f"no {prefix}-*.whl in {wheels}; see the module docstring")
    return zipfile.ZipFile(hits[-1])


def musk(wheels):
    z = _wheel(wheels, "mil")
    df = pd.read_csv(io.BytesIO(z.read("mil/data/datasets/csv/musk2.csv")), header=None)
    label, bag = df[0], df[1]
    sizes = bag.value_counts()

    def bags_of(size, musk_label):
        ids = [b for b in sizes.index[sizes == size] if label[bag == b].iloc[0] == musk_label]
        if len(ids) != 1:
            sys.exit(f"cannot identify a unique musk bag with {size} conformations")
        return ids[0]

    inl = [bags_of(s, 0) for s in MUSK_INLIER_BAG_SIZES]
    out = [bags_of(s, 1) for s in MUSK_OUTLIER_BAG_SIZES]
    keep = bag.isin(inl + out)
    X = df.loc[keep, 2:].to_numpy(float)
    y = bag[keep].isin(out).to_numpy(np.int8)
    return Dataset(X, y, tuple(f"f{j}" for j in range(1, 167)), "musk")


def breastw(wheels):
    z = _wheel(wheels, "rdatasets")
    df = pickle.loads(lzma.decompress(z.read("rdatasets/_data/MASS/biopsy.pkl.compress")))
    df = df.dropna()
    cols = [f"V{j}" for j in range(1, 10)]
    y = (df["class"] == "malignant").to_numpy(np.int8)
    return Dataset(df[cols].to_numpy(float), y, tuple(cols), "breastw")


def ionosphere(wheels):
    z = _wheel(wheels, "orange3")
    df = pd.read_csv(io.BytesIO(z.read("Orange/tests/datasets/ionosphere.tab")), sep="\t",
                     skiprows=[1, 2])
    cols = [c for c in df.columns if c not in ("a2", "y")]
    y = (df["y"] == "b").to_numpy(np.int8)
    return Dataset(df[cols].to_numpy(float), y, tuple(cols), "ionosphere")


def _downsampled(X, target, outlier_classes, n_outliers, rng, names, source):
    inl = np.flatnonzero(~np.isin(target, outlier_classes))
    out = np.sort(rng.choice(np.flatnonzero(np.isin(target, outlier_classes)), n_outliers,
                             replace=False))
    rows = np.r_[inl, out]
    y = np.r_[np.zeros(inl.size, np.int8), np.ones(out.size, np.int8)]
    return Dataset(X[rows], y, names, source)


def wine(rng):
    w = load_wine()
    return _downsampled(w.data, w.target, [0], 10, rng, tuple(w.feature_names), "wine")


def wbc(rng):
    b = load_breast_cancer()
    names = tuple(n.replace(" ", "_") for n in b.feature_names)
    # sklearn codes malignant as 0
    return _downsampled(b.data, b.target, [0], 21, rng, names, "wbc")


EXPECTED = {
    "musk": (3062, 166, 97),
    "breastw": (683, 9, 239),
    "ionosphere": (351, 33, 126),
    "wine": (129, 13, 10),
    "wbc": (378, 30, 21),
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--wheels", required=True, help="directory holding the downloaded wheels")
    ap.add_argument("--out", default="data/odds", help="output directory")
    args = ap.parse_args(argv)
    os.makedirs(args.out, exist_ok=True)

    rng = np.random.default_rng(DOWNSAMPLE_SEED)
    built = {
        "musk": musk(args.wheels),
        "breastw": breastw(args.wheels),
        "ionosphere": ionosphere(args.wheels),
        "wine": wine(rng),
        "wbc": wbc(rng),
    }
    rows = ["name,path,label_col"]
    for name, ds in built.items():
        shape = (ds.n_samples, ds.n_features, int(ds.labels.sum()))
        if shape != EXPECTED[name]:
            sys.exit(f"{name}: got {shape}, expected {EXPECTED[name]}")
        write_csv(ds, os.path.join(args.out, f"{name}.csv"))
        rows.append(f"{name},{name}.csv,outlier")
        print(f"{name:<11} N={shape[0]:<5} p={shape[1]:<4} outliers={shape[2]}")
    with open(os.path.join(args.out, "manifest.csv"), "w") as fh:
        fh.write("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
