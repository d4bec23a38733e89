"""Command-line entry point: ``oedpm --mode {detect,sweep,bench} ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error,
1 anything else. Progress goes to standard error; metrics and tables go to
standard output or the ``--output`` file.
"""

import argparse
import csv
import io
import logging
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .data_io import apply_standardizer, evaluate, fit_standardizer, load_csv, write_report
from .dpgm import DIAGONAL, FULL
from .ensemble import IQR, QUANTILE, EnsembleConfig, fit_detector, score, with_thresholds
from .errors import ConfigError, DataError, OEDPMError

logger = logging.getLogger("oedpm")

MODES = ("detect", "sweep", "bench")
DEFAULT_PHIS = (0.02, 0.05, 0.1, 0.2, 0.3, 0.5)
THREADS_ENV = "OEDPM_THREADS"
_COVARIANCE = {"diag": DIAGONAL, "full": FULL}

BENCH_COLUMNS = ("dataset", "N", "p", "outlier_pct", "f1", "status", "wall_time_s")


@dataclass(frozen=True)
class RunConfig:
    mode: str
    ensemble: EnsembleConfig
    input: str | None = None
    test: str | None = None
    label_col: str | None = None
    output: str | None = None
    format: str = "csv"
    phis: tuple = DEFAULT_PHIS
    manifest: str | None = None
    n_jobs: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.mode in ("detect", "sweep") and not self.input:
            raise ConfigError(f"--mode {self.mode} needs --input")
        if self.mode == "detect" and not self.output:
            raise ConfigError("--mode detect needs --output")
        if self.mode == "sweep" and self.label_col is None:
            raise ConfigError("--mode sweep needs labels (--label-col)")
        if self.mode == "bench" and not self.manifest:
            raise ConfigError("--mode bench needs --manifest")
        if not self.phis:
            raise ConfigError("--phis is empty")
        for phi in self.phis:
            if not 0.0 < phi < 1.0:
                raise ConfigError(f"every phi must lie in (0, 1), got {phi}")


def _parse_phis(text):
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="oedpm",
        description="Outlier detection with an ensemble of Dirichlet-process Gaussian mixtures.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--mode", choices=MODES, default="detect")
    ap.add_argument("--input", help="training CSV with a header row")
    ap.add_argument("--test", help="CSV to score (default: the training set)")
    ap.add_argument("--label-col", help="name of the 0/1 outlier column, present in every file")
    ap.add_argument("--ensemble-size", type=int, default=100, metavar="M")
    thr = ap.add_mutually_exclusive_group()
    thr.add_argument("--contamination", type=float, default=None, metavar="PHI",
                     help="quantile level of the per-component thresholds (default 0.1)")
    thr.add_argument("--iqr", action="store_true",
                     help="use Q1 - 1.5*IQR thresholds instead of a contamination level")
    ap.add_argument("--covariance", choices=sorted(_COVARIANCE), default="diag")
    ap.add_argument("--truncation", type=int, default=30, metavar="K")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--output", help="report (detect) or table (sweep/bench) path")
    ap.add_argument("--format", choices=("csv", "json"), default="csv",
                    help="report format in detect mode")
    ap.add_argument("--phis", type=_parse_phis, default=DEFAULT_PHIS,
                    help="comma-separated contamination levels for sweep mode")
    ap.add_argument("--manifest", help='bench mode: CSV with header "name,path,label_col"')
    ap.add_argument("-q", "--quiet", action="store_true", help="no progress messages")
    return ap


def threads_from_env(environ=None):
    """Worker count from ``OEDPM_THREADS``: unset means 1, 0 means all cores."""
    raw = (os.environ if environ is None else environ).get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 0:
        raise ConfigError(f"{THREADS_ENV} must be >= 0, got {n}")
    return -1 if n == 0 else n


def config_from_args(args, environ=None):
    if args.iqr:
        mode, phi = IQR, None
    else:
        mode, phi = QUANTILE, 0.1 if args.contamination is None else args.contamination
    ens = EnsembleConfig(
        ensemble_size=args.ensemble_size,
        contamination=phi,
        threshold_mode=mode,
        covariance_mode=_COVARIANCE[args.covariance],
        truncation=args.truncation,
        master_seed=args.seed,
    )
    return RunConfig(
        mode=args.mode,
        ensemble=ens,
        input=args.input,
        test=args.test,
        label_col=args.label_col,
        output=args.output,
        format=args.format,
        phis=args.phis,
        manifest=args.manifest,
        n_jobs=threads_from_env(environ),
    )


def _fit(train, cfg):
    """Standardise on ``train``, fit the ensemble; returns (components, standardizer)."""
    std = fit_standardizer(train.features)
    X = apply_standardizer(train.features, std)
    M = cfg.ensemble.ensemble_size
    logger.info("fitting %d components on %d x %d", M, *X.shape)
    comps = fit_detector(X, cfg.ensemble, n_jobs=cfg.n_jobs)
    return comps, std


def _load_pair(cfg):
    train = load_csv(cfg.input, label_column=cfg.label_col)
    test = train if cfg.test is None else load_csv(cfg.test, label_column=cfg.label_col)
    if test.n_features != train.n_features:
        raise DataError(
            f"{cfg.test} has {test.n_features} feature columns, {cfg.input} has "
            f"{train.n_features}")
    return train, test


def format_metrics(m):
    return " ".join(f"{k}={m[k]:.6f}" if isinstance(m[k], float) else f"{k}={m[k]}"
                    for k in ("f1", "precision", "recall", "tp", "fp", "fn", "tn"))


def run_detect(cfg, stdout=None):
    """Fit, score and write the report; returns the DetectionReport."""
    stdout = stdout or sys.stdout
    train, test = _load_pair(cfg)
    comps, std = _fit(train, cfg)
    report = score(apply_standardizer(test.features, std), comps, cfg.ensemble)
    if test.labels is not None:
        report.metrics = evaluate(report, test.labels)
        print(format_metrics(report.metrics), file=stdout)
    write_report(report, cfg.output, cfg.format)
    logger.info("wrote %s", cfg.output)
    return report


def sweep_table(comps, X, labels, phis):
    """Rows ``(phi, f1)`` for each quantile level plus a final ``("iqr", f1)`` row."""
    rows = []
    for phi in phis:
        rep = score(X, with_thresholds(comps, QUANTILE, phi))
        rows.append((phi, evaluate(rep, labels)["f1"]))
    rep = score(X, with_thresholds(comps, IQR))
    rows.append(("iqr", evaluate(rep, labels)["f1"]))
    return rows


def run_sweep(cfg, stdout=None):
    """Fit once, then re-threshold per contamination level."""
    train, test = _load_pair(cfg)
    comps, std = _fit(train, cfg)
    X = apply_standardizer(test.features, std)
    rows = sweep_table(comps, X, test.labels, cfg.phis)
    buf = io.StringIO()
    buf.write("phi,f1\n")
    for phi, f1 in rows:
        buf.write(f"{phi if phi == 'iqr' else repr(float(phi))},{f1:.6f}\n")
    _emit(buf.getvalue(), cfg.output, stdout)
    return rows


def read_manifest(path):
    if not os.path.isfile(path):
        raise DataError(f"no such manifest: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != [
                "name", "path", "label_col"]:
            raise DataError(f'{path}: header must be "name,path,label_col"')
        entries = [(r["name"].strip(), r["path"].strip(), (r["label_col"] or "").strip())
                   for r in reader if any((v or "").strip() for v in r.values())]
    if not entries:
        raise ConfigError(f"manifest {path} lists no datasets")
    base = os.path.dirname(os.path.abspath(path))
    return [(n, p if os.path.isabs(p) else os.path.join(base, p), lc or None)
            for n, p, lc in entries]


def bench_one(name, path, label_col, cfg):
    """One benchmark row as a dict; errors are captured in ``status``."""
    t0 = time.perf_counter()
    row = {"dataset": name, "N": "", "p": "", "outlier_pct": "", "f1": None, "status": "ok"}
    try:
        if label_col is None:
            raise ConfigError("manifest entry has no label column")
        ds = load_csv(path, label_column=label_col)
        row.update(N=ds.n_samples, p=ds.n_features, outlier_pct=100 * ds.outlier_fraction)
        comps, std = _fit(ds, cfg)
        rep = score(apply_standardizer(ds.features, std), comps, cfg.ensemble)
        row["f1"] = evaluate(rep, ds.labels)["f1"]
    except OEDPMError as exc:
        logger.error("%s: %s", name, exc)
        row["status"] = f"error: {exc}"
    row["wall_time_s"] = time.perf_counter() - t0
    return row


def bench_table(rows):
    """CSV text of the benchmark rows followed by the average-F1 row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_COLUMNS)
    for r in rows:
        pct = "" if r["outlier_pct"] == "" else f"{r['outlier_pct']:.2f}"
        f1 = "" if r["f1"] is None else f"{r['f1']:.6f}"
        w.writerow([r["dataset"], r["N"], r["p"], pct, f1, r["status"],
                    f"{r['wall_time_s']:.2f}"])
    ok = [r["f1"] for r in rows if r["f1"] is not None]
    n_failed = len(rows) - len(ok)
    avg = f"{float(np.mean(ok)):.6f}" if ok else ""
    status = "ok" if not n_failed else f"{n_failed} failed"
    total = sum(r["wall_time_s"] for r in rows)
    w.writerow(["Average", "", "", "", avg, status, f"{total:.2f}"])
    return buf.getvalue()


def run_bench(cfg, stdout=None):
    """Detect on every manifest dataset; returns the rows (without the average)."""
    entries = read_manifest(cfg.manifest)
    rows = []
    for name, path, label_col in entries:
        logger.info("bench: %s", name)
        rows.append(bench_one(name, path, label_col, cfg))
    _emit(bench_table(rows), cfg.output, stdout)
    return rows


def _emit(text, path, stdout):
    if path:
        try:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise DataError(f"cannot write {path}: {exc}") from exc
        logger.info("wrote %s", path)
    else:
        (stdout or sys.stdout).write(text)


def main(argv=None, stdout=None, environ=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="oedpm: %(message)s", stream=sys.stderr)
    try:
        cfg = config_from_args(args, environ)
        if cfg.mode == "detect":
            run_detect(cfg, stdout)
        elif cfg.mode == "sweep":
            run_sweep(cfg, stdout)
        else:
            rows = run_bench(cfg, stdout)
            if any(r["status"] != "ok" for r in rows):
                return 1
    except OEDPMError as exc:
        print(f"oedpm: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        print(f"oedpm: unexpected error: {exc!r}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
