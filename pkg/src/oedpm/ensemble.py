"""Outlier ensemble of Dirichlet-process mixtures.

Each ensemble component projects the training data onto a random subspace,
fits a truncated DP Gaussian mixture to a random subsample, prunes the
low-weight mixture components and records a log-density threshold computed on
its own subsample. A test row's outlier score is the fraction of components
under whose threshold it falls.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from . import dpgm
from .core_math import gaussian_log_density, log_sum_exp, quantile
from .errors import ComponentFitError, ConfigError, OEDPMError, UsageError
from .projection import ProjectionMatrix, generate_projection, project, sample_subspace_dim

logger = logging.getLogger(__name__)

QUANTILE = "quantile"
IQR = "iqr"
THRESHOLD_MODES = (QUANTILE, IQR)

MIN_SUBSAMPLE = 50
MAX_SUBSAMPLE = 1000


@dataclass(frozen=True)
class EnsembleConfig:
    """Detector settings.

    ``contamination`` is the quantile level used for thresholds in
    ``"quantile"`` mode and is ignored (and may be ``None``) in ``"iqr"`` mode.
    """

    ensemble_size: int = 100
    contamination: float | None = 0.1
    threshold_mode: str = QUANTILE
    covariance_mode: str = dpgm.DIAGONAL
    truncation: int = 30
    master_seed: int = 0
    max_iter: int = 200
    tol: float = 1e-4
    init: str = "kmeans++"

    def __post_init__(self):
        if int(self.ensemble_size) < 1:
            raise ConfigError(f"ensemble_size must be >= 1, got {self.ensemble_size}")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ConfigError(f"threshold_mode must be one of {THRESHOLD_MODES}")
        if self.threshold_mode == QUANTILE and self.contamination is None:
            raise ConfigError("quantile thresholds need a contamination level")
        if self.contamination is not None and not 0.0 < self.contamination < 1.0:
            raise ConfigError(f"contamination must lie in (0, 1), got {self.contamination}")
        if self.covariance_mode not in dpgm.COVARIANCE_MODES:
            raise ConfigError(f"covariance_mode must be one of {dpgm.COVARIANCE_MODES}")
        if int(self.truncation) < 1:
            raise ConfigError(f"truncation must be >= 1, got {self.truncation}")
        if int(self.master_seed) < 0:
            raise ConfigError(f"master_seed must be non-negative, got {self.master_seed}")
        if self.init not in dpgm.INIT_METHODS:
            raise ConfigError(f"init must be one of {dpgm.INIT_METHODS}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class EnsembleComponent:
    """One fitted ensemble member.

    ``retained`` indexes the surviving mixture components in the untruncated
    fit; ``weights``, ``means`` and ``covariances`` are restricted to them,
    with ``weights`` renormalised to sum to one. ``train_log_density`` holds the
    log-densities of the component's own subsample, from which ``threshold`` was
    computed.
    """

    index: int
    component_seed: int
    projection: ProjectionMatrix
    subsample_indices: np.ndarray
    retained: np.ndarray
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    raw_weights: np.ndarray
    active_count: int
    train_log_density: np.ndarray
    threshold: float
    converged: bool = True

    @property
    def dim(self):
        return self.projection.target_dim


@dataclass(eq=False)
class DetectionReport:
    scores: np.ndarray
    memberships: np.ndarray
    votes: np.ndarray
    ensemble_size: int
    thresholds: np.ndarray
    config: dict = field(default_factory=dict)
    metrics: dict | None = None


def component_seed(master_seed, m):
    """64-bit seed of component ``m``, a keyed hash of ``(master_seed, m)``.

    Independent of how many components exist or the order they are built in.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(m),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_subsample_size(N, rng):
    if N < 1:
        raise UsageError(f"N must be >= 1, got {N}")
    return int(rng.integers(min(N, MIN_SUBSAMPLE), min(N, MAX_SUBSAMPLE), endpoint=True))


def prune_components(estimate):
    """Keep components with weight >= 1/K_hat, plus the heaviest one.

    Returns
    -------
    retained : ndarray of int
        Sorted indices of the kept components.
    weights : ndarray
        Their weights renormalised to sum to one.
    """
    w = np.asarray(estimate.weights, dtype=float)
    if estimate.active_count < 1:
        raise UsageError("active_count must be >= 1")
    keep = w >= 1.0 / estimate.active_count
    keep[int(np.argmax(w))] = True
    retained = np.flatnonzero(keep)
    kept = w[retained]
    return retained, kept / kept.sum()


def threshold_from(log_density, threshold_mode, contamination=None):
    """Per-component cut-off on log-density values."""
    if threshold_mode == QUANTILE:
        if contamination is None or not 0.0 < contamination < 1.0:
            raise ConfigError(f"contamination must lie in (0, 1), got {contamination}")
        return quantile(log_density, contamination)
    if threshold_mode == IQR:
        q1, q3 = quantile(log_density, [0.25, 0.75])
        return float(q1 - 1.5 * (q3 - q1))
    raise ConfigError(f"threshold_mode must be one of {THRESHOLD_MODES}")


def _mixture_log_density(X, weights, means, covariances):
    terms = np.column_stack([
        math.log(w) + gaussian_log_density(X, mu, cov)
        for w, mu, cov in zip(weights, means, covariances)
    ])
    return log_sum_exp(terms, axis=1)


def component_log_density(x, component):
    """Log-density of the pruned mixture at projected point(s) ``x``.

    ``x`` is a single ``d_m``-vector (returns a float) or an ``(n, d_m)`` array.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != component.dim:
        raise UsageError(f"point has dimension {X.shape[1]}, component expects {component.dim}")
    out = _mixture_log_density(X, component.weights, component.means, component.covariances)
    return float(out[0]) if single else out


def build_component(train, config, m):
    """Fit ensemble component ``m``; deterministic in ``(config.master_seed, m)``."""
    train = np.asarray(train, dtype=float)
    if train.ndim != 2 or train.shape[0] < 1 or train.shape[1] < 1:
        raise UsageError(f"training data must be a non-empty 2-D array, got {train.shape}")
    N, p = train.shape
    seed = component_seed(config.master_seed, m)
    rng = np.random.default_rng(seed)
    try:
        d_m = sample_subspace_dim(p, rng)
        R = generate_projection(p, d_m, rng, seed=seed)
        n_m = sample_subsample_size(N, rng)
        rows = np.sort(rng.choice(N, size=n_m, replace=False))
        X = project(train[rows], R)
        if config.covariance_mode == dpgm.FULL and d_m > n_m:
            raise ConfigError(
                f"component {m}: full covariance needs d <= n (d={d_m}, n={n_m}); "
                "use diagonal covariance instead")
        hyper = dpgm.DpgmHyperparams.empirical(
            X, covariance_mode=config.covariance_mode, truncation=config.truncation)
        state, est = dpgm.fit(X, hyper, rng, max_iter=config.max_iter, tol=config.tol,
                              init=config.init)
        retained, weights = prune_components(est)
        means = est.means[retained]
        covs = est.covariances[retained]
        train_ld = _mixture_log_density(X, weights, means, covs)
        threshold = threshold_from(train_ld, config.threshold_mode, config.contamination)
    except ConfigError:
        raise
    except OEDPMError as exc:
        raise ComponentFitError(m, exc) from exc
    except (ArithmeticError, np.linalg.LinAlgError, FloatingPointError) as exc:
        raise ComponentFitError(m, exc) from exc
    if not state.converged:
        logger.debug("component %d hit max_iter=%d", m, config.max_iter)
    return EnsembleComponent(
        index=m,
        component_seed=seed,
        projection=R,
        subsample_indices=rows,
        retained=retained,
        weights=weights,
        means=means,
        covariances=covs,
        raw_weights=est.weights,
        active_count=est.active_count,
        train_log_density=train_ld,
        threshold=float(threshold),
        converged=state.converged,
    )


def fit_detector(train, config, n_jobs=None):
    """Build ``config.ensemble_size`` components, in index order.

    ``n_jobs`` is passed to :class:`joblib.Parallel`; ``None`` or 1 runs
    sequentially. Results do not depend on the worker count.
    """
    M = int(config.ensemble_size)
    train = np.asarray(train, dtype=float)
    if n_jobs in (None, 1):
        return [build_component(train, config, m) for m in range(M)]
    return Parallel(n_jobs=n_jobs)(delayed(build_component)(train, config, m) for m in range(M))


def with_thresholds(components, threshold_mode, contamination=None):
    """Copy of ``components`` with thresholds recomputed; the fits are reused."""
    return [
        replace(c, threshold=float(threshold_from(c.train_log_density, threshold_mode,
                                                  contamination)))
        for c in components
    ]


def vote(log_densities, thresholds):
    """Outlier votes from an ``(M, n)`` array of log-densities.

    Returns integer vote counts, scores ``votes / M`` and memberships
    ``scores > 1/2`` (evaluated exactly as ``2 * votes > M``).
    """
    ld = np.asarray(log_densities, dtype=float)
    thr = np.asarray(thresholds, dtype=float)[:, None]
    M = ld.shape[0]
    votes = np.sum(ld < thr, axis=0).astype(np.int64)
    return votes, votes / M, (2 * votes > M).astype(np.int8)


def log_density_matrix(test, components):
    test = np.asarray(test, dtype=float)
    if test.ndim != 2:
        raise UsageError(f"test data must be 2-D, got shape {test.shape}")
    return np.vstack([component_log_density(project(test, c.projection), c)
                      for c in components])


def score(test, components, config=None):
    """Score test rows against a fitted detector.

    Parameters
    ----------
    test : array_like, shape (N_test, p)
        Standardised with the training statistics.
    components : list of EnsembleComponent
    config : EnsembleConfig, optional
        Echoed into the report.
    """
    if not components:
        raise UsageError("detector has no components")
    test = np.asarray(test, dtype=float)
    p = components[0].projection.source_dim
    if test.ndim != 2 or test.shape[1] != p:
        raise UsageError(f"test data must have {p} columns, got shape {test.shape}")
    ld = log_density_matrix(test, components)
    thresholds = np.array([c.threshold for c in components])
    votes, scores, members = vote(ld, thresholds)
    return DetectionReport(
        scores=scores,
        memberships=members,
        votes=votes,
        ensemble_size=len(components),
        thresholds=thresholds,
        config={} if config is None else config.to_dict(),
    )


class OEDPM:
    """Estimator-style wrapper around :func:`fit_detector` and :func:`score`.

    >>> det = OEDPM(EnsembleConfig(ensemble_size=10)).fit(X)   # doctest: +SKIP
    >>> report = det.score(X)                                   # doctest: +SKIP
    """

    def __init__(self, config=None, n_jobs=None):
        self.config = config or EnsembleConfig()
        self.n_jobs = n_jobs
        self.components_ = None

    def fit(self, train):
        self.components_ = fit_detector(train, self.config, n_jobs=self.n_jobs)
        return self

    def score(self, test):
        if self.components_ is None:
            raise UsageError("detector is not fitted")
        return score(test, self.components_, self.config)

    def fit_score(self, data):
        return self.fit(data).score(data)
