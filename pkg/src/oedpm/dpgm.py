"""Truncated Dirichlet-process Gaussian mixture fitted by mean-field CAVI.

The variational family is

    q(z_i)        = Discrete(resp[i])
    q(v_k)        = Beta(gamma1[k], gamma2[k])
    q(mu_k, L_k)  = NIW(xi_tilde[k], b_tilde[k], nu_tilde[k], psi_tilde[k])

with ``L_k`` the precision, ``L_k ~ Wishart(nu_tilde, psi_tilde^{-1})``.  In
diagonal mode ``psi_tilde[k]`` is restricted to be diagonal and stored as a
vector; that restriction is exactly what zeroing the off-diagonal scatter
entries gives, so both modes share one objective and every update below is an
exact coordinate-ascent step on it.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import betaln, gammaln

from .core_math import LOG_2PI, cholesky, digamma, log_sum_exp
from .errors import ConfigError, NotPositiveDefiniteError, NumericError, UsageError

DIAGONAL = "diagonal"
FULL = "full"
COVARIANCE_MODES = (DIAGONAL, FULL)

RIDGE_SCALE = 1e-6
ZERO_VARIANCE_FLOOR = 1e-6


def _check_mode(mode):
    if mode not in COVARIANCE_MODES:
        raise ConfigError(f"covariance_mode must be one of {COVARIANCE_MODES}, got {mode!r}")
    return mode


@dataclass(frozen=True, eq=False)
class DpgmHyperparams:
    """Prior constants of one mixture fit.

    ``psi`` is a ``(d, d)`` matrix in full mode and a length-``d`` vector of
    diagonal entries in diagonal mode. Use :meth:`empirical` for the usual
    empirical-Bayes choice (sample mean and population covariance).
    """

    xi: np.ndarray
    psi: np.ndarray
    alpha: float = 1.0
    b: float = 1.0
    nu: float | None = None
    truncation: int = 30
    covariance_mode: str = DIAGONAL

    def __post_init__(self):
        _check_mode(self.covariance_mode)
        xi = np.asarray(self.xi, dtype=float).ravel()
        psi = np.asarray(self.psi, dtype=float)
        d = xi.shape[0]
        if self.covariance_mode == DIAGONAL:
            if psi.ndim == 2:
                psi = np.diag(psi).copy()
            if psi.shape != (d,) or not np.all(psi > 0):
                raise ConfigError("diagonal-mode psi must be a positive vector of length d")
        else:
            if psi.shape != (d, d):
                raise ConfigError(f"full-mode psi must have shape {(d, d)}, got {psi.shape}")
            if not np.allclose(psi, psi.T):
                raise ConfigError("full-mode psi must be symmetric")
            # the ridged scale is what the updates use; a PSD sample covariance is fine
            ridge = RIDGE_SCALE * float(np.mean(np.diag(psi)))
            cholesky(psi + ridge * np.eye(d))
        nu = float(d) if self.nu is None else float(self.nu)
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if not self.b > 0:
            raise ConfigError(f"b must be > 0, got {self.b}")
        if nu < d:
            raise ConfigError(f"nu must be >= d = {d}, got {nu}")
        if int(self.truncation) < 1:
            raise ConfigError(f"truncation must be >= 1, got {self.truncation}")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "truncation", int(self.truncation))

    @property
    def dim(self):
        return self.xi.shape[0]

    @property
    def ridge(self):
        diag = self.psi if self.psi.ndim == 1 else np.diag(self.psi)
        return RIDGE_SCALE * float(np.mean(diag))

    @property
    def psi_ridged(self):
        """Prior scale plus the ridge; every posterior scale inherits the ridge from here."""
        if self.psi.ndim == 1:
            return self.psi + self.ridge
        return self.psi + self.ridge * np.eye(self.dim)

    @classmethod
    def empirical(cls, data, covariance_mode=DIAGONAL, truncation=30, alpha=1.0, b=1.0,
                  nu=None):
        X = np.asarray(data, dtype=float)
        n, d = X.shape
        xi = X.mean(axis=0)
        diff = X - xi
        if _check_mode(covariance_mode) == DIAGONAL:
            psi = np.mean(diff * diff, axis=0)
            psi[psi <= 0] = ZERO_VARIANCE_FLOOR
        else:
            psi = diff.T @ diff / n
            idx = np.diag_indices(d)
            diag = psi[idx]
            psi[idx] = np.where(diag <= 0, ZERO_VARIANCE_FLOOR, diag)
        return cls(xi=xi, psi=psi, alpha=alpha, b=b, nu=nu, truncation=truncation,
                   covariance_mode=covariance_mode)


@dataclass(eq=False)
class VariationalState:
    resp: np.ndarray
    gamma1: np.ndarray
    gamma2: np.ndarray
    xi_tilde: np.ndarray
    b_tilde: np.ndarray
    nu_tilde: np.ndarray
    psi_tilde: np.ndarray
    n_iter: int = 0
    elbo_history: list = field(default_factory=list)
    converged: bool = False

    @property
    def n_components(self):
        return self.resp.shape[1]

    @property
    def nk(self):
        return self.resp.sum(axis=0)


@dataclass(frozen=True, eq=False)
class MixtureEstimate:
    """Point estimates of a fitted mixture.

    ``assignments`` holds zero-based component indices. ``covariances`` is
    ``(K, d)`` (variances) in diagonal mode and ``(K, d, d)`` in full mode.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    assignments: np.ndarray
    active_count: int
    covariance_mode: str = DIAGONAL


def _as_data(data, hyper):
    X = np.asarray(data, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise UsageError(f"data must be a non-empty 2-D array, got shape {X.shape}")
    if X.shape[1] != hyper.dim:
        raise UsageError(f"data has {X.shape[1]} columns, hyperparameters expect {hyper.dim}")
    return X


INIT_METHODS = ("kmeans++", "random")


def _seed_labels(X, K, rng):
    """k-means++ seeding: hard-assign each row to the nearest of K sampled centres."""
    n = X.shape[0]
    centres = [int(rng.integers(n))]
    d2 = np.sum((X - X[centres[0]]) ** 2, axis=1)
    for _ in range(1, min(K, n)):
        total = d2.sum()
        c = int(rng.choice(n, p=d2 / total)) if total > 0 else int(rng.integers(n))
        centres.append(c)
        d2 = np.minimum(d2, np.sum((X - X[c]) ** 2, axis=1))
    C = X[centres]
    dist = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.argmin(dist, axis=1)


def init_state(data, hyper, rng, init="kmeans++", jitter=0.1):
    """Seeded hard assignments plus Dirichlet(1) jitter, then one parameter sweep.

    ``init="kmeans++"`` assigns each row to the nearest of K k-means++ seeds;
    ``init="random"`` assigns rows to uniformly random components. Each row is
    then ``onehot + jitter * Dirichlet(1)``, renormalised.
    """
    X = _as_data(data, hyper)
    n, d = X.shape
    K = hyper.truncation
    if hyper.covariance_mode == FULL and d > n:
        raise ConfigError(
            f"full covariance needs d <= n (d={d}, n={n}); use diagonal covariance instead")
    if init == "kmeans++":
        labels = _seed_labels(X, K, rng)
    elif init == "random":
        labels = rng.integers(0, K, size=n)
    else:
        raise ConfigError(f"init must be one of {INIT_METHODS}, got {init!r}")
    resp = jitter * rng.dirichlet(np.ones(K), size=n)
    resp[np.arange(n), labels] += 1.0
    resp /= resp.sum(axis=1, keepdims=True)

    psi_shape = (K, d) if hyper.covariance_mode == DIAGONAL else (K, d, d)
    state = VariationalState(
        resp=resp,
        gamma1=np.ones(K),
        gamma2=np.full(K, hyper.alpha),
        xi_tilde=np.tile(hyper.xi, (K, 1)),
        b_tilde=np.full(K, hyper.b),
        nu_tilde=np.full(K, hyper.nu),
        psi_tilde=np.broadcast_to(hyper.psi_ridged, psi_shape).copy(),
    )
    state = update_stick_breaking(state, hyper)
    return update_niw(state, X, hyper)


def _expected_log_stick(gamma1, gamma2):
    """E[log pi_k] under q(v): E log v_k + sum_{j<k} E log(1 - v_j)."""
    dsum = digamma(gamma1 + gamma2)
    e_log_v = digamma(gamma1) - dsum
    e_log_1mv = digamma(gamma2) - dsum
    return e_log_v + np.concatenate(([0.0], np.cumsum(e_log_1mv)[:-1])), e_log_1mv


def _log_det_psi(state, mode):
    if mode == DIAGONAL:
        return np.sum(np.log(state.psi_tilde), axis=1)
    chols = _cholesky_all(state.psi_tilde)
    return 2.0 * np.sum(np.log(np.diagonal(chols, axis1=1, axis2=2)), axis=1)


def _cholesky_all(mats):
    try:
        return np.linalg.cholesky(mats)
    except np.linalg.LinAlgError:
        for k, m in enumerate(mats):
            cholesky(m, component=k)
        raise  # pragma: no cover - the loop above always finds the failure


def _expected_log_det_precision(nu_tilde, log_det_psi, d):
    j = np.arange(1, d + 1)
    dig = digamma((nu_tilde[:, None] + 1.0 - j) / 2.0).sum(axis=1)
    return dig + d * math.log(2.0) - log_det_psi


def _expected_log_lik(state, X, mode):
    """E_q[log N(x_i | mu_k, L_k^{-1})] for every (i, k), shape (n, K)."""
    n, d = X.shape
    log_det_psi = _log_det_psi(state, mode)
    e_log_det = _expected_log_det_precision(state.nu_tilde, log_det_psi, d)
    if mode == DIAGONAL:
        prec = 1.0 / state.psi_tilde  # (K, d)
        # sum_j (x_ij - m_kj)^2 prec_kj, expanded to stay (n, K)
        quad = ((X * X) @ prec.T - 2.0 * X @ (state.xi_tilde * prec).T
                + np.sum(state.xi_tilde ** 2 * prec, axis=1))
        quad = np.maximum(quad, 0.0)
    else:
        chols = _cholesky_all(state.psi_tilde)
        quad = np.empty((n, state.n_components))
        for k, L in enumerate(chols):
            sol = solve_triangular(L, (X - state.xi_tilde[k]).T, lower=True,
                                   check_finite=False)
            quad[:, k] = np.sum(sol * sol, axis=0)
    return (0.5 * e_log_det - 0.5 * d * LOG_2PI - 0.5 * d / state.b_tilde
            - 0.5 * state.nu_tilde * quad)


def _normalise(log_rho):
    log_resp = log_rho - log_sum_exp(log_rho, axis=1)[:, None]
    resp = np.exp(log_resp)
    resp /= resp.sum(axis=1, keepdims=True)
    return resp


def update_responsibilities(state, data, hyper):
    """Recompute every responsibility from the current stick and NIW factors."""
    X = _as_data(data, hyper)
    e_log_pi, _ = _expected_log_stick(state.gamma1, state.gamma2)
    log_rho = _expected_log_lik(state, X, hyper.covariance_mode) + e_log_pi
    return replace(state, resp=_normalise(log_rho))


def update_stick_breaking(state, hyper):
    """gamma1_k = 1 + n_k, gamma2_k = alpha + sum_{j>k} n_j."""
    nk = state.nk
    tail = np.concatenate((np.cumsum(nk[::-1])[::-1][1:], [0.0]))
    return replace(state, gamma1=1.0 + nk, gamma2=hyper.alpha + tail)


def update_niw(state, data, hyper):
    """Conjugate NIW update; the diagonal mode keeps only per-coordinate scatter."""
    X = _as_data(data, hyper)
    b = hyper.b
    resp = state.resp
    nk = resp.sum(axis=0)
    safe_nk = np.where(nk > 0, nk, 1.0)
    wk = (resp.T @ X) / safe_nk[:, None]
    shrink = b * nk / (b + nk)
    dev = wk - hyper.xi  # (K, d)
    xi_tilde = (b * hyper.xi + nk[:, None] * wk) / (b + nk)[:, None]

    if hyper.covariance_mode == DIAGONAL:
        scatter = np.einsum("ik,ikj->kj", resp, (X[:, None, :] - wk[None, :, :]) ** 2)
        psi_tilde = hyper.psi_ridged + scatter + shrink[:, None] * dev ** 2
    else:
        K, d = wk.shape
        psi_tilde = np.empty((K, d, d))
        base = hyper.psi_ridged
        for k in range(K):
            diff = X - wk[k]
            scat = (diff * resp[:, k:k + 1]).T @ diff
            psi_tilde[k] = base + scat + shrink[k] * np.outer(dev[k], dev[k])
            psi_tilde[k] = 0.5 * (psi_tilde[k] + psi_tilde[k].T)

    return replace(state, xi_tilde=xi_tilde, b_tilde=b + nk, nu_tilde=hyper.nu + nk,
                   psi_tilde=psi_tilde)


def _log_multigamma(a, d):
    j = np.arange(1, d + 1)
    a = np.atleast_1d(a)
    return d * (d - 1) / 4.0 * math.log(math.pi) + gammaln(a[:, None] + (1.0 - j) / 2.0).sum(1)


def _elbo_from(state, hyper, e_log_lik):
    d = hyper.dim
    mode = hyper.covariance_mode
    resp = state.resp
    alpha, b, nu = hyper.alpha, hyper.b, hyper.nu
    psi0 = hyper.psi_ridged
    e_log_pi, e_log_1mv = _expected_log_stick(state.gamma1, state.gamma2)

    # data and assignment terms, minus entropy of q(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        ent_z = -np.sum(np.where(resp > 0, resp * np.log(resp), 0.0))
    total = np.sum(resp * (e_log_lik + e_log_pi)) + ent_z

    # sticks: E log Beta(v; 1, alpha) + H[Beta(gamma1, gamma2)]
    g1, g2 = state.gamma1, state.gamma2
    total += np.sum(math.log(alpha) + (alpha - 1.0) * e_log_1mv)
    total += np.sum(betaln(g1, g2) - (g1 - 1.0) * digamma(g1) - (g2 - 1.0) * digamma(g2)
                    + (g1 + g2 - 2.0) * digamma(g1 + g2))

    # NIW prior minus NIW variational density
    log_det_psi = _log_det_psi(state, mode)
    e_log_det = _expected_log_det_precision(state.nu_tilde, log_det_psi, d)
    dxi = state.xi_tilde - hyper.xi
    if mode == DIAGONAL:
        maha = np.sum(dxi ** 2 / state.psi_tilde, axis=1)
        trace = np.sum(psi0 / state.psi_tilde, axis=1)
        log_det_psi0 = float(np.sum(np.log(psi0)))
    else:
        inv = np.linalg.inv(state.psi_tilde)
        maha = np.einsum("ki,kij,kj->k", dxi, inv, dxi)
        trace = np.einsum("ij,kji->k", psi0, inv)
        log_det_psi0 = 2.0 * float(np.sum(np.log(np.diag(cholesky(psi0)))))
    nu_t, b_t = state.nu_tilde, state.b_tilde
    mean_terms = (0.5 * d * np.log(b / b_t) - 0.5 * b * d / b_t
                  - 0.5 * b * nu_t * maha + 0.5 * d)
    log_wishart_norm_prior = (0.5 * nu * log_det_psi0 - 0.5 * nu * d * math.log(2.0)
                              - _log_multigamma(0.5 * nu, d)[0])
    log_wishart_norm_post = (0.5 * nu_t * log_det_psi - 0.5 * nu_t * d * math.log(2.0)
                             - _log_multigamma(0.5 * nu_t, d))
    prec_terms = (log_wishart_norm_prior + 0.5 * (nu - d - 1.0) * e_log_det - 0.5 * nu_t * trace
                  - log_wishart_norm_post - 0.5 * (nu_t - d - 1.0) * e_log_det
                  + 0.5 * nu_t * d)
    total += np.sum(mean_terms + prec_terms)

    if not np.isfinite(total):
        raise NumericError("evidence lower bound is not finite")
    return float(total)


def compute_elbo(state, data, hyper):
    """Mean-field evidence lower bound of the truncated DP-NIW mixture."""
    X = _as_data(data, hyper)
    return _elbo_from(state, hyper, _expected_log_lik(state, X, hyper.covariance_mode))


def fit(data, hyper, rng, max_iter=200, tol=1e-4, init="kmeans++"):
    """Run CAVI until the relative ELBO change drops below ``tol``.

    One sweep updates responsibilities, then sticks, then NIW factors; the ELBO
    is evaluated after each sweep. Hitting ``max_iter`` is not an error: the
    returned state has ``converged=False``.

    Returns
    -------
    state : VariationalState
    estimate : MixtureEstimate
    """
    X = _as_data(data, hyper)
    mode = hyper.covariance_mode
    state = init_state(X, hyper, rng, init=init)
    # E[log lik] serves both the ELBO of the current state and the next
    # responsibility update, so it is computed once per sweep.
    e_log_lik = _expected_log_lik(state, X, mode)
    history = [_elbo_from(state, hyper, e_log_lik)]
    converged = False
    n_iter = 0
    while n_iter < max_iter:
        e_log_pi, _ = _expected_log_stick(state.gamma1, state.gamma2)
        state = replace(state, resp=_normalise(e_log_lik + e_log_pi))
        state = update_stick_breaking(state, hyper)
        state = update_niw(state, X, hyper)
        n_iter += 1
        e_log_lik = _expected_log_lik(state, X, mode)
        history.append(_elbo_from(state, hyper, e_log_lik))
        if abs(history[-1] - history[-2]) < tol * abs(history[-2]):
            converged = True
            break
    state = replace(state, n_iter=n_iter, elbo_history=history, converged=converged)
    return state, point_estimates(state)


def point_estimates(state, data=None):
    """Weights, means, covariances, hard assignments and active count.

    ``data`` is accepted for call-site symmetry and not used; the hard
    assignments come from the stored responsibilities.
    """
    g1, g2 = state.gamma1, state.gamma2
    log_total = np.log(g1 + g2)
    log_w = np.log(g1) - log_total + np.concatenate(
        ([0.0], np.cumsum(np.log(g2) - log_total)[:-1]))
    weights = np.exp(log_w)
    assignments = np.argmax(state.resp, axis=1)
    active = int(np.unique(assignments).size)
    nu = state.nu_tilde
    if state.psi_tilde.ndim == 2:
        covs = state.psi_tilde / nu[:, None]
        mode = DIAGONAL
    else:
        covs = state.psi_tilde / nu[:, None, None]
        mode = FULL
    return MixtureEstimate(weights=weights, means=state.xi_tilde.copy(), covariances=covs,
                           assignments=assignments, active_count=active,
                           covariance_mode=mode)


def check_state(state, hyper, atol=1e-12):
    """Raise NumericError if a state invariant is violated."""
    resp = state.resp
    if np.any(resp < 0) or np.any(resp > 1) or not np.allclose(resp.sum(1), 1.0, rtol=0,
                                                               atol=atol):
        raise NumericError("responsibility rows are off the simplex")
    if np.any(state.gamma1 < 1.0) or np.any(state.gamma2 < hyper.alpha):
        raise NumericError("stick-breaking parameters below their floor")
    nk = state.nk
    if not (np.allclose(state.b_tilde, hyper.b + nk) and np.allclose(state.nu_tilde,
                                                                     hyper.nu + nk)):
        raise NumericError("b_tilde / nu_tilde out of sync with responsibilities")
    if state.psi_tilde.ndim == 2:
        if not np.all(state.psi_tilde > 0):
            raise NumericError("diagonal scale has non-positive entries")
    else:
        try:
            _cholesky_all(state.psi_tilde)
        except NotPositiveDefiniteError as exc:
            raise NumericError(str(exc)) from exc
