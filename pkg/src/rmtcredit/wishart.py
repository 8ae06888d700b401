"""Wishart ensemble of fluctuating covariance matrices.

The random covariance ``A A^T / N`` with ``A`` a ``K x N`` Gaussian data
matrix of column covariance ``Sigma0`` averages a multivariate normal return
density into a heavy-tailed one. That average equals the scale mixture

    <g>(r | Sigma0, N) = int_0^inf chi2_N(z) Normal(r; 0, (z/N) Sigma0) dz,

which is the representation evaluated here. It depends on ``r`` only through
the bilinear form ``b = r^T Sigma0^{-1} r`` and has the closed form

    <g> = K_nu(sqrt(N b)) / (sqrt(N b))^nu
          / (2^(N/2 - 1) Gamma(N/2) sqrt(det(2 pi Sigma0 / N))),  nu = (K - N)/2,

with ``K_nu`` the modified Bessel function of the second kind.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import gammaln, kve, ndtr
from sklearn.base import BaseEstimator, DensityMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._rng import check_random_state
from .exceptions import ContractViolation, NumericalError
from .market import ReturnMatrix, covariance_matrix, equicorrelation
from .validation import check_n_fluct, check_symmetric_psd, psd_sqrt

logger = logging.getLogger(__name__)

EIG_TOL = 1e-12
_DROP = 60.0          # log-integrand drop that bounds the z-integration range
_N_NODES = 201        # trapezoid nodes in log z, spectrally convergent


@dataclass
class EnsembleSpec:
    """Mean covariance ``sigma0`` and fluctuation parameter ``N`` (``inf`` allowed)."""

    sigma0: np.ndarray
    N: float

    def __post_init__(self):
        self.sigma0 = check_symmetric_psd(np.atleast_2d(self.sigma0), "sigma0")
        self.N = check_n_fluct(self.N)

    @classmethod
    def from_effective(cls, c, vols, N):
        vols = np.atleast_1d(np.asarray(vols, dtype=float))
        C = equicorrelation(len(vols), c)
        return cls(vols[:, None] * C * vols[None, :], N)

    @property
    def K(self):
        return self.sigma0.shape[0]


@dataclass
class AggregatedSample:
    """Rotated and scaled return components pooled over windows."""

    values: np.ndarray
    rotation_basis: np.ndarray
    eigenvalues: np.ndarray
    dropped: int = 0


@dataclass
class FitReport:
    N_hat: float
    loglik: float
    ks: float
    grid: np.ndarray
    loglik_curve: np.ndarray
    at_upper_bound: bool
    n_samples: int
    printed_prefactor_mass: float
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return {
            "N_hat": self.N_hat,
            "loglik": self.loglik,
            "ks": self.ks,
            "n_samples": self.n_samples,
            "at_upper_bound": self.at_upper_bound,
            "printed_prefactor_mass": self.printed_prefactor_mass,
            "grid": self.grid.tolist(),
            "loglik_curve": self.loglik_curve.tolist(),
            "warnings": list(self.warnings),
        }


# --------------------------------------------------------------------------
# linear algebra helpers

def _chol_logdet(S):
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as err:
        raise NumericalError(f"covariance is not positive definite: {err}") from None
    return L, 2.0 * float(np.sum(np.log(np.diag(L))))


def bilinear_form(r, sigma0):
    """``b = r^T Sigma0^{-1} r`` for each row of ``r``."""
    S = np.atleast_2d(np.asarray(sigma0, dtype=float))
    r = np.asarray(r, dtype=float)
    L, _ = _chol_logdet(S)
    y = np.linalg.solve(L, np.atleast_2d(r).T)
    b = np.sum(y * y, axis=0)
    return b if r.ndim > 1 else b[0]


# --------------------------------------------------------------------------
# densities

def wishart_log_density(A, spec):
    """Log density of a ``K x N`` data matrix under the Wishart model."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    K, N = A.shape
    if K != spec.K:
        raise ContractViolation(f"A has {K} rows, sigma0 is {spec.K}x{spec.K}")
    L, logdet = _chol_logdet(spec.sigma0)
    Y = np.linalg.solve(L, A)
    return -0.5 * N * (K * math.log(2.0 * math.pi) + logdet) - 0.5 * float(np.sum(Y * Y))


def _log_mixture_integral(b, K, N, n_nodes=_N_NODES):
    """log of int chi2_N(z) (N / (2 pi z))^(K/2) exp(-N b / (2 z)) dz.

    Substituting ``z = e^s`` makes the integrand log-concave in ``s``; it is
    integrated by the trapezoid rule between the two points where it has
    fallen by ``exp(-60)`` from its mode, found by bisection.
    """
    b = np.atleast_1d(np.asarray(b, dtype=float))
    out = np.empty_like(b)
    a = 0.5 * (N - K)
    const = -0.5 * N * math.log(2.0) - gammaln(0.5 * N) + 0.5 * K * math.log(N / (2.0 * math.pi))

    zero = b <= 0.0
    if np.any(zero):
        # E[z^{-K/2}] under chi2_N is finite only for N > K
        if a > 0:
            out[zero] = _log_mixture_at_zero(K, N)
        else:
            out[zero] = np.inf
    pos = ~zero
    if not np.any(pos):
        return out

    beta = 0.5 * N * b[pos]
    rt = np.sqrt(a * a + 2.0 * beta)
    zmode = a + rt if a >= 0 else 2.0 * beta / (rt - a)
    smode = np.log(zmode)
    logbeta = np.log(beta)

    def phi(s, bt):
        with np.errstate(over="ignore"):
            return a * s - 0.5 * np.exp(s) - bt * np.exp(-s)

    target = phi(smode, beta) - _DROP
    lo, hi = smode.copy(), smode + 200.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        inside = phi(mid, beta) > target
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    s_right = hi
    lo, hi = np.minimum(smode - 50.0, logbeta - 10.0), smode.copy()
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        inside = phi(mid, beta) > target
        hi = np.where(inside, mid, hi)
        lo = np.where(inside, lo, mid)
    s_left = lo

    t = np.linspace(0.0, 1.0, n_nodes)
    res = np.empty(len(beta))
    chunk = max(1, 2_000_000 // n_nodes)
    for i in range(0, len(beta), chunk):
        sl = slice(i, i + chunk)
        width = s_right[sl] - s_left[sl]
        S = s_left[sl, None] + width[:, None] * t
        v = phi(S, beta[sl, None])
        m = v.max(axis=1, keepdims=True)
        h = width / (n_nodes - 1)
        res[sl] = m[:, 0] + np.log(np.exp(v - m).sum(axis=1) * h)
    out[pos] = const + res
    return out


def _log_mixture_at_zero(K, N):
    # (N/2pi)^{K/2} E[z^{-K/2}],  E[z^{-K/2}] = 2^{-K/2} Gamma((N-K)/2) / Gamma(N/2)
    return (0.5 * K * math.log(N / (2.0 * math.pi)) - 0.5 * K * math.log(2.0)
            + gammaln(0.5 * (N - K)) - gammaln(0.5 * N))


def _log_bessel_form(b, K, N):
    """Closed Bessel form of the mixture integral (same quantity, other route)."""
    b = np.atleast_1d(np.asarray(b, dtype=float))
    nu = 0.5 * (K - N)
    const = -(0.5 * N - 1.0) * math.log(2.0) - gammaln(0.5 * N) + 0.5 * K * math.log(N / (2.0 * math.pi))
    out = np.empty_like(b)
    zero = b <= 0
    if np.any(zero):
        out[zero] = _log_mixture_at_zero(K, N) if N > K else np.inf
    y = np.sqrt(N * b[~zero])
    with np.errstate(divide="ignore"):
        out[~zero] = const + np.log(kve(nu, y)) - y - nu * np.log(y)
    return out


def log_averaged_return_density(r, sigma0, N, method="mixture"):
    """Log of the ensemble-averaged return density at each row of ``r``.

    Parameters
    ----------
    r : array_like, shape (K,) or (n, K)
    sigma0 : array_like, shape (K, K)
        Positive definite mean covariance.
    N : float
        Fluctuation parameter, ``math.inf`` gives the Gaussian.
    method : {"mixture", "bessel"}
        ``"mixture"`` integrates the chi-squared scale mixture numerically;
        ``"bessel"`` uses the closed form. Both agree to ~1e-13 relative.
    """
    S = np.atleast_2d(np.asarray(sigma0, dtype=float))
    N = check_n_fluct(N)
    K = S.shape[0]
    r = np.asarray(r, dtype=float)
    single = r.ndim == 1
    R = np.atleast_2d(r)
    if R.shape[1] != K:
        raise ContractViolation(f"r has dimension {R.shape[1]}, sigma0 is {K}x{K}")
    L, logdet = _chol_logdet(S)
    y = np.linalg.solve(L, R.T)
    b = np.sum(y * y, axis=0)
    if math.isinf(N):
        out = -0.5 * (K * math.log(2.0 * math.pi) + logdet) - 0.5 * b
    elif method == "mixture":
        out = _log_mixture_integral(b, K, N) - 0.5 * logdet
    elif method == "bessel":
        out = _log_bessel_form(b, K, N) - 0.5 * logdet
    else:
        raise ValueError(f"unknown method {method!r}")
    return out[0] if single else out


def averaged_return_density(r, sigma0, N, method="mixture"):
    return np.exp(log_averaged_return_density(r, sigma0, N, method))


def univariate_aggregated_density(x, N, method="mixture"):
    """Density of one rotated, scaled return component (unit variance for every N)."""
    x = np.asarray(x, dtype=float)
    out = averaged_return_density(x.reshape(-1, 1), [[1.0]], N, method)
    return out.reshape(x.shape)


def _log_univariate_bessel(x, N):
    x = np.asarray(x, dtype=float)
    if math.isinf(N):
        return -0.5 * math.log(2.0 * math.pi) - 0.5 * x * x
    return _log_bessel_form(x * x, 1, N).reshape(x.shape)


def univariate_aggregated_cdf(x, N, n_nodes=801):
    """CDF ``E_z[Phi(x sqrt(N / z))]`` of the aggregated density, z ~ chi2_N."""
    x = np.asarray(x, dtype=float)
    N = check_n_fluct(N)
    if math.isinf(N):
        return ndtr(x)
    # chi2_N in s = log z: weight exp((N/2) s - e^s / 2), mode at s = log N
    smode = math.log(N)

    def phi0(s):
        return 0.5 * N * s - 0.5 * math.exp(s)

    top = phi0(smode) - _DROP
    s_right = integrate_bisect(lambda s: phi0(s) - top, smode, smode + 20.0)
    s_left = integrate_bisect(lambda s: phi0(-s) - top, -smode, -smode + 20.0)
    s_left = -s_left
    s = np.linspace(s_left, s_right, n_nodes)
    logw = 0.5 * N * s - 0.5 * np.exp(s) - 0.5 * N * math.log(2.0) - gammaln(0.5 * N)
    w = np.exp(logw) * (s[1] - s[0])
    w /= w.sum()
    flat = x.ravel()
    out = np.empty_like(flat)
    scale = np.sqrt(N) * np.exp(-0.5 * s)
    chunk = max(1, 4_000_000 // n_nodes)
    for i in range(0, len(flat), chunk):
        out[i:i + chunk] = ndtr(flat[i:i + chunk, None] * scale[None, :]) @ w
    return out.reshape(x.shape)


def integrate_bisect(f, lo, hi, iters=80):
    """Root of a function that is positive at ``lo`` and negative at ``hi``."""
    while f(hi) > 0:
        hi = lo + 2.0 * (hi - lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def printed_prefactor_mass(N, K=1):
    """Total mass of the averaged density when the prefactor ``2^(N/2+1)`` is used.

    The self-normalizing mixture fixes the constant at ``2^(N/2-1)``; the
    printed variant integrates to 1/4, which this routine measures numerically
    (K = 1, unit variance) rather than assuming.
    """
    if K != 1:
        raise NotImplementedError("only the univariate mass is measured")
    N = float(N)
    shift = 2.0 * math.log(2.0)

    def f(x):
        return float(np.exp(_log_univariate_bessel(np.array(x), N) - shift))

    # x = 0 is singular for N <= 1; split there
    left = integrate.quad(f, 0.0, 1.0, limit=200)[0]
    right = integrate.quad(f, 1.0, np.inf, limit=200)[0]
    return 2.0 * (left + right)


# --------------------------------------------------------------------------
# sampling

def sample_random_covariance(spec, rng=None):
    """One draw ``A A^T / N`` from the Wishart ensemble.

    Integer ``N`` uses ``N`` Gaussian columns of covariance ``sigma0``.
    Non-integer ``N`` returns ``(z / N) sigma0`` with ``z ~ chi2_N``, a
    scalar surrogate that reproduces the ensemble mean and the averaged return
    law but not the matrix-valued fluctuations. ``N = inf`` returns ``sigma0``.
    """
    rng = check_random_state(rng)
    N = spec.N
    if math.isinf(N):
        return spec.sigma0.copy()
    if float(N).is_integer():
        n = int(N)
        A = psd_sqrt(spec.sigma0, "sigma0") @ rng.standard_normal((spec.K, n))
        return A @ A.T / n
    return rng.chisquare(N) / N * spec.sigma0


def mixture_sample(spec, size=None, rng=None):
    """Draw returns ``sqrt(z / N) F eps`` with ``F F^T = sigma0``, ``z ~ chi2_N``.

    Returns shape ``(K,)`` when ``size`` is None, else ``(size, K)``.
    """
    rng = check_random_state(rng)
    n = 1 if size is None else int(size)
    F = psd_sqrt(spec.sigma0, "sigma0")
    eps = rng.standard_normal((n, spec.K))
    if math.isinf(spec.N):
        scale = np.ones((n, 1))
    else:
        scale = np.sqrt(rng.chisquare(spec.N, size=(n, 1)) / spec.N)
    out = scale * (eps @ F.T)
    return out[0] if size is None else out


# --------------------------------------------------------------------------
# aggregation and fitting

def _rotate(x, cov):
    lam, U = np.linalg.eigh(cov)
    keep = lam > EIG_TOL * max(lam[-1], 0.0)
    if lam[-1] <= 0:
        keep[:] = False
    comps = (U[:, keep].T @ x) / np.sqrt(lam[keep])[:, None]
    return comps, U, lam, int((~keep).sum())


def aggregate_returns(returns, cov=None, window=25, center=True):
    """Rotate returns into the eigenbasis of a covariance and scale each
    component by the square root of its eigenvalue, then pool.

    Parameters
    ----------
    returns : ReturnMatrix or array (K, T)
    cov : array (K, K) or None
        Fixed covariance used for every observation. ``None`` estimates the
        covariance separately in each non-overlapping window of ``window``
        observations.
    center : bool
        Remove the mean (globally, or per window when ``cov`` is None).
    """
    rm = returns if isinstance(returns, ReturnMatrix) else ReturnMatrix(returns)
    x = rm.values
    dropped = 0
    if cov is not None:
        cov = check_symmetric_psd(np.atleast_2d(cov), "cov")
        if center:
            x = x - x.mean(axis=1, keepdims=True)
        comps, U, lam, dropped = _rotate(x, cov)
        values = comps.T.ravel()
        basis, eig = U, lam
    else:
        window = int(window)
        if window < 2 or window > rm.T:
            raise ContractViolation(f"window {window} invalid for T={rm.T}")
        parts, bases, eigs = [], [], []
        for s in range(0, rm.T - window + 1, window):
            xw = x[:, s:s + window]
            cw = covariance_matrix(xw)
            if center:
                xw = xw - xw.mean(axis=1, keepdims=True)
            comps, U, lam, d = _rotate(xw, cw)
            dropped += d
            parts.append(comps.T.ravel())
            bases.append(U)
            eigs.append(lam)
        values = np.concatenate(parts)
        basis, eig = np.array(bases), np.array(eigs)
    if dropped:
        logger.info("dropped %d near-singular eigen-components", dropped)
    return AggregatedSample(values, basis, eig, dropped)


def _loglik(x, N):
    return float(np.sum(_log_univariate_bessel(x, N)))


def _golden_max(f, lo, hi, tol):
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = hi - g * (hi - lo), lo + g * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > tol:
        if fc > fd:
            hi, d, fd = d, c, fc
            c = hi - g * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + g * (hi - lo)
            fd = f(d)
    return 0.5 * (lo + hi)


def ks_statistic(x, N):
    x = np.sort(np.asarray(x, dtype=float))
    n = len(x)
    F = univariate_aggregated_cdf(x, N)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def fit_N(sample, n_min=1.0, n_max=64.0, resolution=0.1):
    """Maximum-likelihood fit of ``N`` to pooled aggregated components.

    The components are treated as independent draws of the univariate
    aggregated density. Integer grid over ``[n_min, n_max]``, refined by
    golden-section search to ``resolution``.
    """
    x = sample.values if isinstance(sample, AggregatedSample) else np.asarray(sample, dtype=float).ravel()
    x = x[np.isfinite(x)]
    if x.size < 2:
        raise ContractViolation("need at least two aggregated values")
    notes = []
    if x.size < 10_000:
        notes.append(f"only {x.size} samples; >= 1e4 recommended")
    grid = np.arange(math.ceil(n_min), math.floor(n_max) + 1, dtype=float)
    ll = np.array([_loglik(x, N) for N in grid])
    i = int(np.argmax(ll))
    at_upper = i == len(grid) - 1
    if at_upper:
        N_hat = float(grid[-1])
        if np.all(np.diff(ll) >= 0):
            notes.append("likelihood increases monotonically up to the upper bound (Gaussian-like data)")
    else:
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        N_hat = _golden_max(lambda N: _loglik(x, N), lo, hi, resolution / 2.0)
        N_hat = round(N_hat / resolution) * resolution
    ks = ks_statistic(x, N_hat)
    if ks > 0.1:
        notes.append(f"poor fit: KS statistic {ks:.3f} > 0.1")
        warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
    return FitReport(
        N_hat=float(N_hat),
        loglik=_loglik(x, N_hat),
        ks=ks,
        grid=grid,
        loglik_curve=ll,
        at_upper_bound=bool(at_upper),
        n_samples=int(x.size),
        printed_prefactor_mass=printed_prefactor_mass(N_hat),
        warnings=notes,
    )


# --------------------------------------------------------------------------
# scikit-learn style estimators

class ReturnAggregator(TransformerMixin, BaseEstimator):
    """Transform a return panel ``(T, K)`` into pooled rotated components.

    Parameters
    ----------
    covariance : {"global", "window"} or array
        ``"global"`` rotates with the covariance fitted on the whole panel,
        ``"window"`` re-estimates it in every window, an array is used as is.
    window : int
        Window length for ``covariance="window"``.
    """

    def __init__(self, covariance="global", window=25):
        self.covariance = covariance
        self.window = window

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        if isinstance(self.covariance, str):
            if self.covariance not in ("global", "window"):
                raise ValueError(f"unknown covariance mode {self.covariance!r}")
            self.covariance_ = covariance_matrix(X.T) if self.covariance == "global" else None
        else:
            self.covariance_ = check_symmetric_psd(np.atleast_2d(self.covariance), "covariance")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, ensure_min_samples=2)
        agg = aggregate_returns(X.T, self.covariance_, self.window)
        self.last_sample_ = agg
        return agg.values.reshape(-1, 1)


class WishartMixture(DensityMixin, BaseEstimator):
    """Univariate aggregated-return density with fitted fluctuation parameter.

    ``fit`` takes pooled components (``(n,)`` or ``(n, 1)``).
    """

    def __init__(self, n_min=1.0, n_max=64.0, resolution=0.1):
        self.n_min = n_min
        self.n_max = n_max
        self.resolution = resolution

    def fit(self, X, y=None):
        x = check_array(np.asarray(X, dtype=float).reshape(-1, 1)).ravel()
        self.fit_report_ = fit_N(x, self.n_min, self.n_max, self.resolution)
        self.N_ = self.fit_report_.N_hat
        return self

    def score_samples(self, X):
        check_is_fitted(self, "N_")
        x = np.asarray(X, dtype=float).ravel()
        return _log_univariate_bessel(x, self.N_)

    def score(self, X, y=None):
        return float(np.sum(self.score_samples(X)))

    def sample(self, n_samples=1, random_state=None):
        check_is_fitted(self, "N_")
        spec = EnsembleSpec(np.eye(1), self.N_)
        return mixture_sample(spec, n_samples, check_random_state(random_state))
