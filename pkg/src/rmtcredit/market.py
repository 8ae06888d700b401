"""Price ingestion, returns, and correlation/covariance estimation.

Conventions used throughout:

* returns are simple (arithmetic) returns ``(S(t+dt) - S(t)) / S(t)``;
* standard deviations use the population denominator ``n`` so that
  ``C = M M^T / T`` has an exactly unit diagonal;
* a :class:`ReturnMatrix` stores assets in rows (``K x T``). The scikit-learn
  style estimators at the bottom of this module follow the usual
  ``(n_samples, n_features) = (T, K)`` layout instead.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._rng import substream
from .exceptions import (
    AlignmentError,
    ContractViolation,
    DegenerateSeriesError,
    DomainError,
    ParseError,
)

logger = logging.getLogger(__name__)


@dataclass
class PriceSeries:
    asset_id: str
    timestamps: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps)
        self.prices = np.asarray(self.prices, dtype=float)
        if self.prices.ndim != 1 or len(self.prices) != len(self.timestamps):
            raise ContractViolation(f"{self.asset_id}: timestamps and prices differ in length")
        if len(self.prices) < 2:
            raise ContractViolation(f"{self.asset_id}: need at least two prices")
        if np.any(~(self.prices > 0)):
            raise DomainError(f"{self.asset_id}: prices must be strictly positive")
        if np.any(self.timestamps[1:] <= self.timestamps[:-1]):
            raise ContractViolation(f"{self.asset_id}: timestamps must be strictly increasing")


@dataclass
class ReturnMatrix:
    """``K x T`` matrix of returns with its interval and asset labels."""

    values: np.ndarray
    delta_t: int = 1
    asset_ids: list = field(default=None)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[1] < 1:
            raise ContractViolation("a return matrix needs at least one observation")
        if not np.all(np.isfinite(self.values)):
            raise ContractViolation("return matrix contains non-finite entries")
        if self.asset_ids is None:
            self.asset_ids = [f"A{k:03d}" for k in range(self.K)]
        self.asset_ids = list(self.asset_ids)
        if len(self.asset_ids) != self.K:
            raise ContractViolation("asset_ids length does not match K")

    @property
    def K(self):
        return self.values.shape[0]

    @property
    def T(self):
        return self.values.shape[1]


@dataclass
class MomentEstimates:
    mu: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray
    maturity: float


@dataclass
class SlidingWindowEnsemble:
    window_length: int
    stride: int
    matrices: np.ndarray
    window_starts: np.ndarray
    skipped: list = field(default_factory=list)

    def __len__(self):
        return len(self.matrices)

    def mean(self):
        """Ensemble average of the retained matrices."""
        return self.matrices.mean(axis=0)


# --------------------------------------------------------------------------
# series handling

def align_series(series):
    """Restrict every series to the timestamps common to all (inner join)."""
    if not series:
        raise ContractViolation("no price series given")
    common = series[0].timestamps
    for s in series[1:]:
        common = np.intersect1d(common, s.timestamps)
    if len(common) < 2:
        raise AlignmentError("fewer than two common timestamps across series")
    out = []
    for s in series:
        keep = np.isin(s.timestamps, common)
        out.append(PriceSeries(s.asset_id, s.timestamps[keep], s.prices[keep]))
    return out


def compute_returns(series, delta_t=1):
    """Simple returns over ``delta_t`` observations for a list of aligned series."""
    delta_t = int(delta_t)
    if delta_t < 1:
        raise ContractViolation("delta_t must be >= 1")
    if not series:
        raise ContractViolation("no price series given")
    grid = series[0].timestamps
    for s in series[1:]:
        if len(s.timestamps) != len(grid) or np.any(s.timestamps != grid):
            raise AlignmentError(
                f"series {s.asset_id!r} is not on the grid of {series[0].asset_id!r}; "
                "use align_series first"
            )
    S = np.vstack([s.prices for s in series])
    if np.any(~(S > 0)):
        raise DomainError("prices must be strictly positive")
    if S.shape[1] - delta_t < 1:
        raise ContractViolation("series too short for the requested delta_t")
    r = (S[:, delta_t:] - S[:, :-delta_t]) / S[:, :-delta_t]
    return ReturnMatrix(r, delta_t=delta_t, asset_ids=[s.asset_id for s in series])


def _as_returns(returns):
    if isinstance(returns, ReturnMatrix):
        return returns
    return ReturnMatrix(np.asarray(returns, dtype=float))


def _window_slice(T, window):
    if window is None:
        return slice(0, T)
    if isinstance(window, slice):
        return window
    start, stop = window
    return slice(int(start), int(stop))


def _moments(x):
    mean = x.mean(axis=1, keepdims=True)
    std = np.sqrt(((x - mean) ** 2).mean(axis=1, keepdims=True))
    # rounding in the mean leaves ~1e-17 for constant rows; report exact zero
    std[np.ptp(x, axis=1) == 0] = 0.0
    return mean, std


def normalize_series(returns, window=None):
    """Zero mean, unit (population) standard deviation per row over ``window``.

    ``window`` is ``None`` (all observations), a ``slice`` or a
    ``(start, stop)`` pair. Raises :class:`DegenerateSeriesError` naming the
    first asset whose variance vanishes in the window.
    """
    rm = _as_returns(returns)
    x = rm.values[:, _window_slice(rm.T, window)]
    if x.shape[1] < 2:
        raise ContractViolation("normalization window must hold at least two observations")
    mean, std = _moments(x)
    scale = np.maximum(np.abs(mean), 1.0)
    bad = np.flatnonzero(std[:, 0] <= 1e-14 * scale[:, 0])
    if bad.size:
        raise DegenerateSeriesError(rm.asset_ids[bad[0]])
    return ReturnMatrix((x - mean) / std, delta_t=rm.delta_t, asset_ids=rm.asset_ids)


def correlation_matrix(normalized):
    """Pearson correlation ``C = M M^T / T`` of normalized rows."""
    M = _as_returns(normalized).values
    T = M.shape[1]
    diag = (M * M).sum(axis=1) / T
    if np.any(np.abs(diag - 1.0) > 1e-6):
        raise ContractViolation("input rows are not normalized to unit variance")
    C = M @ M.T / T
    C = 0.5 * (C + C.T)
    np.fill_diagonal(C, 1.0)
    return np.clip(C, -1.0, 1.0)


def covariance_matrix(returns, window=None):
    """Covariance ``Sigma = A A^T / T`` with ``A = sigma M``."""
    rm = _as_returns(returns)
    x = rm.values[:, _window_slice(rm.T, window)]
    mean, std = _moments(x)
    A = x - mean
    S = A @ A.T / x.shape[1]
    return 0.5 * (S + S.T)


def rolling_volatility(returns, window, stride=1):
    """Population standard deviation per asset in each window.

    Returns
    -------
    sigma : ndarray, shape (K, n_windows)
    starts : ndarray, shape (n_windows,)
    """
    rm = _as_returns(returns)
    window, stride = int(window), int(stride)
    if window > rm.T:
        raise ContractViolation(f"window {window} longer than the data ({rm.T})")
    if window < 2 or stride < 1:
        raise ContractViolation("window must be >= 2 and stride >= 1")
    starts = np.arange(0, rm.T - window + 1, stride)
    sig = np.empty((rm.K, len(starts)))
    for i, s in enumerate(starts):
        sig[:, i] = _moments(rm.values[:, s:s + window])[1][:, 0]
    return sig, starts


def sliding_correlation_ensemble(returns, window, stride=None):
    """Correlation matrices measured in windows sliding through the data.

    Windows default to non-overlapping (``stride = window``). Each window is
    normalized on its own; windows with a zero-variance asset are skipped and
    listed in ``skipped`` as ``(start, asset_id)``.
    """
    rm = _as_returns(returns)
    window = int(window)
    stride = window if stride is None else int(stride)
    if window < 2 or stride < 1:
        raise ContractViolation("window must be >= 2 and stride >= 1")
    if window > rm.T:
        raise ContractViolation(f"window {window} longer than the data ({rm.T})")
    starts = np.arange(0, rm.T - window + 1, stride)
    mats, kept, skipped = [], [], []
    for s in starts:
        try:
            M = normalize_series(rm, (s, s + window))
        except DegenerateSeriesError as err:
            logger.warning("window at %d skipped: %s", s, err)
            skipped.append((int(s), err.asset))
            continue
        mats.append(correlation_matrix(M))
        kept.append(s)
    mats = np.array(mats) if mats else np.empty((0, rm.K, rm.K))
    return SlidingWindowEnsemble(window, stride, mats, np.array(kept, dtype=int), skipped)


def effective_correlation(C):
    """Mean off-diagonal correlation and the equicorrelation matrix built from it."""
    C = np.asarray(C, dtype=float)
    K = C.shape[0]
    if K < 2:
        raise ContractViolation("effective correlation needs K >= 2")
    off = ~np.eye(K, dtype=bool)
    c = float(np.mean(C[off]))
    return c, equicorrelation(K, c)


def equicorrelation(K, c):
    E = np.full((K, K), float(c))
    np.fill_diagonal(E, 1.0)
    return E


def estimate_drift_vol(returns, maturity=1.0):
    """Per-asset drift, standard deviation and volatility per sqrt time unit.

    ``mu`` is the sample mean return per ``delta_t``; ``sigma`` the population
    standard deviation; ``rho = sigma / sqrt(maturity)`` where ``maturity`` is
    the return horizon expressed in the time unit wanted for ``rho``.
    """
    rm = _as_returns(returns)
    if not maturity > 0:
        raise DomainError("maturity must be positive")
    mean, std = _moments(rm.values)
    return MomentEstimates(mean[:, 0], std[:, 0], std[:, 0] / math.sqrt(maturity), float(maturity))


# --------------------------------------------------------------------------
# I/O and synthetic data

def load_csv(path):
    """Read ``date,asset_id,close`` rows into price series sorted by asset id."""
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        if [h.strip() for h in header] != ["date", "asset_id", "close"]:
            raise ParseError(f"expected header date,asset_id,close, got {header}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", line=lineno)
            date_s, asset, close_s = (f.strip() for f in row)
            try:
                date = np.datetime64(date_s, "D")
            except ValueError:
                raise ParseError(f"bad ISO-8601 date {date_s!r}", line=lineno) from None
            try:
                close = float(close_s)
            except ValueError:
                raise ParseError(f"bad close value {close_s!r}", line=lineno) from None
            if not close > 0 or not math.isfinite(close):
                raise ParseError(f"close must be a positive finite number, got {close_s}", line=lineno)
            d = rows.setdefault(asset, {})
            if date in d:
                raise ParseError(f"duplicate (date, asset) pair ({date_s}, {asset})", line=lineno)
            d[date] = close
    if not rows:
        raise ParseError("no data rows")
    out = []
    for asset in sorted(rows):
        dates = np.array(sorted(rows[asset]), dtype="datetime64[D]")
        out.append(PriceSeries(asset, dates, np.array([rows[asset][d] for d in dates])))
    return out


def write_prices_csv(series, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "asset_id", "close"])
        for s in series:
            for t, p in zip(s.timestamps, s.prices):
                w.writerow([str(t), s.asset_id, f"{p:.17g}"])


def generate_synthetic_market(K, T_tot, c=0.3, rho=0.02, mu=5e-4, seed=0, start="2000-01-03", s0=100.0):
    """Correlated geometric Brownian motion on business days.

    Log prices step by ``mu - rho**2/2`` plus ``rho`` times equicorrelated
    Gaussian shocks (one common factor with loading ``sqrt(c)``), so that the
    expected simple return per step is ``exp(mu) - 1``. ``rho`` and ``mu`` may be
    scalars or per-asset arrays.
    """
    K, T_tot = int(K), int(T_tot)
    if K < 1 or T_tot < 2:
        raise ContractViolation("need K >= 1 and T_tot >= 2")
    if not 0.0 <= c < 1.0:
        raise DomainError("c must lie in [0, 1)")
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (K,))
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (K,))
    rng = substream(seed, 0)
    common = rng.standard_normal((1, T_tot - 1))
    idio = rng.standard_normal((K, T_tot - 1))
    eps = math.sqrt(c) * common + math.sqrt(1.0 - c) * idio
    steps = (mu - 0.5 * rho**2)[:, None] + rho[:, None] * eps
    logp = np.concatenate([np.zeros((K, 1)), np.cumsum(steps, axis=1)], axis=1)
    prices = s0 * np.exp(logp)
    dates = np.busday_offset(np.datetime64(start, "D"), np.arange(T_tot), roll="forward")
    return [PriceSeries(f"S{k:03d}", dates, prices[k]) for k in range(K)]


def write_matrix_csv(M, labels, path):
    """Row-major CSV with a header of labels; rows prefixed by their label."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + list(labels))
        for lab, row in zip(labels, np.asarray(M)):
            w.writerow([lab] + [f"{v:.17g}" for v in row])


def write_returns_csv(returns, path):
    """Return matrix as CSV: header of asset ids, one row per observation."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(returns.asset_ids)
        for col in returns.values.T:
            w.writerow([f"{v:.17g}" for v in col])


def read_returns_csv(path, delta_t=1):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            ids = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        data = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(ids):
                raise ParseError(f"expected {len(ids)} fields, got {len(row)}", line=lineno)
            try:
                data.append([float(v) for v in row])
            except ValueError:
                raise ParseError("non-numeric return value", line=lineno) from None
    return ReturnMatrix(np.array(data).T, delta_t=delta_t, asset_ids=ids)


# --------------------------------------------------------------------------
# scikit-learn style estimators

class CorrelationEstimator(TransformerMixin, BaseEstimator):
    """Global correlation/covariance estimate of a return panel.

    ``fit`` takes ``X`` of shape ``(n_observations, n_assets)``. ``transform``
    normalizes new returns with the fitted means and population deviations.

    Attributes
    ----------
    mean_, scale_ : per-asset mean and population standard deviation
    correlation_, covariance_ : ndarray (n_assets, n_assets)
    effective_correlation_ : float, mean off-diagonal correlation
    """

    def __init__(self, maturity=1.0):
        self.maturity = maturity

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        rm = ReturnMatrix(X.T)
        self.mean_, self.scale_ = (v[:, 0] for v in _moments(rm.values))
        self.correlation_ = correlation_matrix(normalize_series(rm))
        self.covariance_ = covariance_matrix(rm)
        self.effective_correlation_ = (
            effective_correlation(self.correlation_)[0] if rm.K > 1 else 0.0
        )
        self.moments_ = estimate_drift_vol(rm, self.maturity)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "correlation_")
        X = check_array(X)
        return (X - self.mean_) / self.scale_


class SlidingWindowCorrelation(BaseEstimator):
    """Ensemble of correlation matrices from sliding windows.

    Parameters
    ----------
    window : int
        Window length ``T`` in observations.
    stride : int or None
        Step between window starts; ``None`` means non-overlapping windows.
    """

    def __init__(self, window=60, stride=None):
        self.window = window
        self.stride = stride

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        ens = sliding_correlation_ensemble(ReturnMatrix(X.T), self.window, self.stride)
        self.ensemble_ = ens
        self.matrices_ = ens.matrices
        self.window_starts_ = ens.window_starts
        self.skipped_windows_ = ens.skipped
        K = X.shape[1]
        self.effective_correlations_ = (
            np.array([effective_correlation(C)[0] for C in ens.matrices]) if K > 1 else np.zeros(len(ens))
        )
        self.n_features_in_ = K
        return self
