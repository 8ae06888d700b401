"""Merton credit losses averaged over fluctuating correlations.

Asset ``k`` defaults at maturity ``T`` when its value falls below the face
value ``F_k``; the normalized loss is ``(F_k - V_k(T)) / F_k``. With the
log-return ``X_k = ln(V_k(T)/V_k0) - drift_k`` the model writes

    X_k = sqrt(z/N) * rho_k sqrt(T) * (sqrt(c) xi_0 + sqrt(1-c) xi_k),

``z ~ chi2_N`` and standard normal ``xi``. Conditionally on ``z`` and the
common factor ``u = -xi_0 / sqrt(N)`` the contract losses are independent,
which gives the conditional moments ``m_jk(z, u)`` in closed form and, for
large portfolios, a Gaussian loss kernel with mean ``M1`` and variance
``M2`` averaged over ``(z, u)``.

Internally the quadrature runs in the standardized variables
``zeta = z / N`` and ``w = sqrt(N) u`` so that ``N = inf`` is the point
mass ``zeta = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import gammaln, log_ndtr, ndtr, roots_genlaguerre

from .exceptions import ContractViolation, DomainError, NumericalError
from .validation import check_alphas, check_correlation_param, check_n_fluct

DRIFT_CONVENTIONS = ("ito", "log")


@dataclass
class PortfolioSpec:
    """Zero-coupon credit portfolio on geometric-Brownian asset values.

    Parameters
    ----------
    face_values, initial_values, drifts, vols : array_like, shape (K,)
        Scalars are broadcast to ``K`` contracts when ``K`` is given.
    maturity : float
        Maturity ``T`` in the time unit of ``drifts`` and ``vols``.
    drift_convention : {"ito", "log"}
        ``"ito"``: ``ln V(T)`` has mean ``ln V0 + (mu - rho^2/2) T``, i.e.
        ``mu`` is the drift of ``dV/V``. ``"log"``: ``mu`` is the drift of
        ``ln V`` and the mean is ``ln V0 + mu T``.
    """

    face_values: np.ndarray
    initial_values: np.ndarray
    drifts: np.ndarray
    vols: np.ndarray
    maturity: float = 1.0
    drift_convention: str = "ito"
    K: int = None

    def __post_init__(self):
        arrays = [np.atleast_1d(np.asarray(a, dtype=float)) for a in
                  (self.face_values, self.initial_values, self.drifts, self.vols)]
        K = self.K if self.K is not None else max(len(a) for a in arrays)
        try:
            arrays = [np.broadcast_to(a, (int(K),)).copy() for a in arrays]
        except ValueError:
            raise ContractViolation("portfolio parameter arrays have inconsistent lengths") from None
        self.face_values, self.initial_values, self.drifts, self.vols = arrays
        self.K = int(K)
        if np.any(~(self.face_values > 0)) or np.any(~(self.initial_values > 0)):
            raise DomainError("face and initial values must be positive")
        if np.any(~(self.vols >= 0)):
            raise DomainError("volatilities must be non-negative")
        if not self.maturity > 0:
            raise DomainError("maturity must be positive")
        if self.drift_convention not in DRIFT_CONVENTIONS:
            raise ValueError(f"drift_convention must be one of {DRIFT_CONVENTIONS}")

    @classmethod
    def homogeneous(cls, K, F=75.0, V0=100.0, mu=0.17, rho=0.35, maturity=1.0, drift_convention="ito"):
        return cls(F, V0, mu, rho, maturity, drift_convention, K=K)

    @property
    def weights(self):
        return self.face_values / self.face_values.sum()

    @property
    def drift_term(self):
        if self.drift_convention == "ito":
            return (self.drifts - 0.5 * self.vols**2) * self.maturity
        return self.drifts * self.maturity

    @property
    def log_threshold(self):
        """Default happens iff the log-return ``X_k`` is below this value."""
        return np.log(self.face_values / self.initial_values) - self.drift_term

    @property
    def horizon_vols(self):
        return self.vols * math.sqrt(self.maturity)

    @property
    def is_homogeneous(self):
        return all(np.all(a == a[0]) for a in
                   (self.face_values, self.initial_values, self.drifts, self.vols))

    def subset(self, idx):
        idx = np.asarray(idx)
        return PortfolioSpec(self.face_values[idx], self.initial_values[idx], self.drifts[idx],
                             self.vols[idx], self.maturity, self.drift_convention)


@dataclass
class LossDensityCurve:
    grid: np.ndarray
    density: np.ndarray
    params: dict
    normalization_defect: float
    metadata: dict = field(default_factory=dict)
    cdf: np.ndarray = None

    def to_dict(self):
        return {"params": self.params, "normalization_defect": self.normalization_defect,
                "metadata": self.metadata}


# --------------------------------------------------------------------------
# single contract and portfolio

def contract_loss(V_T, F):
    """Normalized loss ``(F - V_T)/F`` if ``V_T < F`` else 0."""
    F = np.asarray(F, dtype=float)
    if np.any(~(F > 0)):
        raise DomainError("face value must be positive")
    V_T = np.asarray(V_T, dtype=float)
    out = np.where(V_T < F, (F - V_T) / F, 0.0)
    return out if out.ndim else float(out)


def portfolio_loss(losses, spec):
    """Face-value weighted sum of contract losses (last axis = contracts)."""
    losses = np.asarray(losses, dtype=float)
    if np.any(losses < 0) or np.any(losses > 1):
        raise DomainError("contract losses must lie in [0, 1]")
    out = losses @ spec.weights
    return out if np.ndim(out) else float(out)


def default_probability(spec, k=None):
    """Merton default probability ``P(V_k(T) < F_k)`` without fluctuations."""
    theta = spec.log_threshold
    s = spec.horizon_vols
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(s > 0, ndtr(theta / np.where(s > 0, s, 1.0)), (theta > 0).astype(float))
    return float(p[k]) if k is not None else p


# --------------------------------------------------------------------------
# conditional moments

def _cond_moments(theta, sig, c, zeta, w, derivative=False):
    """``m1``, ``m2`` (and ``dm1/dw``) given ``zeta = z/N`` and ``w = sqrt(N) u``.

    Conditionally ``X ~ Normal(-sqrt(zeta c) sig w, zeta (1-c) sig^2)``. The
    closed forms are assembled in log space with ``expm1`` so that tiny
    default probabilities keep full relative precision.
    """
    theta, sig, zeta, w = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (theta, sig, zeta, w)))
    mean = -np.sqrt(zeta * c) * sig * w
    var = zeta * (1.0 - c) * sig**2
    sd = np.sqrt(var)
    live = sd > 0
    sd_safe = np.where(live, sd, 1.0)
    beta = (theta - mean) / sd_safe
    lp0 = log_ndtr(beta)
    la = mean + 0.5 * var - theta
    lp1 = log_ndtr(beta - sd_safe)
    lp2 = log_ndtr(beta - 2.0 * sd_safe)
    with np.errstate(invalid="ignore", over="ignore"):
        d1 = np.expm1(la + lp1 - lp0)
        d2 = np.expm1(2.0 * la + var + lp2 - lp0)
        p0 = np.exp(lp0)
        m1 = p0 * -d1
        m2 = p0 * (-2.0 * d1 + d2)
    # degenerate: deterministic log-return equal to the mean
    det_loss = np.maximum(-np.expm1(mean - theta), 0.0)
    m1 = np.where(live, np.clip(m1, 0.0, 1.0), det_loss)
    m2 = np.where(live, np.clip(m2, 0.0, 1.0), det_loss**2)
    if not derivative:
        return m1, m2
    kappa = np.sqrt(zeta * c) * sig
    with np.errstate(divide="ignore", over="ignore"):
        log_dm1 = np.where(live & (kappa > 0), np.log(np.where(kappa > 0, kappa, 1.0)) + la + lp1, -np.inf)
    return m1, m2, log_dm1


def _moment_quad(j, theta, sig, c, zeta, w):
    mean = -math.sqrt(zeta * c) * sig * w
    sd = math.sqrt(zeta * (1.0 - c)) * sig
    if sd == 0:
        return max(-math.expm1(mean - theta), 0.0) ** j

    def f(x):
        return (-math.expm1(x - theta)) ** j * math.exp(-0.5 * ((x - mean) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))

    lo = min(theta, mean) - 40.0 * sd
    val, _ = integrate.quad(f, lo, theta, epsabs=1e-14, epsrel=1e-12, limit=400,
                            points=[mean] if lo < mean < theta else None)
    return val


def moment_mjk(j, z, u, c, N, spec, k=0, method="closed"):
    """Conditional moment ``m_jk(z, u) = E[L_k^j | z, u]``.

    ``z > 0`` is the chi-squared variable and ``u`` the common factor with
    weight ``exp(-N u^2 / 2)``. ``method="closed"`` (``j`` in {1, 2}) uses the
    normal-CDF expansion, ``"quad"`` integrates numerically (any ``j``).
    """
    c = check_correlation_param(c)
    N = check_n_fluct(N)
    if math.isinf(N):
        raise DomainError("moment_mjk uses the (z, u) parametrization and needs finite N")
    z_arr = np.asarray(z, dtype=float)
    if np.any(~(z_arr > 0)):
        raise DomainError("z must be positive")
    theta = spec.log_threshold[k]
    sig = spec.horizon_vols[k]
    zeta = z_arr / N
    w = np.asarray(u, dtype=float) * math.sqrt(N)
    if method == "closed":
        if j not in (1, 2):
            method = "quad"
        else:
            m = _cond_moments(theta, sig, c, zeta, w)[j - 1]
            return float(m) if m.ndim == 0 else m
    if method != "quad":
        raise ValueError(f"unknown method {method!r}")
    vec = np.vectorize(lambda zz, ww: _moment_quad(j, theta, sig, c, zz, ww))
    out = vec(zeta, w)
    return float(out) if np.ndim(out) == 0 else out


def _portfolio_moments_std(spec, c, zeta, w, derivative=False):
    """``M1``, ``M2`` on arrays of ``(zeta, w)``; contracts summed out."""
    f = spec.weights
    if spec.is_homogeneous:
        res = _cond_moments(spec.log_threshold[0], spec.horizon_vols[0], c, zeta, w, derivative)
        m1, m2 = res[0], res[1]
        M1 = m1
        M2 = np.maximum(m2 - m1**2, 0.0) * float(np.sum(f**2))
        if derivative:
            return M1, M2, np.exp(res[2])
        return M1, M2
    zeta = np.asarray(zeta, dtype=float)[..., None]
    w = np.asarray(w, dtype=float)[..., None]
    res = _cond_moments(spec.log_threshold, spec.horizon_vols, c, zeta, w, derivative)
    m1, m2 = res[0], res[1]
    M1 = m1 @ f
    M2 = np.maximum(m2 - m1**2, 0.0) @ (f**2)
    if derivative:
        return M1, M2, np.exp(res[2]) @ f
    return M1, M2


def portfolio_moments(z, u, spec, c, N):
    """``M1 = sum f_k m_1k`` and ``M2 = sum f_k^2 (m_2k - m_1k^2)``."""
    c = check_correlation_param(c)
    N = check_n_fluct(N)
    if math.isinf(N):
        raise DomainError("portfolio_moments uses the (z, u) parametrization and needs finite N")
    zeta = np.asarray(z, dtype=float) / N
    w = np.asarray(u, dtype=float) * math.sqrt(N)
    M1, M2 = _portfolio_moments_std(spec, c, zeta, w)
    return M1, M2


# --------------------------------------------------------------------------
# quadrature nodes

def chi2_scale_nodes(N, n):
    """Nodes ``zeta = z/N`` and weights for ``E[g(z/N)]``, ``z ~ chi2_N``.

    Generalized Gauss-Laguerre for the weight ``x^(N/2-1) e^(-x)`` with
    ``z = 2x``; ``N = inf`` is the single node ``zeta = 1``.
    """
    if math.isinf(N):
        return np.ones(1), np.ones(1)
    x, wts = roots_genlaguerre(int(n), 0.5 * N - 1.0)
    return 2.0 * x / N, np.exp(np.log(wts) - gammaln(0.5 * N))


def _std_normal_pdf(w):
    return np.exp(-0.5 * w * w) / math.sqrt(2.0 * math.pi)


# --------------------------------------------------------------------------
# loss densities

W_RANGE = 8.5


def _u_resolution(spec, c, zetas, L_floor, n_probe=801):
    """Trapezoid step in ``w`` that resolves the narrowest Gaussian kernel."""
    wp = np.linspace(-W_RANGE, W_RANGE, n_probe)
    widths = []
    for zeta in zetas:
        M1, M2, dM1 = _portfolio_moments_std(spec, c, np.full_like(wp, zeta), wp, derivative=True)
        ok = (M1 > L_floor) & (M1 < 1.0) & (dM1 > 0) & (M2 > 0)
        if np.any(ok):
            widths.append(np.min(np.sqrt(M2[ok]) / dM1[ok]))
    return min(widths) if widths else 2.0 * W_RANGE / (n_probe - 1)


def avg_loss_density(L, spec, c, N, n_z=64, n_w=None, max_w=60001):
    """Fluctuation-averaged portfolio loss density for finite ``K``.

    Parameters
    ----------
    L : array_like
        Ascending grid in [0, 1].
    spec : PortfolioSpec
    c : float
        Effective correlation, ``0 <= c < 1``.
    N : float
        Fluctuation parameter (``math.inf`` for fixed correlations).
    n_z : int
        Generalized Gauss-Laguerre nodes for the chi-squared average.
    n_w : int or None
        Trapezoid nodes for the common factor on ``[-8.5, 8.5]`` standard
        deviations. ``None`` chooses a step of a quarter of the narrowest
        kernel width, at least 801 nodes.

    Notes
    -----
    The large-K Gaussian kernel carries no point mass at ``L = 0``. Scenarios
    without defaults put their mass in narrow kernels centred at zero, half of
    which lies below ``L = 0``; ``metadata["mass_below_zero"]`` reports it and
    the returned ``cdf`` counts it as zero loss. ``normalization_defect`` is
    ``|1 - total kernel mass|`` with the printed chi-squared and Gaussian
    constants, which checks them together with the quadrature truncation.
    The trapezoid integral of the tabulated density is in
    ``metadata["grid_integral"]``; it is unreliable when kernels are much
    narrower than the grid spacing, which is why the exact ``cdf`` is kept.
    """
    L = np.asarray(L, dtype=float)
    if L.ndim != 1 or np.any(np.diff(L) <= 0) or L[0] < 0 or L[-1] > 1:
        raise ContractViolation("L grid must be ascending within [0, 1]")
    c = check_correlation_param(c)
    N = check_n_fluct(N)
    zetas, zw = chi2_scale_nodes(N, n_z)
    pos = L[L > 0]
    L_floor = 0.25 * pos[0] if pos.size else 1e-6
    if n_w is None:
        h = _u_resolution(spec, c, zetas, L_floor) / 4.0
        n_w = int(np.clip(math.ceil(2 * W_RANGE / h) + 1, 801, max_w))
    w = np.linspace(-W_RANGE, W_RANGE, n_w)
    ww = _std_normal_pdf(w) * (w[1] - w[0])
    ww[[0, -1]] *= 0.5

    density = np.zeros_like(L)
    cdf = np.zeros_like(L)
    total = 0.0
    below = 0.0
    spike_mass = 0.0
    for zeta, wz in zip(zetas, zw):
        M1, M2 = _portfolio_moments_std(spec, c, np.full_like(w, zeta), w)
        weight = wz * ww
        total += float(np.sum(weight))
        sharp = M2 < 1e-300
        spike_mass += float(np.sum(weight[sharp]))
        cdf += (M1[sharp][None, :] <= L[:, None]) @ weight[sharp]
        keep = ~sharp & (weight > 0)
        m1, sd, wt = M1[keep], np.sqrt(M2[keep]), weight[keep]
        below += float(np.sum(wt * ndtr(-m1 / sd))) + float(np.sum(weight[sharp & (M1 <= 0)]))
        chunk = max(1, 4_000_000 // max(len(L), 1))
        for i in range(0, len(m1), chunk):
            s = slice(i, i + chunk)
            zed = (L[:, None] - m1[None, s]) / sd[None, s]
            density += np.exp(-0.5 * zed * zed) @ (wt[s] / (sd[s] * math.sqrt(2.0 * math.pi)))
            cdf += ndtr(zed) @ wt[s]
    params = dict(c=c, N=N, K=spec.K, n_z=int(len(zetas)), n_w=int(n_w), w_range=W_RANGE)
    meta = dict(total_mass=total, mass_below_zero=below, mass_in_grid=float(cdf[-1] - cdf[0]),
                spike_mass=spike_mass, grid_integral=float(np.trapezoid(density, L)),
                method="gauss-laguerre x trapezoid")
    return LossDensityCurve(L, density, params, abs(1.0 - total), meta, np.clip(cdf, 0.0, None))


def _m1_and_logslope(theta, sig, c, zeta, w):
    m1, _, log_dm1 = _cond_moments(theta, sig, c, zeta, w, derivative=True)
    return m1, log_dm1


def limiting_loss_density(L, spec, c, N, n_z=64, bracket=12.0, expansions=4):
    """Loss density of a homogeneous portfolio in the limit ``K -> inf``.

    For each chi-squared node the conditional expected loss ``m1`` is a
    strictly increasing function of the common factor; the density is the
    image of the factor's normal law, ``phi(w0) / (dm1/dw)(w0)`` at the root
    ``m1(w0) = L``, averaged over the nodes. The same roots give the exact
    distribution function ``E[Phi(w0)]``, returned as ``cdf``.
    """
    L = np.asarray(L, dtype=float)
    if not spec.is_homogeneous:
        raise ContractViolation("the K -> inf limit is implemented for homogeneous portfolios")
    c = check_correlation_param(c)
    N = check_n_fluct(N)
    if c == 0.0:
        raise DomainError("the limiting density needs c > 0 (m1 does not depend on u at c = 0)")
    theta, sig = spec.log_threshold[0], spec.horizon_vols[0]
    zetas, zw = chi2_scale_nodes(N, n_z)
    sqrtN = math.sqrt(N) if math.isfinite(N) else math.inf

    inside = (L > 0) & (L < 1)
    Li = L[inside]
    density = np.zeros_like(L)
    acc = np.zeros_like(Li)
    cdf = np.zeros_like(L)
    total = 0.0
    max_res = 0.0
    singular = 0
    unbracketed = 0
    probe = np.linspace(-bracket, bracket, 257)
    for zeta, wz in zip(zetas, zw):
        mp, _ = _m1_and_logslope(theta, sig, c, zeta, probe)
        live = (mp > 1e-300) & (mp < 1.0 - 1e-16)
        if np.any(np.diff(mp[live]) < -1e-15):
            raise NumericalError(f"m1 is not monotone in u at z/N={zeta:.6g}")
        B = bracket
        lo_v = _m1_and_logslope(theta, sig, c, zeta, -B)[0]
        hi_v = _m1_and_logslope(theta, sig, c, zeta, B)[0]
        for _ in range(expansions):
            if np.all((Li >= lo_v) & (Li <= hi_v)):
                break
            B *= 2.0
            lo_v = _m1_and_logslope(theta, sig, c, zeta, -B)[0]
            hi_v = _m1_and_logslope(theta, sig, c, zeta, B)[0]
        ok = (Li > lo_v) & (Li < hi_v)
        unbracketed += int(np.sum(~ok))
        total += wz
        lo = np.full(Li.shape, -B)
        hi = np.full(Li.shape, B)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            below = _m1_and_logslope(theta, sig, c, zeta, mid)[0] < Li
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= 4e-16 * np.maximum(1.0, np.abs(mid))):
                break
        w0 = 0.5 * (lo + hi)
        m1, log_slope = _m1_and_logslope(theta, sig, c, zeta, w0)
        res = np.abs(m1 - Li)
        good = ok & (res < 1e-10)
        # slope in the original u units is sqrt(N) times the w slope
        slope_u = np.exp(log_slope) * (sqrtN if math.isfinite(sqrtN) else 1.0)
        flat = good & (slope_u < 1e-14) & math.isfinite(sqrtN)
        singular += int(np.sum(flat))
        good &= ~flat
        if np.any(good):
            max_res = max(max_res, float(np.max(res[good])))
        contrib = np.where(good, np.exp(-0.5 * w0 * w0 - 0.5 * math.log(2 * math.pi) - log_slope), 0.0)
        acc += wz * contrib
        # m1 increases with w, so P(L_inf <= L | zeta) = Phi(w0)
        F = np.where(ok, ndtr(w0), np.where(Li >= hi_v, 1.0, 0.0))
        cdf[inside] += wz * F
        cdf[L >= 1] += wz
    density[inside] = acc
    params = dict(c=c, N=N, K="inf", n_z=int(len(zetas)))
    meta = dict(total_mass=total, max_root_residual=max_res, singular_points=singular,
                unbracketed_points=unbracketed, grid_integral=float(np.trapezoid(density, L)),
                method="gauss-laguerre x implicit root")
    return LossDensityCurve(L, density, params, abs(1.0 - total), meta, cdf)


# --------------------------------------------------------------------------
# risk measures from a tabulated density

def _segment_cdf_inverse(a, b, p0, p1, target):
    """Solve ``p0 t + (p1 - p0) t^2 / (2h) = target`` on ``[a, b]``."""
    h = b - a
    s = (p1 - p0) / h
    if abs(s) * h < 1e-14 * max(abs(p0), 1e-300):
        t = target / p0 if p0 > 0 else 0.0
    else:
        disc = max(p0 * p0 + 2.0 * s * target, 0.0)
        t = 2.0 * target / (p0 + math.sqrt(disc)) if p0 + math.sqrt(disc) > 0 else 0.0
    return a + min(max(t, 0.0), h)


def _tail_moments(L, p, x):
    """Mass and first moment of the piecewise-linear density on ``[x, L[-1]]``."""
    mass = 0.0
    first = 0.0
    for i in range(len(L) - 1):
        a, b = L[i], L[i + 1]
        if b <= x:
            continue
        pa, pb = p[i], p[i + 1]
        s = (pb - pa) / (b - a)
        if a < x:
            pa = pa + s * (x - a)
            a = x
        mass += 0.5 * (pa + pb) * (b - a)
        first += pa * (b * b - a * a) / 2.0 + s * ((b**3 - a**3) / 3.0 - a * (b * b - a * a) / 2.0)
    return mass, first


def _risk_from_cdf(L, F, alphas):
    out = {}
    F = np.maximum.accumulate(np.clip(F, 0.0, 1.0))
    top = F[-1]
    for a in alphas:
        if F[0] >= a:
            var = float(L[0])
        else:
            i = min(int(np.searchsorted(F, a, side="left")), len(L) - 1)
            f0, f1 = F[i - 1], F[i]
            t = (a - f0) / (f1 - f0) if f1 > f0 else 1.0
            var = float(L[i - 1] + t * (L[i] - L[i - 1]))
        j = int(np.searchsorted(L, var, side="right"))
        Fv = float(np.interp(var, L, F))
        Ls = np.concatenate([[var], L[j:]])
        Fs = np.concatenate([[Fv], F[j:]])
        tail = top - Fv
        if tail > 1e-300:
            # integral of L dF over [var, L_max] by parts
            etl = (L[-1] * top - var * Fv - np.trapezoid(Fs, Ls)) / tail
        else:
            etl = var
        out[float(a)] = (var, float(min(max(etl, var), L[-1])))
    return out


def risk_measures_from_curve(curve, alphas=(0.99, 0.995, 0.999), atom_at_zero=True):
    """VaR and ETL from a loss curve.

    When the curve carries its distribution function (``curve.cdf``) it is
    inverted directly; mass below the grid, i.e. the no-default scenarios of
    the large-K kernel, counts as zero loss. Otherwise the density is taken
    piecewise linear between grid points and its piecewise quadratic CDF is
    inverted exactly. In that case ``atom_at_zero`` assigns the mass missing
    from the grid to ``L = 0``; without it the curve is renormalized, which
    requires a normalization defect below 1e-2.

    Returns
    -------
    dict
        Maps each alpha to ``(VaR, ETL)``.
    """
    alphas = check_alphas(alphas)
    if curve.normalization_defect >= 1e-2:
        raise ContractViolation(f"normalization defect {curve.normalization_defect:.3g} >= 1e-2")
    L = np.asarray(curve.grid, dtype=float)
    if curve.cdf is not None:
        F = np.asarray(curve.cdf, dtype=float) / curve.metadata.get("total_mass", 1.0)
        return _risk_from_cdf(L, F, alphas)
    p = np.maximum(np.asarray(curve.density, dtype=float), 0.0)
    seg = 0.5 * (p[1:] + p[:-1]) * np.diff(L)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if not total > 0:
        raise NumericalError("loss density has no mass on the grid")
    if atom_at_zero:
        base = max(0.0, 1.0 - total)
        norm = max(total + base, 1.0)
    else:
        if abs(1.0 - total) >= 1e-2:
            raise ContractViolation(f"grid normalization defect {abs(1 - total):.3g} >= 1e-2")
        base, norm = 0.0, total
    out = {}
    for a in alphas:
        target = a * norm - base
        if target <= 0:
            var = float(L[0])
        else:
            i = int(np.searchsorted(cum, target, side="left"))
            i = min(max(i, 1), len(L) - 1)
            var = _segment_cdf_inverse(L[i - 1], L[i], p[i - 1], p[i], target - cum[i - 1])
        mass, first = _tail_moments(L, p, var)
        etl = first / mass if mass > 1e-300 else var
        out[float(a)] = (float(var), float(max(etl, var)))
    return out
