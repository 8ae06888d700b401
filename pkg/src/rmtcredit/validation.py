"""Input validation helpers shared by the estimators and functions."""

import math

import numpy as np

from .exceptions import ContractViolation, DomainError

PSD_TOL = 1e-10
C_MARGIN = 1e-6


def check_matrix(M, name="matrix", square=True):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {M.shape}")
    if square and M.shape[0] != M.shape[1]:
        raise ContractViolation(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ContractViolation(f"{name} contains non-finite entries")
    return M


def check_symmetric_psd(M, name="matrix", tol=PSD_TOL):
    """Validate a symmetric positive semidefinite matrix; return it symmetrized."""
    M = check_matrix(M, name)
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if not np.allclose(M, M.T, atol=1e-12 * scale, rtol=0):
        raise ContractViolation(f"{name} is not symmetric")
    M = 0.5 * (M + M.T)
    if M.size and np.linalg.eigvalsh(M)[0] < -tol * scale:
        raise ContractViolation(f"{name} is not positive semidefinite")
    return M


def check_correlation_param(c, name="c"):
    """Effective correlation must satisfy 0 <= c < 1 with margin 1e-6."""
    c = float(c)
    if not (0.0 <= c <= 1.0 - C_MARGIN):
        raise DomainError(f"{name}={c} outside [0, 1 - {C_MARGIN}]")
    return c


def check_n_fluct(N, name="N"):
    """Fluctuation parameter: positive real, ``math.inf`` freezes correlations."""
    N = float(N)
    if not N > 0 or math.isnan(N):
        raise DomainError(f"{name} must be positive, got {N}")
    return N


def check_alphas(alphas):
    a = np.atleast_1d(np.asarray(alphas, dtype=float))
    if np.any((a <= 0) | (a >= 1)) or not np.all(np.isfinite(a)):
        raise DomainError(f"confidence levels must lie in (0, 1), got {a.tolist()}")
    return a


def check_positive(x, name):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError(f"{name} must be strictly positive")
    return x


def psd_sqrt(S, name="covariance"):
    """Factor ``S = F F^T``: Cholesky, else eigenvalue square root.

    Negative eigenvalues above ``-PSD_TOL * max|S|`` are clipped to zero;
    anything more negative is rejected with the offending eigenvalue.
    """
    S = np.asarray(S, dtype=float)
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    lam, U = np.linalg.eigh(0.5 * (S + S.T))
    scale = max(1.0, float(np.max(np.abs(S))))
    if lam[0] < -PSD_TOL * scale:
        from .exceptions import NumericalError

        raise NumericalError(
            f"{name} is not positive semidefinite: smallest eigenvalue {lam[0]:.3e}, "
            f"largest {lam[-1]:.3e}, dimension {S.shape[0]}"
        )
    return U * np.sqrt(np.clip(lam, 0.0, None))
