"""Parametric least-squares helpers: OLS with HC1 covariance and Wald tests."""

import numpy as np
from scipy import stats

from .errors import SingularDesign

# residual rms below this multiple of the outcome rms means the regression
# interpolates the data and the sandwich covariance is pure rounding noise
_EXACT_FIT_RTOL = 1e-10


class OLSFit:
    """Coefficients, HC1 covariance and residuals of one OLS regression."""

    def __init__(self, beta, vcov, residuals, n, k, scale, y_rms, exact):
        self.beta = beta
        self.vcov = vcov
        self.residuals = residuals
        self.n = n
        self.k = k
        self.scale = scale
        self.y_rms = y_rms
        self.exact = exact


def ols_hc1(X, y):
    """OLS of y on the columns of X with heteroskedasticity-robust covariance.

    The covariance is the HC1 sandwich, n/(n-k) * (X'X)^-1 X'diag(e^2)X
    (X'X)^-1.  Columns are rescaled internally for conditioning; reported
    coefficients refer to the original columns.  Raises SingularDesign when
    the design has deficient rank.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, k = X.shape
    if n < k:
        raise SingularDesign(f"{n} rows cannot identify {k} coefficients")
    scale = np.sqrt((X * X).mean(axis=0))
    scale[scale == 0] = 1.0
    Xs = X / scale
    gram = Xs.T @ Xs
    if 1.0 / np.linalg.cond(gram) < 1e-14:
        raise SingularDesign("design matrix has deficient rank")
    gram_inv = np.linalg.inv(gram)
    beta_s = gram_inv @ (Xs.T @ y)
    resid = y - Xs @ beta_s
    meat = (Xs * resid[:, None] ** 2).T @ Xs
    dof = max(n - k, 1)
    vcov_s = gram_inv @ meat @ gram_inv * (n / dof)
    beta = beta_s / scale
    vcov = vcov_s / np.outer(scale, scale)
    y_rms = float(np.sqrt(np.mean(y * y)))
    exact = float(np.sqrt(np.mean(resid * resid))) <= _EXACT_FIT_RTOL * max(y_rms, 1e-300)
    return OLSFit(beta, vcov, resid, n, k, scale, y_rms, exact)


def wald_f(fit, R):
    """Wald F-test of R beta = 0 using the fit's covariance.

    Returns (F, (df1, df2), p) with df2 = n - k and p from the F distribution.
    Interpolating regressions are resolved exactly: restrictions that hold in
    the fitted coefficients give F = 0, violated ones F = inf.
    """
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    q = R.shape[0]
    df2 = max(fit.n - fit.k, 1)
    diff = R @ fit.beta
    if fit.exact:
        # compare the restricted combinations on the standardized scale
        std_diff = R @ (fit.beta * fit.scale)
        if np.max(np.abs(std_diff)) <= 1e-8 * max(fit.y_rms, 1e-300):
            return 0.0, (q, df2), 1.0
        return float("inf"), (q, df2), 0.0
    middle = R @ fit.vcov @ R.T
    try:
        solved = np.linalg.solve(middle, diff)
    except np.linalg.LinAlgError as exc:
        raise SingularDesign("restriction covariance is singular") from exc
    F = max(float(diff @ solved) / q, 0.0)
    p = float(stats.f.sf(F, q, df2))
    return F, (q, df2), p


def poly_design(u, order):
    """Design matrix with columns u^0 .. u^order."""
    u = np.asarray(u, dtype=np.float64)
    return np.vander(u, order + 1, increasing=True)
