"""Linear multi-cutoff estimation with cutoff fixed effects.

Fits the pooled linear model with one intercept per cutoff, a control-group
slope (common across cutoffs or cutoff-specific), and per-cutoff treatment
jumps and treated-slope interactions.  The common-slope restriction embodies
the separability that makes the control-group gap constant in the score, and
testing equality of the per-cutoff control slopes is the corresponding
specification test.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EmptyCell, IndexOutOfRange, InsufficientData
from .linmod import ols_hc1, wald_f


@dataclass
class FEModelFit:
    """Coefficients of the cutoff fixed-effects linear RD model.

    ``gamma[j]`` is the intercept for cutoff j, ``beta`` the control slope
    (length 1 when common across cutoffs, else length J), ``delta[j]`` the
    treatment jump and ``theta[j]`` the treated-slope shift for cutoff j.
    With ``centered`` scores (x minus the unit's cutoff), ``delta[j]`` is the
    effect at cutoff j itself.
    """

    gamma: np.ndarray
    beta: np.ndarray
    delta: np.ndarray
    theta: np.ndarray
    vcov: np.ndarray
    n: int
    cutoffs: tuple
    common_slope: bool
    centered: bool
    residuals: np.ndarray

    @property
    def n_coef(self):
        return len(self.gamma) + len(self.beta) + len(self.delta) + len(self.theta)

    def coef_index(self, block, j=0):
        J = len(self.cutoffs)
        offsets = {"gamma": 0, "beta": J, "delta": J + len(self.beta)}
        offsets["theta"] = offsets["delta"] + J
        sizes = {"gamma": J, "beta": len(self.beta), "delta": J, "theta": J}
        if not 0 <= j < sizes[block]:
            raise IndexOutOfRange(f"{block} index {j} out of range for J={J}")
        return offsets[block] + j

    def to_dict(self):
        return {
            "cutoffs": list(self.cutoffs),
            "gamma": list(self.gamma),
            "beta": list(self.beta),
            "delta": list(self.delta),
            "theta": list(self.theta),
            "se_gamma": [self._se("gamma", j) for j in range(len(self.gamma))],
            "se_beta": [self._se("beta", j) for j in range(len(self.beta))],
            "se_delta": [self._se("delta", j) for j in range(len(self.delta))],
            "se_theta": [self._se("theta", j) for j in range(len(self.theta))],
            "n": self.n,
            "common_slope": self.common_slope,
            "centered": self.centered,
        }

    def _se(self, block, j):
        i = self.coef_index(block, j)
        return float(np.sqrt(max(self.vcov[i, i], 0.0)))


def _design(ds, common_slope, center):
    cutoffs = ds.cutoffs
    J = len(cutoffs)
    x = ds.x - ds.c if center else ds.x
    d = ds.d
    dummies = np.column_stack([(ds.c == cut).astype(np.float64) for cut in cutoffs])
    for j, cut in enumerate(cutoffs):
        for treated in (0.0, 1.0):
            if not np.any((ds.c == cut) & (d == treated)):
                raise EmptyCell((cut, int(treated)))
    if common_slope:
        slope_cols = x[:, None]
    else:
        slope_cols = dummies * x[:, None]
    delta_cols = dummies * d[:, None]
    theta_cols = dummies * (x * d)[:, None]
    X = np.column_stack([dummies, slope_cols, delta_cols, theta_cols])
    return X, J


def fit_fe_model(ds, common_slope=True, center=True):
    """Fit the cutoff fixed-effects linear model by OLS with HC1 covariance."""
    X, J = _design(ds, common_slope, center)
    fit = ols_hc1(X, ds.y)
    n_beta = 1 if common_slope else J
    return FEModelFit(
        gamma=fit.beta[:J],
        beta=fit.beta[J:J + n_beta],
        delta=fit.beta[J + n_beta:2 * J + n_beta],
        theta=fit.beta[2 * J + n_beta:],
        vcov=fit.vcov,
        n=fit.n,
        cutoffs=ds.cutoffs,
        common_slope=common_slope,
        centered=center,
        residuals=fit.residuals,
    )


def fe_effect_at(fit, cutoff_index, xbar):
    """Treatment effect for cutoff j evaluated at score ``xbar``.

    ``delta[j] + theta[j] * xbar`` with a delta-method standard error; with a
    centered fit, ``xbar`` is measured as distance to the cutoff.
    """
    i_delta = fit.coef_index("delta", cutoff_index)
    i_theta = fit.coef_index("theta", cutoff_index)
    grad = np.zeros(fit.n_coef)
    grad[i_delta] = 1.0
    grad[i_theta] = xbar
    estimate = float(fit.delta[cutoff_index] + fit.theta[cutoff_index] * xbar)
    se = float(np.sqrt(max(grad @ fit.vcov @ grad, 0.0)))
    return estimate, se


def slope_equality_test(ds):
    """Wald F-test that the control slope is equal across all cutoffs.

    Estimates the unrestricted model (one control slope per cutoff) and
    tests the J-1 pairwise equalities against the first cutoff's slope.
    """
    J = len(ds.cutoffs)
    if J < 2:
        raise InsufficientData("slope equality needs at least 2 cutoffs")
    X, _ = _design(ds, common_slope=False, center=True)
    fit = ols_hc1(X, ds.y)
    k = X.shape[1]
    R = np.zeros((J - 1, k))
    for r in range(J - 1):
        R[r, J] = 1.0           # slope of the first cutoff
        R[r, J + 1 + r] = -1.0  # slope of cutoff r+1
    return wald_f(fit, R)
