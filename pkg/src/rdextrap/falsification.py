"""Diagnostics probing whether the two control groups run in parallel.

Both tests look only at scores strictly below the lower cutoff, where both
groups are untreated.  The global test fits one polynomial regression with
group interactions and tests that the interaction block vanishes; the local
test compares nonparametric first-derivative estimates of the two groups'
regression functions over a grid of points.
"""

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial

from .dataset import CutoffPair
from .errors import InsufficientData
from .linmod import ols_hc1, poly_design, wald_f
from .locfit import FitSpec, local_fit, normal_quantile, rbc_interval


@dataclass
class GlobalTrendResult:
    """Joint F-test that the two control groups' regressions are parallel."""

    alpha: float                 # base-group intercept
    beta: float                  # high-group intercept shift
    gamma: np.ndarray            # polynomial coefficients, powers 1..p
    delta: np.ndarray            # high-group interaction coefficients, powers 1..p
    F_stat: float
    df: tuple
    p_value: float
    n_used: int
    order: int
    joint: bool                  # whether the intercept shift is in the null
    covariance: str = "HC1"

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": list(self.gamma),
            "delta": list(self.delta),
            "F_stat": self.F_stat,
            "df": list(self.df),
            "p_value": self.p_value,
            "n_used": self.n_used,
            "order": self.order,
            "joint": self.joint,
            "covariance": self.covariance,
        }


def global_parallel_test(ds, pair, order=2, include_intercept_shift=False):
    """Global polynomial test of parallel control regressions below ``low``.

    Regresses the outcome on a polynomial in the score, a high-group dummy
    and the dummy's interactions with the polynomial, using only rows with
    scores below the low cutoff.  Tests the interaction coefficients jointly
    (``include_intercept_shift`` adds the dummy itself to the null, turning a
    parallelism test into an equality test).  Inference uses HC1-robust
    covariance.
    """
    pair = pair if isinstance(pair, CutoffPair) else CutoffPair(*pair)
    pair.validate(ds)
    low_rows = ds.subset(cutoff=(pair.low, pair.high), window=(-np.inf, pair.low))
    # strictly below the low cutoff
    keep = low_rows.x < pair.low
    x = low_rows.x[keep]
    y = low_rows.y[keep]
    g = (low_rows.c[keep] == pair.high).astype(np.float64)
    for label, m in (("low", int(np.sum(g == 0))), ("high", int(np.sum(g == 1)))):
        if m < order + 2:
            raise InsufficientData(
                f"group {label} has {m} rows below the low cutoff; needs {order + 2}"
            )

    # center and scale the score for conditioning; coefficients are mapped
    # back to the raw-score parametrization afterwards
    center = pair.low
    scale = float(np.std(x)) or 1.0
    u = (x - center) / scale
    base = poly_design(u, order)
    X = np.column_stack([base, g[:, None] * base])
    fit = ols_hc1(X, y)

    k = order + 1
    if include_intercept_shift:
        sel = np.arange(k, 2 * k)          # dummy and all interactions
    else:
        sel = np.arange(k + 1, 2 * k)      # interactions only
    R = np.zeros((sel.size, 2 * k))
    R[np.arange(sel.size), sel] = 1.0
    F, df, p = wald_f(fit, R)

    base_poly = _to_raw_poly(fit.beta[:k], center, scale)
    shift_poly = _to_raw_poly(fit.beta[k:], center, scale)
    return GlobalTrendResult(
        alpha=float(base_poly[0]),
        beta=float(shift_poly[0]),
        gamma=np.asarray(base_poly[1:]),
        delta=np.asarray(shift_poly[1:]),
        F_stat=F,
        df=df,
        p_value=p,
        n_used=int(x.size),
        order=order,
        joint=include_intercept_shift,
    )


def _to_raw_poly(coefs, center, scale):
    """Re-expand a polynomial in (x - center)/scale into powers of x."""
    inner = Polynomial([-center / scale, 1.0 / scale])
    raw = Polynomial([0.0])
    for j, cj in enumerate(coefs):
        raw = raw + cj * inner**j
    out = np.zeros(len(coefs))
    out[: len(raw.coef)] = raw.coef[: len(coefs)]
    return out


@dataclass
class DerivPoint:
    x: float
    diff: float
    diff_rbc: float
    se_rbc: float
    ci_rbc: tuple
    reject: bool
    error: str = None

    @property
    def ok(self):
        return self.error is None

    def to_dict(self):
        return {
            "x": self.x,
            "diff": self.diff,
            "diff_rbc": self.diff_rbc,
            "se_rbc": self.se_rbc,
            "ci_rbc": list(self.ci_rbc) if self.ci_rbc else None,
            "reject": self.reject,
            "error": self.error,
        }


@dataclass
class DerivTestResult:
    """Pointwise comparison of control-group derivatives below ``low``."""

    grid: tuple
    points: tuple
    sup_stat: float
    any_reject: bool
    level: float

    @property
    def diffs(self):
        return [pt.diff for pt in self.points]

    def to_dict(self):
        return {
            "grid": list(self.grid),
            "points": [pt.to_dict() for pt in self.points],
            "sup_stat": self.sup_stat,
            "any_reject": self.any_reject,
            "level": self.level,
        }


GRID_POINTS = 10
GRID_TRIM = 0.05


def _auto_grid(x_low, x_high, low):
    lo = max(np.quantile(x_low, GRID_TRIM), np.quantile(x_high, GRID_TRIM))
    hi = min(np.quantile(x_low, 1 - GRID_TRIM), np.quantile(x_high, 1 - GRID_TRIM))
    hi = min(hi, np.nextafter(low, -np.inf))
    if not lo < hi:
        raise InsufficientData("control groups share no score range below the low cutoff")
    return np.linspace(lo, hi, GRID_POINTS)


def local_derivative_test(ds, pair, grid="auto", level=0.95, kernel="triangular",
                          bandwidth="auto"):
    """Derivative-equality test from local quadratic fits, group by group.

    At each grid point strictly below the low cutoff the two groups'
    first derivatives are estimated by local quadratic regression with their
    own bandwidths; the difference is reported with robust bias-corrected
    pointwise confidence intervals.  Points where either fit fails are
    flagged and skipped.
    """
    pair = pair if isinstance(pair, CutoffPair) else CutoffPair(*pair)
    pair.validate(ds)
    below = (-np.inf, np.nextafter(pair.low, -np.inf))
    view_low = ds.subset(cutoff=pair.low, window=below)
    view_high = ds.subset(cutoff=pair.high, window=below)
    if len(view_low) == 0 or len(view_high) == 0:
        raise InsufficientData("a control group has no rows below the low cutoff")

    if isinstance(grid, str) and grid == "auto":
        grid = _auto_grid(view_low.x, view_high.x, pair.low)
    grid = np.asarray(list(grid), dtype=np.float64)
    if np.any(grid >= pair.low):
        raise InsufficientData("grid points must lie strictly below the low cutoff")

    z = normal_quantile(level)
    spec = FitSpec(p=2, deriv=1, kernel=kernel, h=bandwidth, side="both")
    points = []
    for x0 in grid:
        try:
            f_lo = local_fit(view_low, spec, x0)
            f_hi = local_fit(view_high, spec, x0)
            r_lo = rbc_interval(f_lo, view_low, level=level)
            r_hi = rbc_interval(f_hi, view_high, level=level)
        except InsufficientData as exc:
            points.append(DerivPoint(float(x0), math.nan, math.nan, math.nan,
                                     None, False, error=str(exc)))
            continue
        diff = f_lo.estimate - f_hi.estimate
        diff_rbc = r_lo.estimate_rbc - r_hi.estimate_rbc
        se_rbc = math.sqrt(r_lo.se_rbc**2 + r_hi.se_rbc**2)
        ci = (diff_rbc - z * se_rbc, diff_rbc + z * se_rbc)
        reject = bool(abs(diff_rbc) > z * se_rbc) if se_rbc > 0 else diff_rbc != 0
        points.append(DerivPoint(float(x0), diff, diff_rbc, se_rbc, ci, reject))

    stats_ok = [abs(pt.diff_rbc) / pt.se_rbc for pt in points if pt.ok and pt.se_rbc > 0]
    sup_stat = max(stats_ok) if stats_ok else math.nan
    any_reject = any(pt.reject for pt in points if pt.ok)
    return DerivTestResult(
        grid=tuple(float(v) for v in grid),
        points=tuple(points),
        sup_stat=sup_stat,
        any_reject=any_reject,
        level=level,
    )
