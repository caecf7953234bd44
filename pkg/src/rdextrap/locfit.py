"""Kernel-weighted local polynomial regression engine.

Provides point and derivative estimation at a single evaluation point with
per-observation smoother weights, heteroskedasticity-robust variance based on
nearest-neighbor residual variances, a deterministic plug-in selector for the
MSE-optimal bandwidth, robust bias-corrected (RBC) inference, and the
covariance between two fits sharing observations.

Conventions: a fit of order ``p`` with derivative order ``nu`` solves the
weighted least squares problem on the basis ``(x_i - x0)^j / h^j`` (scaling by
the bandwidth keeps the normal equations well conditioned) and reports
``estimate = nu! * beta_nu``, the nu-th derivative of the regression function
at ``x0``.  The smoother weight vector ``w`` satisfies
``estimate = sum_i w_i y_i`` over the rows of the fitted view.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg as sla
from scipy import stats

from .errors import InsufficientData, MismatchedViews, NonpositiveBandwidth
from .kernels import KERNEL_NAMES, kernel_weights, moment_matrices

SIDES = ("left", "right", "both")

# reject weighted designs whose condition number exceeds this
MAX_DESIGN_CONDITION = 1e10

# weight on the curvature estimate's sampling variance in the plug-in
# bandwidth denominator (0 disables the regularization)
CURVATURE_REGULARIZATION = 3.0


@dataclass(frozen=True)
class FitSpec:
    """Configuration of one local polynomial fit."""

    p: int = 1
    deriv: int = 0
    kernel: str = "triangular"
    h: float | str = "auto"
    side: str = "both"

    def __post_init__(self):
        if self.p < 0:
            raise ValueError("polynomial order must be >= 0")
        if not 0 <= self.deriv <= self.p:
            raise ValueError("derivative order must satisfy 0 <= deriv <= p")
        if self.kernel not in KERNEL_NAMES:
            raise ValueError(f"kernel must be one of {KERNEL_NAMES}")
        if self.side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}")
        if self.h != "auto":
            if not np.isfinite(self.h) or self.h <= 0:
                raise NonpositiveBandwidth(f"bandwidth must be positive, got {self.h}")


@dataclass
class BandwidthSelection:
    """Outcome of the plug-in bandwidth search, with diagnostic flags."""

    h: float
    flags: tuple = ()
    curvature: float = float("nan")
    sigma2_pilot: float = float("nan")
    density: float = float("nan")
    n_side: int = 0


@dataclass
class LocalFit:
    """Result of one kernel-weighted polynomial fit at one point."""

    x0: float
    beta: np.ndarray
    estimate: float
    weights: np.ndarray
    variance: float
    h_used: float
    n_eff: int
    residuals: np.ndarray
    window: np.ndarray          # positions (within the view) of in-window rows
    spec: FitSpec = None
    view: object = None
    sigma2: np.ndarray = None   # per-row variance actually used
    bandwidth_flags: tuple = ()
    # solver internals kept for bias correction
    _design: np.ndarray = field(default=None, repr=False)
    _kweights: np.ndarray = field(default=None, repr=False)
    _chol: tuple = field(default=None, repr=False)
    _coef_weights: np.ndarray = field(default=None, repr=False)

    @property
    def se(self):
        return math.sqrt(self.variance)


@dataclass
class RBCResult:
    """Conventional and robust bias-corrected interval for one fit."""

    estimate: float
    se_conventional: float
    ci_conventional: tuple
    estimate_rbc: float
    se_rbc: float
    ci_rbc: tuple
    p_rbc: float
    bias_estimate: float
    level: float
    weights_rbc: np.ndarray = field(repr=False, default=None)
    sigma2: np.ndarray = field(repr=False, default=None)


def _side_positions(view, side, x0):
    x = view.x
    if side == "left":
        return np.flatnonzero(x < x0)
    if side == "right":
        return np.flatnonzero(x >= x0)
    return np.arange(len(x))


def local_fit(view, spec, x0):
    """Fit a kernel-weighted polynomial of order ``spec.p`` at ``x0``.

    The view's rows are filtered by ``spec.side`` relative to ``x0`` before
    kernel weighting.  Raises InsufficientData when fewer than p+1 distinct
    score values carry positive kernel weight or the weighted design is
    numerically singular.
    """
    x0 = float(x0)
    sub = _side_positions(view, spec.side, x0)
    if sub.size == 0:
        raise InsufficientData(f"no observations on side {spec.side!r} of {x0}")

    flags = ()
    if spec.h == "auto":
        selection = select_bandwidth_mse(view, spec, x0)
        h, flags = selection.h, selection.flags
    else:
        h = float(spec.h)

    x_sub = view.x[sub]
    u = (x_sub - x0) / h
    kw = kernel_weights(spec.kernel, u)
    inside = kw > 0
    win = sub[inside]
    n_eff = int(win.size)
    p, nu = spec.p, spec.deriv
    if np.unique(view.x[win]).size < p + 1:
        raise InsufficientData(
            f"{n_eff} in-window rows with fewer than {p + 1} distinct scores at {x0}"
        )

    uw = u[inside]
    w_kern = kw[inside]
    design = np.vander(uw, p + 1, increasing=True)
    wd = design * w_kern[:, None]
    gram = design.T @ wd
    if np.linalg.cond(gram) > MAX_DESIGN_CONDITION**2:
        raise InsufficientData(f"weighted design is numerically singular at {x0}")
    try:
        chol = sla.cho_factor(gram, lower=True)
    except np.linalg.LinAlgError as exc:
        raise InsufficientData(f"weighted design is singular at {x0}") from exc

    coef_weights = sla.cho_solve(chol, wd.T)  # (p+1) x m, beta_scaled = A @ y
    y_win = view.y[win]
    beta_scaled = coef_weights @ y_win
    powers = h ** np.arange(p + 1)
    beta = beta_scaled / powers
    factor = math.factorial(nu) / h**nu
    estimate = float(factor * beta_scaled[nu])

    weights = np.zeros(len(view))
    weights[win] = factor * coef_weights[nu]
    residuals = y_win - design @ beta_scaled

    sigma2 = np.array(view.cell_sigma2)
    nn_missing = np.isnan(sigma2[win])
    if nn_missing.any():
        sigma2[win[nn_missing]] = residuals[nn_missing] ** 2
    sigma2[np.isnan(sigma2)] = 0.0
    # an interpolated window means zero conditional variance; the raw
    # nearest-neighbor differences would report slope leakage instead
    y_rms = np.sqrt(np.mean(y_win * y_win))
    if np.max(np.abs(residuals), initial=0.0) <= 1e-10 * max(y_rms, 1e-300):
        sigma2[win] = 0.0
    variance = float(np.sum(weights[win] ** 2 * sigma2[win]))

    return LocalFit(
        x0=x0,
        beta=beta,
        estimate=estimate,
        weights=weights,
        variance=variance,
        h_used=h,
        n_eff=n_eff,
        residuals=residuals,
        window=win,
        spec=replace(spec, h=h),
        view=view,
        sigma2=sigma2,
        bandwidth_flags=flags,
        _design=design,
        _kweights=w_kern,
        _chol=chol,
        _coef_weights=coef_weights,
    )


def select_bandwidth_mse(view, spec, x0):
    """Deterministic plug-in estimate of the MSE-optimal bandwidth.

    A global polynomial pilot of order p+3 (reduced when data are scarce)
    on the side-filtered sample supplies the (p+1)-th derivative and the
    residual variance; the variance constant combines exact kernel moment
    matrices with a Gaussian reference density estimate at ``x0``.  The
    resulting

        h = [ (2 nu + 1) V / (2 (p + 1 - nu) B^2) ]^(1/(2p+3)) * n^(-1/(2p+3))

    is clipped to [h_min, data range], where h_min is the smallest bandwidth
    leaving at least p+2 observations (and p+1 distinct scores) in window.
    A vanishing curvature estimate falls back to the data range and is
    flagged instead of raising.
    """
    x0 = float(x0)
    p, nu = spec.p, spec.deriv
    sub = _side_positions(view, spec.side, x0)
    x = view.x[sub]
    y = view.y[sub]
    n = x.size
    distinct = np.unique(x)
    if distinct.size < p + 3:
        raise InsufficientData(
            f"bandwidth selection needs at least {p + 3} distinct scores on "
            f"side {spec.side!r} of {x0}, found {distinct.size}"
        )

    # pilot polynomial fit, centered and scaled for conditioning
    order = min(p + 3, distinct.size - 1)
    scale = np.max(np.abs(x - x0))
    if scale == 0:
        raise InsufficientData("all scores coincide with the evaluation point")
    u = (x - x0) / scale
    basis = np.vander(u, order + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    resid = y - basis @ coef
    sigma2 = float(resid @ resid) / max(n - order - 1, 1)
    y_rms = float(np.sqrt(np.mean(y * y)))
    if sigma2 <= (1e-10 * max(y_rms, 1e-300)) ** 2:
        sigma2 = 0.0
    fac_next = math.factorial(p + 1)
    curvature = fac_next * coef[p + 1] / scale ** (p + 1)
    # sampling variance of the curvature estimate, for regularization below
    gram_inv = np.linalg.pinv(basis.T @ basis)
    curvature_var = (
        fac_next**2 * sigma2 * gram_inv[p + 1, p + 1] / scale ** (2 * (p + 1))
    )

    # Gaussian reference density of the working sample at x0; one-sided fits
    # sit on the boundary of their own support, where the kernel estimate
    # captures half the mass
    sd = float(np.std(x))
    iqr = float(np.subtract(*np.percentile(x, [75, 25])))
    spread = min(s for s in (sd, iqr / 1.349) if s > 0) if sd > 0 else 0.0
    if spread <= 0:
        raise InsufficientData("degenerate score spread")
    h_f = 0.9 * spread * n ** (-0.2)
    density = float(np.mean(stats.norm.pdf((x - x0) / h_f))) / h_f
    if spec.side != "both":
        density *= 2.0

    S, T, c = moment_matrices(spec.kernel, p, spec.side)
    S_inv_c = np.linalg.solve(S, c)
    S_inv = np.linalg.inv(S)
    fac = math.factorial(nu)
    bias_const = fac * S_inv_c[nu]
    var_const = fac**2 * (S_inv @ T @ S_inv)[nu, nu]

    B = bias_const * curvature / fac_next
    with np.errstate(divide="ignore", invalid="ignore"):
        V = var_const * sigma2 / density
    # guard against exploding bandwidths when the curvature is imprecisely
    # near zero: penalize the squared bias constant by the curvature variance.
    # Derivative fits keep the unpenalized rule: their windows may grow to the
    # clipping range, which is what keeps amplified derivative terms stable.
    B2 = B * B
    if nu == 0:
        B2 += (bias_const / fac_next) ** 2 * CURVATURE_REGULARIZATION * curvature_var

    h_min = _min_feasible_bandwidth(x, x0, p)
    h_max = float(np.max(x) - np.min(x))
    h_max = max(h_max, h_min)

    flags = []
    if V <= 0 or not np.isfinite(V):
        h = h_min
        flags.append("pilot-variance-zero")
    elif B2 <= 0 or not np.isfinite(B2):
        h = h_max
        flags.append("degenerate-pilot")
    else:
        rate = 1.0 / (2 * p + 3)
        h = ((2 * nu + 1) * V / (2 * (p + 1 - nu) * B2)) ** rate * n ** (-rate)
        if h > h_max:
            flags.append("degenerate-pilot" if h > 10 * h_max else "clipped-to-range")
            h = h_max
    if h < h_min:
        h = h_min
        flags.append("clipped-to-min")

    return BandwidthSelection(
        h=float(h),
        flags=tuple(flags),
        curvature=float(curvature),
        sigma2_pilot=sigma2,
        density=density,
        n_side=n,
    )


def _min_feasible_bandwidth(x, x0, p):
    """Smallest workable h: >= p+2 rows and >= p+1 distinct scores in window.

    Kernels vanish at the window edge, so the boundary row must sit strictly
    inside: the bound is the midpoint between the last required distance and
    the next one (or a 5% pad when no further row exists), which keeps every
    required weight bounded away from zero while still admitting exactly the
    required rows.
    """
    dist = np.abs(x - x0)
    order = np.argsort(dist, kind="stable")
    count = 0
    seen = set()
    for i, pos in enumerate(order):
        count += 1
        seen.add(x[pos])
        if count >= p + 2 and len(seen) >= p + 1:
            d = float(dist[order[i]])
            if i + 1 < order.size and dist[order[i + 1]] > d:
                return 0.5 * (d + float(dist[order[i + 1]]))
            return d * 1.05 + 1e-300
    raise InsufficientData(
        f"cannot place {p + 2} rows with {p + 1} distinct scores around {x0}"
    )


def normal_quantile(level):
    """Two-sided normal critical value for a confidence level in (0, 1)."""
    if not 0 < level < 1:
        raise ValueError(f"confidence level must be in (0, 1), got {level}")
    return float(stats.norm.ppf(0.5 + level / 2))


def rbc_interval(fit, view, spec=None, level=0.95):
    """Conventional and robust bias-corrected confidence intervals.

    The leading bias of the order-p fit is estimated from a local fit of
    order p+1 at the same point and bandwidth (pilot ratio 1) through the
    empirical bias factor of the weighted design; the corrected estimate is
    ``fit.estimate`` minus that term and its standard error comes from the
    combined smoother weights.  With pilot ratio 1 this reproduces, up to
    solver tolerance, the order-(p+1) fit's derivative estimate and robust
    variance.
    """
    if fit.view is not view and not fit.view.same_rows(view):
        raise MismatchedViews("fit was not produced from the given view")
    z = normal_quantile(level)
    p, nu = fit.spec.p, fit.spec.deriv
    h = fit.h_used

    # the fit's own (resolved) spec governs; the argument is accepted for
    # interface symmetry with local_fit
    del spec
    fit_q = local_fit(view, replace(fit.spec, p=p + 1, h=h), fit.x0)

    # empirical bias factor: projection of the omitted basis column u^{p+1}
    # onto the order-p design, evaluated at the derivative row
    base_u = (view.x[fit.window] - fit.x0) / h
    gamma = fit._design.T @ (fit._kweights * base_u ** (p + 1))
    g = sla.cho_solve(fit._chol, gamma)

    coef_next_scaled = fit_q.beta[p + 1] * h ** (p + 1)
    factor = math.factorial(nu) / h**nu
    bias = float(factor * g[nu] * coef_next_scaled)
    estimate_rbc = fit.estimate - bias

    w_next = np.zeros(len(view))
    w_next[fit_q.window] = fit_q._coef_weights[p + 1]
    weights_rbc = fit.weights - factor * g[nu] * w_next
    sigma2 = fit_q.sigma2
    var_rbc = float(np.sum(weights_rbc**2 * sigma2))
    se_rbc = math.sqrt(max(var_rbc, 0.0))

    se_conv = fit.se
    ci_conv = (fit.estimate - z * se_conv, fit.estimate + z * se_conv)
    ci_rbc = (estimate_rbc - z * se_rbc, estimate_rbc + z * se_rbc)
    if se_rbc > 0:
        p_rbc = float(2 * stats.norm.sf(abs(estimate_rbc) / se_rbc))
    else:
        p_rbc = 1.0 if estimate_rbc == 0 else 0.0

    return RBCResult(
        estimate=fit.estimate,
        se_conventional=se_conv,
        ci_conventional=ci_conv,
        estimate_rbc=estimate_rbc,
        se_rbc=se_rbc,
        ci_rbc=ci_rbc,
        p_rbc=p_rbc,
        bias_estimate=bias,
        level=level,
        weights_rbc=weights_rbc,
        sigma2=sigma2,
    )


def weighted_covariance(view, weights_a, weights_b, sigma2_a, sigma2_b):
    """Covariance sum(w_a * w_b * sigma2) over one shared view's rows.

    Rows whose nearest-neighbor variance exists use it; rows covered only by
    residual fallbacks use the average of the two fits' values, which keeps
    the form symmetric and reduces to the exact variance when both weight
    vectors coincide.
    """
    cache = view.cell_sigma2
    combined = np.where(np.isnan(cache), 0.5 * (sigma2_a + sigma2_b), cache)
    return float(np.sum(weights_a * weights_b * combined))


def fit_covariance(fit_a, fit_b, view=None):
    """Covariance between two local fits built on the same view.

    Exactly zero when the kernel windows share no observations.
    """
    if view is not None:
        if not (fit_a.view.same_rows(view) and fit_b.view.same_rows(view)):
            raise MismatchedViews("fits were not produced from the given view")
    if not fit_a.view.same_rows(fit_b.view):
        raise MismatchedViews("fits were built on different views")
    if fit_a is fit_b:
        return fit_a.variance
    return weighted_covariance(
        fit_a.view, fit_a.weights, fit_b.weights, fit_a.sigma2, fit_b.sigma2
    )
