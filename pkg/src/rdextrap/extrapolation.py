"""Treatment-effect estimators for multi-cutoff RD designs.

Implements cutoff-specific RD effects, the normalizing-and-pooling effect, a
density-weighted average across cutoffs, extrapolation of the effect for the
low-cutoff subpopulation to interior score values via the constant-bias
double difference, and its fuzzy, polynomial-bias and covariate-adjusted
extensions.

The key estimator takes two cutoffs ``low < high`` and an interior point
``xbar`` and combines four local polynomial fits:

    tau(xbar) = m[treated,low](xbar) - m[control,high](xbar)
                - ( m[control,low](low-) - m[control,high](low) )

where the parenthesized term estimates the outcome gap between the two
control groups, assumed constant over the extrapolation region.  The two
control-high fits share observations, and their covariance enters the
variance of the estimator; all other component pairs use disjoint samples.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from .dataset import CutoffPair, pool_normalize, Dataset
from .errors import (
    ComplianceViolation,
    DataError,
    DegenerateWeights,
    EmptyCell,
    InsufficientData,
    SupportViolation,
    UnsupportedOrder,
    WeakFirstStage,
    XbarOutOfRange,
)
from .kernels import kernel_weights
from .locfit import (
    FitSpec,
    fit_covariance,
    local_fit,
    normal_quantile,
    rbc_interval,
    weighted_covariance,
)

DEFAULT_SPEC = FitSpec(p=1, deriv=0, kernel="triangular", h="auto", side="both")


@dataclass
class ComponentFit:
    """One named local fit with its robust bias-corrected inference."""

    name: str
    fit: object
    rbc: object

    @property
    def estimate(self):
        return self.fit.estimate

    @property
    def variance(self):
        return self.fit.variance

    @property
    def estimate_rbc(self):
        return self.rbc.estimate_rbc

    @property
    def variance_rbc(self):
        return self.rbc.se_rbc**2

    @property
    def h(self):
        return self.fit.h_used

    @property
    def n_eff(self):
        return self.fit.n_eff

    def to_dict(self):
        return {
            "name": self.name,
            "estimate": self.estimate,
            "estimate_rbc": self.estimate_rbc,
            "se": self.fit.se,
            "se_rbc": self.rbc.se_rbc,
            "bandwidth": self.h,
            "n_eff": self.n_eff,
            "bandwidth_flags": list(self.fit.bandwidth_flags),
        }


def _component(name, view, spec, x0, level):
    try:
        fit = local_fit(view, spec, x0)
        rbc = rbc_interval(fit, view, level=level)
    except InsufficientData as exc:
        raise InsufficientData(f"component {name!r}: {exc}") from exc
    return ComponentFit(name, fit, rbc)


@dataclass
class RDEffect:
    """Sharp RD effect at one cutoff with conventional and RBC inference."""

    cutoff: float
    tau: float
    se_conventional: float
    se_rbc: float
    ci_conventional: tuple
    ci_rbc: tuple
    h_left: float
    h_right: float
    n_eff_left: int
    n_eff_right: int
    tau_rbc: float
    p_rbc: float
    level: float

    def to_dict(self):
        return {
            "cutoff": self.cutoff,
            "tau": self.tau,
            "tau_rbc": self.tau_rbc,
            "se_conventional": self.se_conventional,
            "se_rbc": self.se_rbc,
            "ci_conventional": list(self.ci_conventional),
            "ci_rbc": list(self.ci_rbc),
            "p_rbc": self.p_rbc,
            "h_left": self.h_left,
            "h_right": self.h_right,
            "n_eff_left": self.n_eff_left,
            "n_eff_right": self.n_eff_right,
            "level": self.level,
        }


@dataclass
class ExtrapolationResult:
    """Extrapolated effect at ``xbar`` with its component decomposition.

    ``cov_term`` is half the gap between the coefficient-weighted sum of
    component variances and the total variance, so that
    ``variance = sum(coef^2 * var) - 2 * cov_term`` holds by construction;
    in the constant-bias case it equals the covariance between the two
    control-high fits.
    """

    xbar: float
    tau: float
    bias_low: float
    components: tuple
    variance: float
    cov_term: float
    ci_rbc: tuple
    order_bias: int
    tau_rbc: float
    se_rbc: float
    se_conventional: float
    ci_conventional: tuple
    p_rbc: float
    level: float
    bias_low_rbc: float = float("nan")

    def to_dict(self):
        return {
            "xbar": self.xbar,
            "tau": self.tau,
            "tau_rbc": self.tau_rbc,
            "bias_low": self.bias_low,
            "bias_low_rbc": self.bias_low_rbc,
            "se_conventional": self.se_conventional,
            "se_rbc": self.se_rbc,
            "ci_conventional": list(self.ci_conventional),
            "ci_rbc": list(self.ci_rbc),
            "p_rbc": self.p_rbc,
            "variance": self.variance,
            "cov_term": self.cov_term,
            "order_bias": self.order_bias,
            "level": self.level,
            "components": [c.to_dict() for c in self.components],
        }


def _two_sided_p(estimate, se):
    if se > 0:
        return float(2 * stats.norm.sf(abs(estimate) / se))
    return 1.0 if estimate == 0 else 0.0


def double_difference(treated_low_at_x, control_high_at_x,
                      control_low_at_low, control_high_at_low):
    """Constant-gap extrapolation arithmetic: returns (effect, gap at low).

    effect = treated_low_at_x - (control_high_at_x + gap),
    gap = control_low_at_low - control_high_at_low.
    """
    gap = control_low_at_low - control_high_at_low
    return treated_low_at_x - control_high_at_x - gap, gap


def estimate_cutoff_effect(ds, cutoff, spec=DEFAULT_SPEC, level=0.95):
    """Sharp RD effect at one cutoff within its own subpopulation.

    Difference of the right-limit and left-limit local fits at the cutoff;
    the two fits use disjoint samples, so the variance is their sum.
    """
    group = ds.subset(cutoff=cutoff)
    left = _component("below-cutoff limit", group, replace(spec, side="left"), cutoff, level)
    right = _component("above-cutoff limit", group, replace(spec, side="right"), cutoff, level)
    z = normal_quantile(level)
    tau = right.estimate - left.estimate
    se = math.sqrt(right.variance + left.variance)
    tau_rbc = right.estimate_rbc - left.estimate_rbc
    se_rbc = math.sqrt(right.variance_rbc + left.variance_rbc)
    return RDEffect(
        cutoff=float(cutoff),
        tau=tau,
        se_conventional=se,
        se_rbc=se_rbc,
        ci_conventional=(tau - z * se, tau + z * se),
        ci_rbc=(tau_rbc - z * se_rbc, tau_rbc + z * se_rbc),
        h_left=left.h,
        h_right=right.h,
        n_eff_left=left.n_eff,
        n_eff_right=right.n_eff,
        tau_rbc=tau_rbc,
        p_rbc=_two_sided_p(tau_rbc, se_rbc),
        level=level,
    )


def pooled_effect(ds, spec=DEFAULT_SPEC, level=0.95):
    """Normalizing-and-pooling RD effect.

    Scores are recentered at each unit's own cutoff and a single sharp RD
    effect is estimated at zero on the pooled sample.
    """
    return estimate_cutoff_effect(pool_normalize(ds), 0.0, spec=spec, level=level)


@dataclass
class WeightedAverageEffect:
    """Weighted average of cutoff-specific effects with estimated weights."""

    estimate: float
    se: float
    ci_rbc: tuple
    estimate_rbc: float
    se_rbc: float
    weights: tuple
    cutoffs: tuple
    p_rbc: float
    level: float

    def to_dict(self):
        return {
            "estimate": self.estimate,
            "estimate_rbc": self.estimate_rbc,
            "se": self.se,
            "se_rbc": self.se_rbc,
            "ci_rbc": list(self.ci_rbc),
            "p_rbc": self.p_rbc,
            "weights": dict(zip([str(c) for c in self.cutoffs], self.weights)),
            "level": self.level,
        }


def weighted_average_effect(effects, ds, level=0.95):
    """Average cutoff-specific effects with density-at-cutoff weights.

    Each effect's weight is proportional to the kernel density of its group's
    scores at the cutoff (bandwidth: the mean of the effect's two one-sided
    bandwidths) times the group's sample share.  The variance treats the
    weights as fixed; effects at distinct cutoffs are independent.
    """
    if len(effects) < 2:
        raise InsufficientData("weighted average needs at least 2 cutoff effects")
    cutoffs = [e.cutoff for e in effects]
    if len(set(cutoffs)) != len(cutoffs):
        raise DataError("effects must be at distinct cutoffs")
    n_total = len(ds)
    raw = []
    for eff in effects:
        group = ds.subset(cutoff=eff.cutoff)
        h = 0.5 * (eff.h_left + eff.h_right)
        dens = float(np.mean(kernel_weights("triangular", (group.x - eff.cutoff) / h))) / h
        raw.append(dens * len(group) / n_total)
    total = sum(raw)
    if total <= 0:
        raise DegenerateWeights("all density-at-cutoff estimates are zero")
    w = np.asarray(raw) / total
    taus = np.asarray([e.tau for e in effects])
    taus_rbc = np.asarray([e.tau_rbc for e in effects])
    ses = np.asarray([e.se_conventional for e in effects])
    ses_rbc = np.asarray([e.se_rbc for e in effects])
    est = float(w @ taus)
    est_rbc = float(w @ taus_rbc)
    se = math.sqrt(float(np.sum(w**2 * ses**2)))
    se_rbc = math.sqrt(float(np.sum(w**2 * ses_rbc**2)))
    z = normal_quantile(level)
    return WeightedAverageEffect(
        estimate=est,
        se=se,
        ci_rbc=(est_rbc - z * se_rbc, est_rbc + z * se_rbc),
        estimate_rbc=est_rbc,
        se_rbc=se_rbc,
        weights=tuple(float(v) for v in w),
        cutoffs=tuple(cutoffs),
        p_rbc=_two_sided_p(est_rbc, se_rbc),
        level=level,
    )


# -- constant-bias extrapolation ---------------------------------------------


def _as_pair(ds, pair):
    if not isinstance(pair, CutoffPair):
        pair = CutoffPair(*pair)
    return pair.validate(ds)


def _check_xbar(pair, xbar):
    if not pair.low < xbar <= pair.high:
        raise XbarOutOfRange(
            f"extrapolation point {xbar} outside ({pair.low}, {pair.high}]"
        )


class _SharedFits:
    """Views and low-cutoff fits reused across extrapolation points."""

    def __init__(self, ds, pair, spec, level):
        self.pair = pair
        self.spec = spec
        self.level = level
        self.view_low_treated = ds.subset(cutoff=pair.low, assigned=1)
        self.view_low_control = ds.subset(cutoff=pair.low, assigned=0)
        self.view_high_control = ds.subset(cutoff=pair.high, assigned=0)
        self.control_low_at_low = _component(
            "control-low at low cutoff",
            self.view_low_control,
            replace(spec, side="left"),
            pair.low,
            level,
        )
        self.control_high_at_low = _component(
            "control-high at low cutoff",
            self.view_high_control,
            replace(spec, side="both"),
            pair.low,
            level,
        )


def _extrapolate_at(shared, xbar):
    pair, spec, level = shared.pair, shared.spec, shared.level
    _check_xbar(pair, xbar)
    side = "left" if xbar == pair.high else "both"
    f1 = _component(
        "treated-low at xbar", shared.view_low_treated, replace(spec, side=side), xbar, level
    )
    f2 = _component(
        "control-high at xbar", shared.view_high_control, replace(spec, side=side), xbar, level
    )
    f3 = shared.control_low_at_low
    f4 = shared.control_high_at_low

    tau, bias_low = double_difference(
        f1.estimate, f2.estimate, f3.estimate, f4.estimate
    )
    cov = fit_covariance(f4.fit, f2.fit)
    variance = max(f1.variance + f2.variance + f3.variance + f4.variance - 2 * cov, 0.0)

    tau_rbc, bias_low_rbc = double_difference(
        f1.estimate_rbc, f2.estimate_rbc, f3.estimate_rbc, f4.estimate_rbc
    )
    cov_rbc = weighted_covariance(
        shared.view_high_control,
        f4.rbc.weights_rbc,
        f2.rbc.weights_rbc,
        f4.rbc.sigma2,
        f2.rbc.sigma2,
    )
    var_rbc = max(
        f1.variance_rbc + f2.variance_rbc + f3.variance_rbc + f4.variance_rbc - 2 * cov_rbc,
        0.0,
    )

    z = normal_quantile(level)
    se = math.sqrt(variance)
    se_rbc = math.sqrt(var_rbc)
    return ExtrapolationResult(
        xbar=float(xbar),
        tau=tau,
        bias_low=bias_low,
        components=(f1, f2, f3, f4),
        variance=variance,
        cov_term=cov,
        ci_rbc=(tau_rbc - z * se_rbc, tau_rbc + z * se_rbc),
        order_bias=0,
        tau_rbc=tau_rbc,
        se_rbc=se_rbc,
        se_conventional=se,
        ci_conventional=(tau - z * se, tau + z * se),
        p_rbc=_two_sided_p(tau_rbc, se_rbc),
        level=level,
        bias_low_rbc=bias_low_rbc,
    )


def extrapolate_sharp(ds, pair, xbar, spec=DEFAULT_SPEC, level=0.95):
    """Constant-bias extrapolation of the low-cutoff effect to ``xbar``.

    Valid for ``low < xbar <= high``; at ``xbar == high`` the fits at the
    evaluation point switch to left limits.
    """
    pair = _as_pair(ds, pair)
    _check_xbar(pair, xbar)
    return _extrapolate_at(_SharedFits(ds, pair, spec, level), xbar)


@dataclass
class GridPoint:
    """Per-point outcome of a grid extrapolation; at most one of
    ``result``/``error`` is set."""

    x: float
    result: ExtrapolationResult = None
    error: str = None

    @property
    def ok(self):
        return self.result is not None


def extrapolation_grid(ds, pair, points, spec=DEFAULT_SPEC, level=0.95):
    """Pointwise extrapolation over a list of points.

    The two fits at the low cutoff are computed once and reused.  Estimation
    failures at individual points are captured per point instead of aborting
    the grid.
    """
    pair = _as_pair(ds, pair)
    for x in points:
        _check_xbar(pair, x)
    shared = _SharedFits(ds, pair, spec, level)
    out = []
    for x in points:
        try:
            out.append(GridPoint(float(x), result=_extrapolate_at(shared, x)))
        except InsufficientData as exc:
            out.append(GridPoint(float(x), error=str(exc)))
    return out


# -- fuzzy designs with one-sided noncompliance ------------------------------


@dataclass
class FirstStage:
    estimate: float
    se: float
    estimate_rbc: float
    se_rbc: float
    h: float
    n_eff: int


@dataclass
class FuzzyExtrapolationResult:
    """Ratio of the extrapolated intent-to-treat effect to the first stage."""

    xbar: float
    tau: float
    se: float
    ci_rbc: tuple
    tau_rbc: float
    se_rbc: float
    first_stage: FirstStage
    itt: ExtrapolationResult
    p_rbc: float
    level: float
    assumptions: tuple = (
        "covariance between intent-to-treat components and the first stage set to zero",
    )

    def to_dict(self):
        return {
            "xbar": self.xbar,
            "tau": self.tau,
            "tau_rbc": self.tau_rbc,
            "se": self.se,
            "se_rbc": self.se_rbc,
            "ci_rbc": list(self.ci_rbc),
            "p_rbc": self.p_rbc,
            "first_stage": {
                "estimate": self.first_stage.estimate,
                "se": self.first_stage.se,
                "estimate_rbc": self.first_stage.estimate_rbc,
                "se_rbc": self.first_stage.se_rbc,
                "bandwidth": self.first_stage.h,
                "n_eff": self.first_stage.n_eff,
            },
            "itt": self.itt.to_dict(),
            "assumptions": list(self.assumptions),
            "level": self.level,
        }


WEAK_FIRST_STAGE = 0.05


def extrapolate_fuzzy(ds, pair, xbar, spec=DEFAULT_SPEC, level=0.95):
    """Extrapolated effect on compliers under one-sided noncompliance.

    The intent-to-treat double difference on observed outcomes is divided by
    the estimated share of treated units among those assigned to treatment in
    the low-cutoff group near ``xbar``.  Delta-method variance for the ratio.
    """
    pair = _as_pair(ds, pair)
    _check_xbar(pair, xbar)
    below = ds.x < ds.c
    if np.any(ds.d[below] == 1):
        raise ComplianceViolation(
            "treated units found below their cutoff; one-sided noncompliance required"
        )

    itt = _extrapolate_at(_SharedFits(ds, pair, spec, level), xbar)

    fs_view = ds.subset(cutoff=pair.low, assigned=1)
    if len(fs_view) == 0:
        raise InsufficientData("no assigned-to-treatment rows in the low-cutoff group")
    if np.all(fs_view.d == 1):
        first = FirstStage(1.0, 0.0, 1.0, 0.0, float("nan"), len(fs_view))
    else:
        fs_data = Dataset.from_arrays(fs_view.d, fs_view.x, fs_view.c, design="sharp")
        side = "left" if xbar == pair.high else "both"
        fs_spec = FitSpec(p=1, deriv=0, kernel=spec.kernel, h=spec.h, side=side)
        fit = local_fit(fs_data, fs_spec, xbar)
        rbc = rbc_interval(fit, fs_data, level=level)
        first = FirstStage(
            fit.estimate, fit.se, rbc.estimate_rbc, rbc.se_rbc, fit.h_used, fit.n_eff
        )

    if first.estimate < WEAK_FIRST_STAGE or first.estimate_rbc < WEAK_FIRST_STAGE:
        raise WeakFirstStage(
            f"estimated complier share {first.estimate:.4f} below {WEAK_FIRST_STAGE}"
        )

    tau = itt.tau / first.estimate
    var = itt.variance / first.estimate**2 + itt.tau**2 * first.se**2 / first.estimate**4
    tau_rbc = itt.tau_rbc / first.estimate_rbc
    var_rbc = (
        itt.se_rbc**2 / first.estimate_rbc**2
        + itt.tau_rbc**2 * first.se_rbc**2 / first.estimate_rbc**4
    )
    se = math.sqrt(var)
    se_rbc = math.sqrt(var_rbc)
    z = normal_quantile(level)
    return FuzzyExtrapolationResult(
        xbar=float(xbar),
        tau=tau,
        se=se,
        ci_rbc=(tau_rbc - z * se_rbc, tau_rbc + z * se_rbc),
        tau_rbc=tau_rbc,
        se_rbc=se_rbc,
        first_stage=first,
        itt=itt,
        p_rbc=_two_sided_p(tau_rbc, se_rbc),
        level=level,
    )


# -- polynomial-in-score bias ------------------------------------------------


def _combined_variance(view, parts):
    """Variance of a signed combination of fits sharing one view.

    ``parts`` is a list of (coefficient, weights, sigma2) triples; summing the
    scaled weight vectors first captures every pairwise covariance exactly.
    Rows lacking a nearest-neighbor variance use the mean of the parts'
    fallback values where set.
    """
    w_tot = np.zeros(len(view))
    sig_sum = np.zeros(len(view))
    sig_cnt = np.zeros(len(view))
    for coef, w, sig in parts:
        w_tot += coef * w
        used = sig > 0
        sig_sum[used] += sig[used]
        sig_cnt[used] += 1
    cache = view.cell_sigma2
    fallback = sig_sum / np.maximum(sig_cnt, 1)
    combined = np.where(np.isnan(cache), fallback, cache)
    return float(np.sum(w_tot**2 * combined))


def extrapolate_polybias(ds, pair, xbar, spec=DEFAULT_SPEC, s_max=0, level=0.95):
    """Extrapolation with a polynomial-in-score control-group gap.

    Replaces the constant gap with a degree-``s_max`` expansion around the
    low cutoff: the correction subtracts
    ``sum_s (1/s!) * (gap derivative of order s at low) * (xbar - low)^s``,
    with each derivative estimated by local polynomial fits of order
    ``max(p, s_max + 1)`` on the control samples left of the low cutoff
    (low group) and around it (high group).  ``s_max = 0`` reduces exactly
    to the constant-bias estimator.
    """
    if not 0 <= s_max <= 2:
        raise UnsupportedOrder(f"bias polynomial order must be in {{0, 1, 2}}, got {s_max}")
    pair = _as_pair(ds, pair)
    _check_xbar(pair, xbar)
    if s_max == 0:
        return extrapolate_sharp(ds, pair, xbar, spec=spec, level=level)

    q = max(spec.p, s_max + 1)
    view_low_treated = ds.subset(cutoff=pair.low, assigned=1)
    view_low_control = ds.subset(cutoff=pair.low, assigned=0)
    view_high_control = ds.subset(cutoff=pair.high, assigned=0)

    side = "left" if xbar == pair.high else "both"
    f1 = _component(
        "treated-low at xbar", view_low_treated, replace(spec, side=side), xbar, level
    )
    f2 = _component(
        "control-high at xbar", view_high_control, replace(spec, side=side), xbar, level
    )

    low_fits, high_fits, coefs = [], [], []
    for s in range(s_max + 1):
        deriv_spec = replace(spec, p=q, deriv=s)
        low_fits.append(
            _component(
                f"control-low derivative {s} at low cutoff",
                view_low_control,
                replace(deriv_spec, side="left"),
                pair.low,
                level,
            )
        )
        high_fits.append(
            _component(
                f"control-high derivative {s} at low cutoff",
                view_high_control,
                replace(deriv_spec, side="both"),
                pair.low,
                level,
            )
        )
        coefs.append((xbar - pair.low) ** s / math.factorial(s))

    correction = sum(
        a * (lo.estimate - hi.estimate) for a, lo, hi in zip(coefs, low_fits, high_fits)
    )
    correction_rbc = sum(
        a * (lo.estimate_rbc - hi.estimate_rbc)
        for a, lo, hi in zip(coefs, low_fits, high_fits)
    )
    tau = f1.estimate - f2.estimate - correction
    tau_rbc = f1.estimate_rbc - f2.estimate_rbc - correction_rbc

    var_high = _combined_variance(
        view_high_control,
        [(-1.0, f2.fit.weights, f2.fit.sigma2)]
        + [(a, hi.fit.weights, hi.fit.sigma2) for a, hi in zip(coefs, high_fits)],
    )
    var_low_c = _combined_variance(
        view_low_control,
        [(a, lo.fit.weights, lo.fit.sigma2) for a, lo in zip(coefs, low_fits)],
    )
    variance = f1.variance + var_high + var_low_c

    var_high_rbc = _combined_variance(
        view_high_control,
        [(-1.0, f2.rbc.weights_rbc, f2.rbc.sigma2)]
        + [(a, hi.rbc.weights_rbc, hi.rbc.sigma2) for a, hi in zip(coefs, high_fits)],
    )
    var_low_c_rbc = _combined_variance(
        view_low_control,
        [(a, lo.rbc.weights_rbc, lo.rbc.sigma2) for a, lo in zip(coefs, low_fits)],
    )
    var_rbc = f1.variance_rbc + var_high_rbc + var_low_c_rbc

    components = (f1, f2) + tuple(low_fits) + tuple(high_fits)
    scaled_var_sum = (
        f1.variance
        + f2.variance
        + sum(a**2 * (lo.variance + hi.variance)
              for a, lo, hi in zip(coefs, low_fits, high_fits))
    )
    cov_term = 0.5 * (scaled_var_sum - variance)

    z = normal_quantile(level)
    se = math.sqrt(max(variance, 0.0))
    se_rbc = math.sqrt(max(var_rbc, 0.0))
    return ExtrapolationResult(
        xbar=float(xbar),
        tau=tau,
        bias_low=low_fits[0].estimate - high_fits[0].estimate,
        components=components,
        variance=variance,
        cov_term=cov_term,
        ci_rbc=(tau_rbc - z * se_rbc, tau_rbc + z * se_rbc),
        order_bias=s_max,
        tau_rbc=tau_rbc,
        se_rbc=se_rbc,
        se_conventional=se,
        ci_conventional=(tau - z * se, tau + z * se),
        p_rbc=_two_sided_p(tau_rbc, se_rbc),
        level=level,
        bias_low_rbc=low_fits[0].estimate_rbc - high_fits[0].estimate_rbc,
    )


# -- covariate-adjusted extrapolation ----------------------------------------


@dataclass
class CellDetail:
    z: tuple
    weight: float
    propensity: float
    n: int
    result: ExtrapolationResult

    def to_dict(self):
        return {
            "z": [str(v) for v in self.z],
            "weight": self.weight,
            "propensity": self.propensity,
            "n": self.n,
            "result": self.result.to_dict(),
        }


@dataclass
class CovariateAdjustedResult:
    """Aggregate of cell-wise extrapolations over discrete covariate cells."""

    xbar: float
    tau: float
    se: float
    ci_rbc: tuple
    tau_rbc: float
    se_rbc: float
    ci_conventional: tuple
    cells: tuple
    p_rbc: float
    level: float

    def to_dict(self):
        return {
            "xbar": self.xbar,
            "tau": self.tau,
            "tau_rbc": self.tau_rbc,
            "se": self.se,
            "se_rbc": self.se_rbc,
            "ci_conventional": list(self.ci_conventional),
            "ci_rbc": list(self.ci_rbc),
            "p_rbc": self.p_rbc,
            "level": self.level,
            "cells": [c.to_dict() for c in self.cells],
        }


PROPENSITY_BOUNDS = (0.01, 0.99)


def extrapolate_covadj(ds, pair, xbar, spec=DEFAULT_SPEC, level=0.95):
    """Covariate-adjusted extrapolation over discrete covariate cells.

    Within each covariate cell the constant-bias estimator is applied; cells
    are aggregated with weights proportional to the estimated probability of
    facing the low cutoff at ``xbar`` in the cell times the cell's kernel
    frequency at ``xbar``.  Cells with an estimated propensity outside
    ``PROPENSITY_BOUNDS`` violate common support.
    """
    if not ds.has_covariates:
        raise DataError("covariate adjustment requires a dataset with covariates")
    pair = _as_pair(ds, pair)
    _check_xbar(pair, xbar)

    cells = sorted(ds.z_cells(), key=lambda t: tuple(str(v) for v in t))
    if not cells:
        raise DataError("no covariate cells found")

    details = []
    prop_fits = []
    for cell in cells:
        cell_ds = ds.subset(z=cell)
        pair_rows = cell_ds.subset(cutoff=(pair.low, pair.high))
        if len(pair_rows) == 0:
            raise EmptyCell(cell)
        try:
            result = extrapolate_sharp(cell_ds, pair, xbar, spec=spec, level=level)
        except InsufficientData as exc:
            raise EmptyCell(cell) from exc
        indicator = (pair_rows.c == pair.low).astype(np.float64)
        if np.unique(pair_rows.x).size < 4:
            raise EmptyCell(cell)
        prop_data = Dataset.from_arrays(
            indicator, pair_rows.x, pair_rows.c, d=pair_rows.d, design=ds.design
        )
        side = "left" if xbar == pair.high else "both"
        prop_spec = FitSpec(p=1, deriv=0, kernel=spec.kernel, h=spec.h, side=side)
        try:
            pfit = local_fit(prop_data, prop_spec, xbar)
        except InsufficientData as exc:
            raise EmptyCell(cell) from exc
        propensity = pfit.estimate
        if not PROPENSITY_BOUNDS[0] <= propensity <= PROPENSITY_BOUNDS[1]:
            raise SupportViolation(cell, propensity)
        prop_fits.append(pfit)
        details.append((cell, pair_rows, propensity, result))

    h_f = float(np.mean([f.h_used for f in prop_fits]))
    freqs = [
        float(np.sum(kernel_weights(spec.kernel, (rows.x - xbar) / h_f)))
        for _, rows, _, _ in details
    ]
    raw = np.asarray([p * f for (_, _, p, _), f in zip(details, freqs)])
    total = float(raw.sum())
    if total <= 0:
        raise DegenerateWeights("all cell weights vanish at the extrapolation point")
    w = raw / total

    tau = float(sum(wi * det[3].tau for wi, det in zip(w, details)))
    tau_rbc = float(sum(wi * det[3].tau_rbc for wi, det in zip(w, details)))
    variance = float(sum(wi**2 * det[3].variance for wi, det in zip(w, details)))
    var_rbc = float(sum(wi**2 * det[3].se_rbc**2 for wi, det in zip(w, details)))
    se = math.sqrt(variance)
    se_rbc = math.sqrt(var_rbc)
    z = normal_quantile(level)

    cell_details = tuple(
        CellDetail(z=cell, weight=float(wi), propensity=float(p), n=len(rows), result=res)
        for wi, (cell, rows, p, res) in zip(w, details)
    )
    return CovariateAdjustedResult(
        xbar=float(xbar),
        tau=tau,
        se=se,
        ci_rbc=(tau_rbc - z * se_rbc, tau_rbc + z * se_rbc),
        tau_rbc=tau_rbc,
        se_rbc=se_rbc,
        ci_conventional=(tau - z * se, tau + z * se),
        cells=cell_details,
        p_rbc=_two_sided_p(tau_rbc, se_rbc),
        level=level,
    )
