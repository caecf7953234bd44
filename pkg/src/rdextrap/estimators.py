"""Estimator-style front end over the functional API.

Each analysis is a class following scikit-learn conventions: constructor
arguments are plain hyperparameters (inspectable through ``get_params`` /
``set_params`` and compatible with ``sklearn.base.clone``), ``fit`` accepts a
:class:`~rdextrap.dataset.Dataset` or any dataframe-like object with the
canonical columns, computes everything once, and exposes results as
attributes with trailing underscores.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import extrapolation as _ex
from . import falsification as _fa
from . import fixedeffects as _fe
from . import localrand as _lr
from .dataset import Dataset
from .errors import DataError
from .locfit import FitSpec


def as_dataset(data, design="sharp"):
    """Validate and coerce input data to a :class:`Dataset`.

    Accepts a Dataset (returned unchanged), a mapping of column arrays, or a
    dataframe-like object exposing the canonical columns ``y``, ``x``, ``c``
    and optionally ``d`` and ``z1..zk``.
    """
    if isinstance(data, Dataset):
        return data
    if hasattr(data, "columns"):
        cols = {name: np.asarray(data[name]) for name in data.columns}
    elif isinstance(data, dict):
        cols = {name: np.asarray(col) for name, col in data.items()}
    else:
        raise DataError(
            "data must be a Dataset, a mapping of columns, or a dataframe-like "
            f"object; got {type(data).__name__}"
        )
    for required in ("y", "x", "c"):
        if required not in cols:
            raise DataError(f"column {required!r} missing from input data")
    znames = sorted(
        (n for n in cols if len(n) > 1 and n[0] == "z" and n[1:].isdigit()),
        key=lambda n: int(n[1:]),
    )
    z = np.column_stack([cols[n] for n in znames]).astype(object) if znames else None
    return Dataset.from_arrays(
        cols["y"], cols["x"], cols["c"], d=cols.get("d"), z=z, design=design
    )


class _FittedMixin:
    def _check_fitted(self):
        if not getattr(self, "_fitted", False):
            raise NotFittedError(
                f"this {type(self).__name__} instance is not fitted yet; call fit first"
            )

    def _spec(self):
        return FitSpec(p=self.order, kernel=self.kernel, h=self.bandwidth)


class CutoffEffect(BaseEstimator, _FittedMixin):
    """Sharp RD effect at one cutoff (or every cutoff when unspecified)."""

    def __init__(self, cutoff=None, order=1, kernel="triangular",
                 bandwidth="auto", level=0.95, design="sharp"):
        self.cutoff = cutoff
        self.order = order
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.level = level
        self.design = design

    def fit(self, data):
        ds = as_dataset(data, self.design)
        spec = self._spec()
        targets = ds.cutoffs if self.cutoff is None else (self.cutoff,)
        self.effects_ = [
            _ex.estimate_cutoff_effect(ds, c, spec=spec, level=self.level)
            for c in targets
        ]
        self.effect_ = self.effects_[0]
        self.tau_ = self.effect_.tau
        self.ci_rbc_ = self.effect_.ci_rbc
        self._fitted = True
        return self


class PooledEffect(BaseEstimator, _FittedMixin):
    """Normalizing-and-pooling RD effect at the common recentered cutoff."""

    def __init__(self, order=1, kernel="triangular", bandwidth="auto",
                 level=0.95, design="sharp"):
        self.order = order
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.level = level
        self.design = design

    def fit(self, data):
        ds = as_dataset(data, self.design)
        self.effect_ = _ex.pooled_effect(ds, spec=self._spec(), level=self.level)
        self.tau_ = self.effect_.tau
        self.ci_rbc_ = self.effect_.ci_rbc
        self._fitted = True
        return self


class WeightedAverageEffect(BaseEstimator, _FittedMixin):
    """Density-weighted average of the cutoff-specific effects."""

    def __init__(self, order=1, kernel="triangular", bandwidth="auto",
                 level=0.95, design="sharp"):
        self.order = order
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.level = level
        self.design = design

    def fit(self, data):
        ds = as_dataset(data, self.design)
        spec = self._spec()
        self.effects_ = [
            _ex.estimate_cutoff_effect(ds, c, spec=spec, level=self.level)
            for c in ds.cutoffs
        ]
        self.average_ = _ex.weighted_average_effect(self.effects_, ds,
                                                    level=self.level)
        self.tau_ = self.average_.estimate
        self.weights_ = self.average_.weights
        self.ci_rbc_ = self.average_.ci_rbc
        self._fitted = True
        return self


class Extrapolator(BaseEstimator, _FittedMixin):
    """Extrapolated low-cutoff effect at interior score values.

    ``fit`` precomputes the shared fits at the low cutoff; ``predict``
    evaluates the extrapolation at arbitrary points.  Variants: set
    ``bias_order`` for the polynomial-in-score gap, ``fuzzy=True`` for
    one-sided noncompliance, or ``covariate_adjust=True`` to aggregate over
    discrete covariate cells (these variants evaluate per point).
    """

    def __init__(self, low=None, high=None, at=None, order=1,
                 kernel="triangular", bandwidth="auto", bias_order=0,
                 fuzzy=False, covariate_adjust=False, level=0.95,
                 design="sharp"):
        self.low = low
        self.high = high
        self.at = at
        self.order = order
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.bias_order = bias_order
        self.fuzzy = fuzzy
        self.covariate_adjust = covariate_adjust
        self.level = level
        self.design = design

    def _one(self, ds, x):
        pair = (self.low, self.high)
        spec = self._spec()
        if self.covariate_adjust:
            return _ex.extrapolate_covadj(ds, pair, x, spec=spec, level=self.level)
        if self.fuzzy:
            return _ex.extrapolate_fuzzy(ds, pair, x, spec=spec, level=self.level)
        if self.bias_order == 0 and getattr(self, "_shared", None) is not None:
            return _ex._extrapolate_at(self._shared, x)
        return _ex.extrapolate_polybias(ds, pair, x, spec=spec,
                                        s_max=self.bias_order, level=self.level)

    def fit(self, data):
        if self.low is None or self.high is None:
            raise DataError("low and high cutoffs must be set")
        ds = as_dataset(data, self.design)
        self._data = ds
        self._shared = None
        if not (self.fuzzy or self.covariate_adjust) and self.bias_order == 0:
            # the fits at the low cutoff do not depend on the evaluation
            # point; compute them once and reuse across predictions
            pair = _ex._as_pair(ds, (self.low, self.high))
            self._shared = _ex._SharedFits(ds, pair, self._spec(), self.level)
        points = self.at
        if points is None:
            self.results_ = []
        elif np.isscalar(points):
            self.result_ = self._one(ds, points)
            self.results_ = [self.result_]
            self.tau_ = self.result_.tau
            self.ci_rbc_ = self.result_.ci_rbc
        else:
            self.results_ = [self._one(ds, x) for x in points]
            self.tau_ = np.array([r.tau for r in self.results_])
        self._fitted = True
        return self

    def predict(self, points):
        """Extrapolated effect estimates at the given score values."""
        self._check_fitted()
        if np.isscalar(points):
            return self._one(self._data, points).tau
        return np.array([self._one(self._data, x).tau for x in points])


class ParallelTrendsTest(BaseEstimator, _FittedMixin):
    """Global polynomial test that the control groups run in parallel."""

    def __init__(self, low=None, high=None, order=2,
                 include_intercept_shift=False, design="sharp"):
        self.low = low
        self.high = high
        self.order = order
        self.include_intercept_shift = include_intercept_shift
        self.design = design

    def fit(self, data):
        ds = as_dataset(data, self.design)
        self.result_ = _fa.global_parallel_test(
            ds, (self.low, self.high), order=self.order,
            include_intercept_shift=self.include_intercept_shift,
        )
        self.statistic_ = self.result_.F_stat
        self.p_value_ = self.result_.p_value
        self._fitted = True
        return self


class DerivativeEqualityTest(BaseEstimator, _FittedMixin):
    """Local polynomial test of equal control-group derivatives."""

    def __init__(self, low=None, high=None, grid="auto", level=0.95,
                 kernel="triangular", bandwidth="auto", design="sharp"):
        self.low = low
        self.high = high
        self.grid = grid
        self.level = level
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.design = design

    def fit(self, data):
        ds = as_dataset(data, self.design)
        self.result_ = _fa.local_derivative_test(
            ds, (self.low, self.high), grid=self.grid, level=self.level,
            kernel=self.kernel, bandwidth=self.bandwidth,
        )
        self.sup_stat_ = self.result_.sup_stat
        self.any_reject_ = self.result_.any_reject
        self._fitted = True
        return self


class FixedEffectsRD(BaseEstimator, _FittedMixin):
    """Linear multi-cutoff RD model with cutoff fixed effects."""

    def __init__(self, common_slope=True, center=True, design="sharp"):
        self.common_slope = common_slope
        self.center = center
        self.design = design

    def fit(self, data):
        ds = as_dataset(data, self.design)
        self._data = ds
        self.model_ = _fe.fit_fe_model(ds, common_slope=self.common_slope,
                                       center=self.center)
        self.gamma_ = self.model_.gamma
        self.beta_ = self.model_.beta
        self.delta_ = self.model_.delta
        self.theta_ = self.model_.theta
        self._fitted = True
        return self

    def effect_at(self, cutoff_index, xbar):
        self._check_fitted()
        return _fe.fe_effect_at(self.model_, cutoff_index, xbar)

    def slope_equality(self):
        self._check_fitted()
        return _fe.slope_equality_test(self._data)


class LocalRandomizationExtrapolator(BaseEstimator, _FittedMixin):
    """Window-based extrapolation with randomization inference."""

    def __init__(self, low=None, high=None, at=None, k=50,
                 adjustment="constant", eta=0.01, permutations=2000,
                 grid_size=100, seed=0, design="sharp"):
        self.low = low
        self.high = high
        self.at = at
        self.k = k
        self.adjustment = adjustment
        self.eta = eta
        self.permutations = permutations
        self.grid_size = grid_size
        self.seed = seed
        self.design = design

    def fit(self, data):
        ds = as_dataset(data, self.design)
        self._data = ds
        self.result_, self.bergerboos_ = _lr.lr_inference(
            ds, (self.low, self.high), self.at, self.k,
            adjustment=self.adjustment, eta=self.eta, M=self.permutations,
            G=self.grid_size, seed=self.seed,
        )
        self.tau_ = self.result_.tau_hat
        self.p_fisher_ = self.result_.p_fisher_bb
        self.p_neyman_ = self.result_.p_neyman
        self._fitted = True
        return self

    def sensitivity(self, k_list):
        self._check_fitted()
        return _lr.lr_sensitivity(
            self._data, (self.low, self.high), self.at, k_list,
            adjustment=self.adjustment, eta=self.eta, M=self.permutations,
            G=self.grid_size, seed=self.seed,
        )
