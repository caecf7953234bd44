"""Estimator front end: sklearn conventions and parity with the functions."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from rdextrap.dataset import Dataset
from rdextrap.errors import DataError
from rdextrap.estimators import (
    CutoffEffect,
    DerivativeEqualityTest,
    Extrapolator,
    FixedEffectsRD,
    LocalRandomizationExtrapolator,
    ParallelTrendsTest,
    PooledEffect,
    WeightedAverageEffect,
    as_dataset,
)
from rdextrap.extrapolation import estimate_cutoff_effect, extrapolate_sharp

from conftest import HIGH, LOW


class TestAsDataset:
    def test_dataset_passthrough(self, noisy_parallel):
        assert as_dataset(noisy_parallel) is noisy_parallel

    def test_mapping_input(self):
        data = {"y": [1.0, 2.0], "x": [-1.0, 1.0], "c": [0.0, 0.0]}
        ds = as_dataset(data)
        assert isinstance(ds, Dataset)
        assert list(ds.d) == [0.0, 1.0]

    def test_dataframe_input(self, noisy_parallel):
        pd = pytest.importorskip("pandas")
        frame = pd.DataFrame({
            "y": noisy_parallel.y, "x": noisy_parallel.x,
            "c": noisy_parallel.c, "d": noisy_parallel.d,
        })
        ds = as_dataset(frame)
        np.testing.assert_array_equal(ds.y, noisy_parallel.y)

    def test_missing_column(self):
        with pytest.raises(DataError):
            as_dataset({"y": [1.0], "x": [0.0]})

    def test_zcolumns_collected_in_order(self):
        data = {
            "y": [1.0, 2.0, 3.0, 4.0], "x": [-1.0, 1.0, -2.0, 2.0],
            "c": [0.0, 0.0, 0.0, 0.0],
            "z2": ["p", "q", "p", "q"], "z1": ["a", "b", "a", "b"],
        }
        ds = as_dataset(data)
        assert ds.z_cells()[0] == ("a", "p")


class TestSklearnConventions:
    ESTIMATORS = [
        CutoffEffect(cutoff=LOW),
        PooledEffect(),
        WeightedAverageEffect(),
        Extrapolator(low=LOW, high=HIGH, at=-650.0),
        ParallelTrendsTest(low=LOW, high=HIGH),
        DerivativeEqualityTest(low=LOW, high=HIGH),
        FixedEffectsRD(),
        LocalRandomizationExtrapolator(low=LOW, high=HIGH, at=-650.0,
                                       permutations=600, grid_size=10),
    ]

    @pytest.mark.parametrize("est", ESTIMATORS, ids=lambda e: type(e).__name__)
    def test_get_params_clone_roundtrip(self, est):
        params = est.get_params()
        cloned = clone(est)
        assert cloned.get_params() == params

    @pytest.mark.parametrize("est", ESTIMATORS, ids=lambda e: type(e).__name__)
    def test_fit_returns_self_and_sets_attributes(self, est, noisy_parallel):
        fitted = clone(est).fit(noisy_parallel)
        assert any(name.endswith("_") and not name.endswith("__")
                   for name in vars(fitted))

    def test_not_fitted_errors(self, noisy_parallel):
        with pytest.raises(NotFittedError):
            Extrapolator(low=LOW, high=HIGH, at=-650.0).predict([-650.0])
        with pytest.raises(NotFittedError):
            FixedEffectsRD().effect_at(0, 0.0)


class TestParity:
    def test_cutoff_effect_matches_function(self, noisy_parallel):
        est = CutoffEffect(cutoff=LOW).fit(noisy_parallel)
        ref = estimate_cutoff_effect(noisy_parallel, LOW)
        assert est.tau_ == ref.tau
        assert est.ci_rbc_ == ref.ci_rbc

    def test_extrapolator_matches_function(self, noisy_parallel):
        est = Extrapolator(low=LOW, high=HIGH, at=-650.0).fit(noisy_parallel)
        ref = extrapolate_sharp(noisy_parallel, (LOW, HIGH), -650.0)
        assert est.tau_ == ref.tau

    def test_extrapolator_predict_grid(self, noisy_parallel):
        est = Extrapolator(low=LOW, high=HIGH, at=-650.0).fit(noisy_parallel)
        taus = est.predict([-700.0, -650.0, -600.0])
        assert taus.shape == (3,)
        assert taus[1] == est.tau_

    def test_all_cutoffs_fit(self, noisy_parallel):
        est = CutoffEffect().fit(noisy_parallel)
        assert len(est.effects_) == 2

    def test_weighted_average_weights_sum_to_one(self, noisy_parallel):
        est = WeightedAverageEffect().fit(noisy_parallel)
        assert sum(est.weights_) == pytest.approx(1.0, abs=1e-12)

    def test_fixed_effects_methods(self, noisy_parallel):
        est = FixedEffectsRD().fit(noisy_parallel)
        effect, se = est.effect_at(0, 0.0)
        assert np.isfinite(effect) and se >= 0
        F, df, p = est.slope_equality()
        assert 0 <= p <= 1

    def test_lr_sensitivity_method(self, noisy_parallel):
        est = LocalRandomizationExtrapolator(
            low=LOW, high=HIGH, at=-650.0, k=40, permutations=600, grid_size=8,
        ).fit(noisy_parallel)
        rows = est.sensitivity([40, 60])
        assert len(rows) == 2 and rows[0].ok
