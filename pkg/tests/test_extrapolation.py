"""Extrapolation estimators: identities, exactness, invariances, variants."""

import numpy as np
import pytest

from rdextrap.dataset import CutoffPair, Dataset
from rdextrap.errors import (
    ComplianceViolation,
    DataError,
    InsufficientData,
    UnsupportedOrder,
    WeakFirstStage,
    XbarOutOfRange,
)
from rdextrap.extrapolation import (
    double_difference,
    estimate_cutoff_effect,
    extrapolate_covadj,
    extrapolate_fuzzy,
    extrapolate_polybias,
    extrapolate_sharp,
    extrapolation_grid,
    pooled_effect,
    weighted_average_effect,
)
from rdextrap.locfit import FitSpec

from conftest import HIGH, LOW, sharp_dataset, two_group_scores

PAIR = CutoffPair(LOW, HIGH)


class TestDoubleDifferenceArithmetic:
    def test_reported_component_identity(self):
        # component values quoted at 3 decimals; the identity holds exactly
        # in the formula and to display rounding against the quoted effect
        tau, gap = double_difference(0.756, 0.706, 0.525, 0.667)
        assert gap == pytest.approx(-0.142, abs=1e-12)
        assert tau == pytest.approx(0.756 - (0.706 - 0.142), abs=1e-12)
        assert tau == pytest.approx(0.191, abs=1.5e-3)

    def test_equal_components_cancel(self):
        tau, gap = double_difference(0.3, 0.3, 0.3, 0.3)
        assert tau == 0.0 and gap == 0.0


class TestCutoffEffect:
    def test_piecewise_jump_recovered_exactly(self, rng):
        x, c = two_group_scores(4000, rng)
        d = (x >= c).astype(float)
        y = 1 + 0.002 * x + 0.5 * d
        ds = sharp_dataset(y, x, c)
        eff = estimate_cutoff_effect(ds, LOW)
        assert eff.tau == pytest.approx(0.5, abs=1e-8)
        assert eff.tau_rbc == pytest.approx(0.5, abs=1e-8)

    def test_null_data(self, rng):
        x, c = two_group_scores(3000, rng)
        ds = sharp_dataset(np.zeros(3000), x, c)
        eff = estimate_cutoff_effect(ds, LOW)
        assert eff.tau == pytest.approx(0.0, abs=1e-12)
        assert eff.ci_rbc[0] <= eff.tau_rbc <= eff.ci_rbc[1]

    def test_interval_invariants(self, noisy_parallel):
        eff = estimate_cutoff_effect(noisy_parallel, LOW)
        assert eff.se_conventional >= 0 and eff.se_rbc >= 0
        assert eff.ci_conventional[0] <= eff.tau <= eff.ci_conventional[1]
        assert eff.ci_rbc[0] <= eff.tau_rbc <= eff.ci_rbc[1]
        assert eff.n_eff_left >= 3 and eff.n_eff_right >= 3


class TestPooledEffect:
    def test_single_cutoff_reduces_to_cutoff_effect(self, rng):
        x = rng.uniform(-1000, -1, 2000)
        c = np.full(2000, LOW)
        y = 1 + 0.002 * x + 0.3 * (x >= c) + rng.normal(0, 0.2, 2000)
        ds = sharp_dataset(y, x, c)
        pooled = pooled_effect(ds)
        direct = estimate_cutoff_effect(ds, LOW)
        assert pooled.tau == direct.tau
        assert pooled.se_rbc == direct.se_rbc
        assert pooled.h_left == direct.h_left

    def test_recovers_common_normalized_jump(self):
        rng = np.random.default_rng(3)
        n = 20000
        x, c = two_group_scores(n, rng)
        u = x - c
        y = 1 + 0.001 * u + 0.3 * (u >= 0) + rng.normal(0, 0.25, n)
        ds = sharp_dataset(y, x, c)
        pooled = pooled_effect(ds)
        assert pooled.tau == pytest.approx(0.3, abs=0.02)


class TestWeightedAverage:
    def test_symmetric_groups_average(self, rng):
        # identical score layouts in both groups: weights must be 1/2 each
        m = 1500
        u = rng.uniform(-150, 150, m)
        x = np.concatenate([LOW + u, HIGH + u])
        c = np.concatenate([np.full(m, LOW), np.full(m, HIGH)])
        d = (x >= c).astype(float)
        y = 0.5 * d + rng.normal(0, 0.1, 2 * m)
        y2 = np.concatenate([y[:m], y[:m]])  # same outcomes in both groups
        ds = sharp_dataset(y2, x, c)
        spec = FitSpec(p=1, h=80.0)
        effects = [estimate_cutoff_effect(ds, cut, spec=spec) for cut in ds.cutoffs]
        avg = weighted_average_effect(effects, ds)
        assert avg.weights[0] == pytest.approx(0.5, abs=1e-12)
        assert avg.estimate == pytest.approx(
            0.5 * (effects[0].tau + effects[1].tau), abs=1e-12
        )
        assert avg.se == pytest.approx(
            0.5 * np.hypot(effects[0].se_conventional, effects[1].se_conventional),
            rel=1e-9,
        )

    def test_zero_density_group_gets_zero_weight(self, rng):
        # low group has no score mass within the kernel window of its cutoff,
        # so its (externally supplied) effect must receive zero weight
        from rdextrap.extrapolation import RDEffect

        m = 1200
        x_low = np.concatenate(
            [rng.uniform(-1000, -960, m // 2), rng.uniform(-740, -600, m // 2)]
        )
        x_high = rng.uniform(-700, -440, m)
        x = np.concatenate([x_low, x_high])
        c = np.concatenate([np.full(m, LOW), np.full(m, HIGH)])
        d = (x >= c).astype(float)
        y = 0.2 * d + rng.normal(0, 0.1, 2 * m)
        ds = sharp_dataset(y, x, c)

        def make_effect(cutoff, tau):
            return RDEffect(
                cutoff=cutoff, tau=tau, se_conventional=0.1, se_rbc=0.12,
                ci_conventional=(tau - 0.2, tau + 0.2),
                ci_rbc=(tau - 0.25, tau + 0.25), h_left=50.0, h_right=50.0,
                n_eff_left=100, n_eff_right=100, tau_rbc=tau, p_rbc=0.5,
                level=0.95,
            )

        effects = [make_effect(LOW, 0.4), make_effect(HIGH, 0.2)]
        avg = weighted_average_effect(effects, ds)
        assert avg.weights[0] == 0.0
        assert avg.weights[1] == 1.0
        assert avg.estimate == effects[1].tau

    def test_needs_two_effects(self, noisy_parallel):
        eff = estimate_cutoff_effect(noisy_parallel, LOW)
        with pytest.raises(InsufficientData):
            weighted_average_effect([eff], noisy_parallel)


class TestSharpExtrapolation:
    def test_noise_free_exact_on_grid(self, linear_parallel):
        points = np.linspace(-840, -580, 10)
        for x in points:
            res = extrapolate_sharp(linear_parallel, PAIR, x)
            assert res.tau == pytest.approx(0.19, abs=1e-8)
            assert res.bias_low == pytest.approx(-0.14, abs=1e-8)

    def test_component_identity(self, noisy_parallel):
        res = extrapolate_sharp(noisy_parallel, PAIR, -650.0)
        comp = [c.estimate for c in res.components]
        assert res.tau == pytest.approx(
            comp[0] - comp[1] - comp[2] + comp[3], abs=1e-12
        )
        assert res.variance == pytest.approx(
            sum(c.variance for c in res.components) - 2 * res.cov_term, rel=1e-12
        )

    def test_outcome_shift_and_scale(self, noisy_parallel):
        ds = noisy_parallel
        spec = FitSpec(p=1, h=60.0)
        base = extrapolate_sharp(ds, PAIR, -650.0, spec=spec)
        shifted = sharp_dataset(ds.y + 5.0, ds.x, ds.c)
        res_shift = extrapolate_sharp(shifted, PAIR, -650.0, spec=spec)
        assert res_shift.tau == pytest.approx(base.tau, abs=1e-9)
        scaled = sharp_dataset(2.0 * ds.y, ds.x, ds.c)
        res_scale = extrapolate_sharp(scaled, PAIR, -650.0, spec=spec)
        assert res_scale.tau == pytest.approx(2.0 * base.tau, rel=1e-9)

    def test_covariance_term_zero_when_windows_disjoint(self, noisy_parallel):
        spec = FitSpec(p=1, h=40.0)  # |xbar - low| = 200 > 40 + 40
        res = extrapolate_sharp(noisy_parallel, PAIR, -650.0, spec=spec)
        assert res.cov_term == 0.0

    def test_variance_below_naive_sum_when_cov_positive(self, noisy_parallel):
        spec = FitSpec(p=1, h=150.0)  # overlapping control-high windows
        res = extrapolate_sharp(noisy_parallel, PAIR, -650.0, spec=spec)
        naive = sum(c.variance for c in res.components)
        if res.cov_term >= 0:
            assert res.variance <= naive

    def test_xbar_range_enforced(self, noisy_parallel):
        with pytest.raises(XbarOutOfRange):
            extrapolate_sharp(noisy_parallel, PAIR, LOW)
        with pytest.raises(XbarOutOfRange):
            extrapolate_sharp(noisy_parallel, PAIR, HIGH + 1.0)

    def test_at_high_uses_left_limits(self, linear_parallel):
        res = extrapolate_sharp(linear_parallel, PAIR, HIGH)
        assert res.tau == pytest.approx(0.19, abs=1e-8)

    @pytest.mark.parametrize("kind", ("uniform", "epanechnikov"))
    def test_other_kernels_exact_on_linear(self, linear_parallel, kind):
        spec = FitSpec(p=1, kernel=kind)
        res = extrapolate_sharp(linear_parallel, PAIR, -650.0, spec=spec)
        assert res.tau == pytest.approx(0.19, abs=1e-8)

    def test_insufficient_cell_reports_component(self, rng):
        # low group entirely above its cutoff: no control-low rows
        x_low = rng.uniform(-840, -600, 300)
        x_high = rng.uniform(-1000, -580, 300)
        x = np.concatenate([x_low, x_high])
        c = np.concatenate([np.full(300, LOW), np.full(300, HIGH)])
        ds = sharp_dataset(np.zeros(600), x, c)
        with pytest.raises(InsufficientData, match="control-low"):
            extrapolate_sharp(ds, PAIR, -650.0)


class TestGrid:
    def test_singleton_matches_pointwise(self, noisy_parallel):
        grid = extrapolation_grid(noisy_parallel, PAIR, [-650.0])
        point = extrapolate_sharp(noisy_parallel, PAIR, -650.0)
        assert grid[0].ok
        assert grid[0].result.tau == point.tau
        assert grid[0].result.variance == point.variance
        assert grid[0].result.ci_rbc == point.ci_rbc

    def test_shared_point_agreement_across_grid(self, noisy_parallel):
        points = list(np.linspace(-800, -600, 5))
        grid = extrapolation_grid(noisy_parallel, PAIR, points)
        for entry in grid:
            single = extrapolate_sharp(noisy_parallel, PAIR, entry.x)
            assert entry.result.tau == single.tau

    def test_benchmark_grid_within_three_se(self):
        from rdextrap.simulate import SimulationConfig, generate_sample

        cfg = SimulationConfig(N=20000, seed=6)
        ds = generate_sample(cfg, 41)
        grid = extrapolation_grid(ds, PAIR, np.linspace(-840, -580, 5))
        for point in grid:
            assert point.ok
            assert abs(point.result.tau - 0.19) <= 3 * point.result.se_rbc

    def test_partial_failures_flagged(self, rng):
        # thin out low-group treated support so some points fail
        x_low = np.concatenate(
            [rng.uniform(-1000, -851, 200), rng.uniform(-700, -650, 40)]
        )
        x_high = rng.uniform(-1000, -572, 400)
        x = np.concatenate([x_low, x_high])
        c = np.concatenate([np.full(240, LOW), np.full(400, HIGH)])
        d = (x >= c).astype(float)
        y = rng.normal(0, 0.1, 640)
        ds = sharp_dataset(y, x, c)
        spec = FitSpec(p=1, h=20.0)
        grid = extrapolation_grid(ds, PAIR, [-675.0, -590.0], spec=spec)
        assert grid[0].ok
        assert not grid[1].ok and grid[1].error


class TestFuzzy:
    def test_full_compliance_equals_sharp_bitwise(self, linear_parallel):
        sharp = extrapolate_sharp(linear_parallel, PAIR, -650.0)
        fuzzy = extrapolate_fuzzy(linear_parallel, PAIR, -650.0)
        assert fuzzy.tau == sharp.tau
        assert fuzzy.tau_rbc == sharp.tau_rbc
        assert fuzzy.first_stage.estimate == 1.0
        assert fuzzy.first_stage.se == 0.0

    def test_ratio_arithmetic(self, rng):
        # outcomes exactly 0.2 * treatment: the intent-to-treat estimate is
        # 0.2 times the first stage, so the ratio recovers 0.2
        n = 6000
        x, c = two_group_scores(n, rng)
        assigned = x >= c
        comply = rng.random(n) < 0.5
        d = (assigned & comply).astype(float)
        y = 0.2 * d
        ds = Dataset.from_arrays(y, x, c, d=d, design="fuzzy")
        res = extrapolate_fuzzy(ds, PAIR, -650.0)
        assert res.first_stage.estimate == pytest.approx(0.5, abs=0.05)
        assert res.itt.tau == pytest.approx(0.2 * res.first_stage.estimate, abs=1e-3)
        assert res.tau == pytest.approx(0.2, abs=5e-3)

    def test_complier_effect_recovered(self):
        rng = np.random.default_rng(12)
        n = 20000
        x, c = two_group_scores(n, rng)
        assigned = x >= c
        comply = rng.random(n) < 0.6
        d = (assigned & comply).astype(float)
        y = 1 + 0.002 * x - 0.14 * (c == LOW) + 0.19 * d + rng.normal(0, 0.3, n)
        ds = Dataset.from_arrays(y, x, c, d=d, design="fuzzy")
        res = extrapolate_fuzzy(ds, PAIR, -650.0)
        assert abs(res.tau - 0.19) <= 3 * res.se

    def test_two_sided_noncompliance_rejected(self, rng):
        x, c = two_group_scores(1000, rng)
        d = (x >= c).astype(float)
        d[np.flatnonzero(x < c)[:5]] = 1.0  # treated below the cutoff
        ds = Dataset.from_arrays(np.zeros(1000), x, c, d=d, design="fuzzy")
        with pytest.raises(ComplianceViolation):
            extrapolate_fuzzy(ds, PAIR, -650.0)

    def test_weak_first_stage(self, rng):
        n = 8000
        x, c = two_group_scores(n, rng)
        assigned = x >= c
        comply = rng.random(n) < 0.01
        d = (assigned & comply).astype(float)
        y = rng.normal(0, 0.1, n)
        ds = Dataset.from_arrays(y, x, c, d=d, design="fuzzy")
        with pytest.raises(WeakFirstStage):
            extrapolate_fuzzy(ds, PAIR, -650.0)


def linear_divergence_data(rng, n=6000, slope=0.0005, noise=0.0):
    """Control gap -0.14 + slope*(x - low); all responses linear in x."""
    x, c = two_group_scores(n, rng)
    d = (x >= c).astype(float)
    base = 1 + 0.002 * x
    gap = -0.14 + slope * (x - LOW)
    y = base + gap * (c == LOW) + 0.19 * d
    if noise:
        y = y + rng.normal(0, noise, n)
    return sharp_dataset(y, x, c)


class TestPolybias:
    def test_order_zero_is_sharp(self, noisy_parallel):
        a = extrapolate_polybias(noisy_parallel, PAIR, -650.0, s_max=0)
        b = extrapolate_sharp(noisy_parallel, PAIR, -650.0)
        assert a.tau == b.tau and a.variance == b.variance
        assert a.order_bias == 0

    def test_linear_divergence_noise_free(self, rng):
        ds = linear_divergence_data(rng)
        r0 = extrapolate_polybias(ds, PAIR, -650.0, s_max=0)
        r1 = extrapolate_polybias(ds, PAIR, -650.0, s_max=1)
        predicted_bias = 0.0005 * (-650.0 - LOW)
        assert r0.tau - 0.19 == pytest.approx(predicted_bias, abs=1e-8)
        assert r1.tau == pytest.approx(0.19, abs=1e-8)
        assert r1.order_bias == 1

    def test_quadratic_divergence_order_two(self, rng):
        n = 6000
        x, c = two_group_scores(n, rng)
        d = (x >= c).astype(float)
        gap = -0.14 + 2e-6 * (x - LOW) ** 2
        y = 1 + 0.002 * x + gap * (c == LOW) + 0.19 * d
        ds = sharp_dataset(y, x, c)
        r2 = extrapolate_polybias(ds, PAIR, -650.0, spec=FitSpec(p=2), s_max=2)
        assert r2.tau == pytest.approx(0.19, abs=1e-6)

    def test_parallel_controls_gap_slope_vanishes(self):
        gaps, diffs = [], []
        for n in (4000, 16000):
            vals_g, vals_d = [], []
            for seed in (1, 2, 3):
                rng = np.random.default_rng(seed)
                x, c = two_group_scores(n, rng)
                dd = (x >= c).astype(float)
                y = 1 + 0.002 * x - 0.14 * (c == LOW) + 0.19 * dd
                y = y + rng.normal(0, 0.3, n)
                ds = sharp_dataset(y, x, c)
                r1 = extrapolate_polybias(ds, PAIR, -650.0, s_max=1)
                r0 = extrapolate_polybias(ds, PAIR, -650.0, s_max=0)
                slope_term = [
                    comp for comp in r1.components if "derivative 1" in comp.name
                ]
                vals_g.append(abs(slope_term[0].estimate - slope_term[1].estimate))
                vals_d.append(abs(r1.tau - r0.tau))
            gaps.append(np.mean(vals_g))
            diffs.append(np.mean(vals_d))
        assert gaps[1] < gaps[0]
        assert diffs[1] < diffs[0]

    def test_unsupported_order(self, noisy_parallel):
        with pytest.raises(UnsupportedOrder):
            extrapolate_polybias(noisy_parallel, PAIR, -650.0, s_max=3)


def covadj_fixture(offsets_a, offsets_b):
    """Two covariate cells with constant outcomes per (cell, group, region).

    Per cell: low-group controls below the low cutoff, low-group treated near
    the evaluation point, high-group controls spanning both regions; the
    high-group outcome is one constant, so the cell effect is exactly
    treated-constant minus control-constant.
    """
    rows = []
    for z, (a_c, t_c, h_c) in (("a", offsets_a), ("b", offsets_b)):
        for x in (-950.0, -940.0, -930.0, -920.0, -910.0):
            rows.append((a_c, x, LOW, z))
        for x in (-700.0, -680.0, -660.0, -640.0, -620.0):
            rows.append((t_c, x, LOW, z))
        for x in (-880.0, -862.0, -844.0, -826.0, -808.0,
                  -706.0, -684.0, -662.0, -642.0, -624.0):
            rows.append((h_c, x, HIGH, z))
    y, x, c, z = zip(*rows)
    d = (np.asarray(x) >= np.asarray(c)).astype(float)
    return Dataset.from_arrays(
        np.asarray(y), np.asarray(x), np.asarray(c), d=d,
        z=np.asarray(z, dtype=object), design="sharp",
    )


class TestCovariateAdjusted:
    SPEC = FitSpec(p=1, h=120.0)

    def test_two_cell_hand_oracle(self):
        ds = covadj_fixture((0.4, 0.9, 0.6), (0.5, 0.7, 0.3))
        res = extrapolate_covadj(ds, PAIR, -650.0, spec=self.SPEC)
        cell_effects = {"a": 0.9 - 0.4, "b": 0.7 - 0.5}
        assert abs(sum(c.weight for c in res.cells) - 1.0) < 1e-12
        for cell in res.cells:
            assert cell.result.tau == pytest.approx(
                cell_effects[cell.z[0]], abs=1e-9
            )
        want = sum(c.weight * cell_effects[c.z[0]] for c in res.cells)
        assert res.tau == pytest.approx(want, abs=1e-9)

    def test_equal_weight_cells_average(self):
        # identical layouts, cell effects 0.1 and 0.3: aggregate must be 0.2
        ds = covadj_fixture((0.0, 0.1, 0.0), (0.0, 0.3, 0.0))
        res = extrapolate_covadj(ds, PAIR, -650.0, spec=self.SPEC)
        assert res.cells[0].weight == pytest.approx(0.5, abs=1e-12)
        assert res.tau == pytest.approx(0.2, abs=1e-9)

    def test_single_cell_matches_sharp(self, rng):
        x, c = two_group_scores(3000, rng)
        d = (x >= c).astype(float)
        y = 1 + 0.002 * x - 0.14 * (c == LOW) + 0.19 * d + rng.normal(0, 0.2, 3000)
        z = np.full(3000, "only", dtype=object)
        ds = Dataset.from_arrays(y, x, c, d=d, z=z, design="sharp")
        plain = sharp_dataset(y, x, c)
        adj = extrapolate_covadj(ds, PAIR, -650.0)
        ref = extrapolate_sharp(plain, PAIR, -650.0)
        assert adj.tau == ref.tau
        assert adj.se_rbc == pytest.approx(ref.se_rbc, rel=1e-12)

    def test_requires_covariates(self, noisy_parallel):
        with pytest.raises(DataError):
            extrapolate_covadj(noisy_parallel, PAIR, -650.0)

    def test_support_violation_detected(self):
        from rdextrap.errors import SupportViolation

        # cell "b" has no high-group mass near the evaluation point, so its
        # estimated low-cutoff propensity at xbar is ~1
        rows = []
        for z, t_c in (("a", 0.9), ("b", 0.7)):
            for x in (-950.0, -940.0, -930.0, -920.0, -910.0):
                rows.append((0.4, x, LOW, z))
            for x in (-700.0, -680.0, -660.0, -640.0, -620.0):
                rows.append((t_c, x, LOW, z))
            high_near_eval = (
                (-706.0, -684.0, -662.0, -642.0, -624.0) if z == "a"
                else (-768.0, -765.0, -762.0)  # barely in window, tiny weight
            )
            for x in (-880.0, -862.0, -844.0, -826.0, -808.0) + high_near_eval:
                rows.append((0.6, x, HIGH, z))
        y, x, c, z = zip(*rows)
        d = (np.asarray(x) >= np.asarray(c)).astype(float)
        ds = Dataset.from_arrays(
            np.asarray(y), np.asarray(x), np.asarray(c), d=d,
            z=np.asarray(z, dtype=object), design="sharp",
        )
        with pytest.raises(SupportViolation):
            extrapolate_covadj(ds, PAIR, -650.0, spec=FitSpec(p=1, h=120.0))
