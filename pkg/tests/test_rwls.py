import numpy as np
import pytest

from crossover import (
    CrossoverDesign,
    DegenerateCovarianceError,
    NotIdentifiableError,
    ObservedDataset,
    WeightModel,
    as_sequence,
    assemble,
    carryover_effect,
    ehw_covariance,
    enumerate_assignments,
    estimate,
    feasible_rwls,
    full_sequence_set,
    implied_estimator_weights,
    instantaneous_effect,
    marginal_effect,
    oracle_variance,
    point_estimate,
    pooled_covariance_entries,
    random_consistent_table,
    realize_dataset,
    sample_covariances,
    sequence_means,
    solve_restricted_wls,
    stack,
    true_value,
)
from conftest import dense_sandwich, make_dataset, nullspace_restricted_wls, template_labels


def four_seq_design(counts=(3, 4, 5, 3)):
    return CrossoverDesign(2, dict(zip(("AA", "AB", "BA", "BB"), counts)))


def diagonal_weights(design, values=(1.0, 1.0)):
    return WeightModel({z: np.diag(values) for z in design.observed}, "user")


class TestSequenceMeans:
    def test_single_unit_groups_return_their_vectors(self, rng):
        design = CrossoverDesign(2, {"AB": 1, "BA": 1})
        dataset = make_dataset(design, rng)
        means = sequence_means(dataset)
        assert np.array_equal(means[as_sequence("AB")], dataset.outcomes[0])
        assert np.array_equal(means[as_sequence("BA")], dataset.outcomes[1])

    def test_constant_outcomes(self):
        design = CrossoverDesign(2, {"AB": 3})
        dataset = ObservedDataset(design, template_labels(design), np.full((3, 2), 2.5))
        assert np.allclose(sequence_means(dataset)[as_sequence("AB")], 2.5)

    def test_matches_streaming_mean(self, rng):
        design = four_seq_design()
        dataset = make_dataset(design, rng)
        means = sequence_means(dataset)
        for z, idx in dataset.group_indices().items():
            streamed = np.zeros(2)
            for count, i in enumerate(idx, start=1):
                streamed += (dataset.outcomes[i] - streamed) / count
            assert np.allclose(means[z], streamed, atol=1e-12)


class TestSampleCovariances:
    def test_hand_case(self):
        design = CrossoverDesign(2, {"AB": 2})
        dataset = ObservedDataset(
            design, template_labels(design), np.array([[0.0, 0.0], [2.0, 2.0]])
        )
        cov = sample_covariances(dataset).matrix("AB")
        assert np.allclose(cov, [[2.0, 2.0], [2.0, 2.0]])

    def test_constant_group_repaired_to_small_identity(self):
        design = CrossoverDesign(2, {"AB": 3})
        dataset = ObservedDataset(design, template_labels(design), np.ones((3, 2)))
        model = sample_covariances(dataset)
        assert model.repaired == (as_sequence("AB"),)
        assert np.allclose(model.matrix("AB"), 1e-8 * np.eye(2))

    def test_single_unit_group_rejected(self, rng):
        design = CrossoverDesign(2, {"AB": 1, "BA": 3})
        with pytest.raises(DegenerateCovarianceError):
            sample_covariances(make_dataset(design, rng))

    def test_unbiased_over_enumeration(self):
        # averaging the sample covariance over every assignment recovers the
        # finite-population covariance exactly
        design = CrossoverDesign(2, {"AB": 2, "BA": 2})
        table = random_consistent_table(2, "a", 1, 4, seed=9)
        ab = as_sequence("AB")
        total = np.zeros((2, 2))
        count = 0
        for assignment in enumerate_assignments(design):
            dataset = realize_dataset(table, assignment)
            total += sample_covariances(dataset).matrix(ab)
            count += 1
        assert np.allclose(total / count, table.covariance(ab), atol=1e-12)


class TestPooledCovarianceEntries:
    def test_scenario_a_pools_period1_by_arm(self, rng):
        design = four_seq_design((8, 9, 7, 8))
        dataset = make_dataset(design, rng)
        model = pooled_covariance_entries(dataset, "a")
        assert model.repaired == ()
        groups = dataset.group_indices()
        for arm in "AB":
            members = [as_sequence(arm + "A"), as_sequence(arm + "B")]
            total = 0.0
            dof = 0
            for z in members:
                y = dataset.outcomes[groups[z], 0]
                total += ((y - y.mean()) ** 2).sum()
                dof += y.size - 1
            for z in members:
                assert model.matrix(z)[0, 0] == pytest.approx(total / dof, abs=1e-12)

    def test_singleton_classes_match_sample(self, rng):
        design = CrossoverDesign(2, {"AB": 4, "BA": 5})
        dataset = make_dataset(design, rng)
        pooled = pooled_covariance_entries(dataset, "c", 1)
        sampled = sample_covariances(dataset)
        for z in design.observed:
            assert np.allclose(pooled.matrix(z), sampled.matrix(z), atol=1e-12)

    def test_pooling_identical_groups_is_a_no_op(self):
        design = CrossoverDesign(2, {"AA": 3, "AB": 3})
        y = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
        dataset = ObservedDataset(
            design, template_labels(design), np.vstack([y, y])
        )
        pooled = pooled_covariance_entries(dataset, "a")
        sampled = sample_covariances(dataset)
        for z in design.observed:
            assert pooled.matrix(z)[0, 0] == pytest.approx(sampled.matrix(z)[0, 0])

    def test_enables_single_unit_groups_when_classes_merge(self, rng):
        # at three periods every covariance entry shares its class with a
        # second sequence, so one single-unit group is rescued
        counts = {z: 2 for z in full_sequence_set(3)}
        counts[as_sequence("AAA")] = 1
        design = CrossoverDesign(3, counts)
        dataset = make_dataset(design, rng)
        with pytest.raises(DegenerateCovarianceError):
            sample_covariances(dataset)
        model = pooled_covariance_entries(dataset, "b", 1)
        assert model.matrix("AAA").shape == (3, 3)

    def test_unpoolable_entries_are_rejected(self, rng):
        # for two periods no scenario equates the cross-period entry across
        # sequences, so a single-unit group cannot be rescued
        design = CrossoverDesign(2, {"AA": 1, "AB": 3})
        dataset = make_dataset(design, rng)
        with pytest.raises(DegenerateCovarianceError):
            pooled_covariance_entries(dataset, "b", 1)


class TestSolveRestrictedWls:
    def test_zero_row_restriction_returns_group_means(self, rng):
        from crossover.constraints import RestrictionMatrix, CoefficientLayout

        design = four_seq_design()
        dataset = make_dataset(design, rng)
        layout = CoefficientLayout(2, design.scope)
        empty = RestrictionMatrix(layout, np.zeros((0, layout.size)))
        weights = WeightModel(
            {z: np.array([[2.0, 0.7], [0.7, 1.5]]) for z in design.observed}, "user"
        )
        means = sequence_means(dataset)
        fit = solve_restricted_wls(design, means, weights, empty)
        for z in design.observed:
            assert np.allclose(fit.gamma[layout.block(z)], means[z], atol=1e-10)

    def test_rank_failure_raises_with_diagnostics(self, rng):
        design = CrossoverDesign(2, {"AB": 3, "BA": 3})
        dataset = make_dataset(design, rng)
        with pytest.raises(NotIdentifiableError) as info:
            feasible_rwls(dataset, "a")
        assert info.value.rank == 6
        assert info.value.dimension == 8

    def test_period1_pooling_is_count_proportional(self, rng):
        design = four_seq_design((2, 3, 4, 1))
        restriction = assemble("a", 2, design.scope)
        means = {z: rng.normal(size=2) for z in design.observed}
        fit = solve_restricted_wls(design, means, diagonal_weights(design), restriction)
        spec = instantaneous_effect(1, "", design.scope)
        implied = implied_estimator_weights(fit, spec)
        assert np.allclose(implied[as_sequence("AA")], [[2 / 5, 0]], atol=1e-10)
        assert np.allclose(implied[as_sequence("AB")], [[3 / 5, 0]], atol=1e-10)
        assert np.allclose(implied[as_sequence("BA")], [[-4 / 5, 0]], atol=1e-10)
        assert np.allclose(implied[as_sequence("BB")], [[-1 / 5, 0]], atol=1e-10)

    @pytest.mark.parametrize("scenario,order", [("a", None), ("b", 1), ("c", 1)])
    def test_matches_nullspace_oracle(self, rng, scenario, order):
        design = four_seq_design()
        restriction = assemble(scenario, 2, design.scope, order)
        for _ in range(5):
            dataset = make_dataset(design, rng)
            mats = {}
            for z in design.observed:
                a = rng.normal(size=(2, 2))
                mats[z] = a @ a.T + 0.5 * np.eye(2)
            weights = WeightModel(mats, "user")
            fit = solve_restricted_wls(design, sequence_means(dataset), weights, restriction)
            expected = nullspace_restricted_wls(dataset, weights, restriction)
            assert np.allclose(fit.gamma, expected, atol=1e-9)

    def test_restriction_satisfied(self, rng):
        design = four_seq_design()
        dataset = make_dataset(design, rng)
        fit = feasible_rwls(dataset, "c", 1)
        assert fit.restriction_residual <= 1e-9 * (1 + np.abs(fit.gamma).max())


class TestFeasibleRwls:
    def test_constant_outcomes_give_zero_contrasts(self):
        design = four_seq_design()
        dataset = ObservedDataset(
            design, template_labels(design), np.full((design.n_units, 2), 4.2)
        )
        fit = feasible_rwls(dataset, "b", 1)
        spec = stack(
            [instantaneous_effect(1, "", design.scope), instantaneous_effect(2, "A", design.scope)]
        )
        assert np.allclose(point_estimate(fit, spec), 0.0, atol=1e-9)

    def test_user_weights_match_two_step_pipeline(self, rng):
        design = four_seq_design()
        dataset = make_dataset(design, rng)
        model = sample_covariances(dataset)
        via_string = feasible_rwls(dataset, "b", 1, "sample")
        via_model = feasible_rwls(dataset, "b", 1, model)
        assert np.allclose(via_string.gamma, via_model.gamma, atol=1e-12)

    def test_consistency_at_large_n(self):
        # the fitted coefficients approach the table means
        design = CrossoverDesign(2, {"AA": 2500, "AB": 2500, "BA": 2500, "BB": 2500})
        table = random_consistent_table(2, "b", 1, design.n_units, seed=31)
        from crossover import sample_assignment

        dataset = realize_dataset(table, sample_assignment(design, 77))
        fit = feasible_rwls(dataset, "b", 1)
        layout = fit.layout
        for z in design.scope:
            gap = np.abs(fit.gamma[layout.block(z)] - table.mean_vector(z)).max()
            assert gap < 0.05


class TestEhwCovariance:
    def test_zero_residuals_zero_matrix(self):
        design = CrossoverDesign(2, {"AB": 2, "BA": 2})
        outcomes = np.array([[1.0, 2.0], [1.0, 2.0], [3.0, 1.0], [3.0, 1.0]])
        dataset = ObservedDataset(design, template_labels(design), outcomes)
        fit = feasible_rwls(dataset, "b", 1, diagonal_weights(design))
        assert np.allclose(fit.ehw, 0.0, atol=1e-18)

    def test_matches_dense_assembly(self, rng):
        design = four_seq_design((2, 2, 2, 2))
        dataset = make_dataset(design, rng)
        fit = feasible_rwls(dataset, "b", 1)
        dense = dense_sandwich(dataset, fit)
        assert np.allclose(fit.ehw, dense, atol=1e-10)

    def test_symmetric_psd(self, rng):
        design = four_seq_design()
        dataset = make_dataset(design, rng)
        fit = feasible_rwls(dataset, "c", 1)
        ehw = fit.ehw
        assert np.allclose(ehw, ehw.T, atol=1e-12)
        assert np.linalg.eigvalsh(ehw).min() >= -1e-12

    def test_public_wrapper_recomputes(self, rng):
        design = four_seq_design()
        dataset = make_dataset(design, rng)
        fit = feasible_rwls(dataset, "b", 1)
        again = ehw_covariance(fit, dataset)
        assert np.allclose(again, fit.ehw, atol=1e-15)

    def test_small_sample_scale_inflates_by_dof_ratio(self, rng):
        design = four_seq_design()
        dataset = make_dataset(design, rng)
        plain = feasible_rwls(dataset, "b", 1)
        scaled = feasible_rwls(dataset, "b", 1, small_sample_scale=True)
        n = dataset.n_units
        free = plain.layout.size - plain.restriction.n_rows
        assert np.allclose(scaled.ehw, plain.ehw * n / (n - free), atol=1e-12)


class TestEstimate:
    def test_zero_spec_rows_are_exact_zeroes(self, rng):
        design = four_seq_design()
        dataset = make_dataset(design, rng)
        fit = feasible_rwls(dataset, "b", 1)
        spec = carryover_effect(2, 1, "", "A", design.scope)
        result = estimate(fit, spec)
        assert result.point[0] == 0.0
        assert result.std_errors[0] == 0.0
        assert result.ci_lower[0] == 0.0 == result.ci_upper[0]

    def test_confidence_interval_uses_normal_quantile(self, rng):
        design = four_seq_design()
        dataset = make_dataset(design, rng)
        fit = feasible_rwls(dataset, "a", None)
        spec = instantaneous_effect(1, "", design.scope)
        result = estimate(fit, spec, level=0.95)
        half = result.ci_upper[0] - result.point[0]
        assert half == pytest.approx(1.959963984540054 * result.std_errors[0], rel=1e-12)

    def test_spec_outside_scope_rejected(self, rng):
        design = CrossoverDesign(2, {"AB": 3, "BA": 3}, scope=("AB", "BA"))
        dataset = make_dataset(design, rng)
        fit = feasible_rwls(dataset, "b", 1)
        foreign = instantaneous_effect(2, "A", full_sequence_set(2))
        with pytest.raises(ValueError):
            estimate(fit, foreign)


class TestDesignBasedProperties:
    def test_exact_unbiasedness_with_fixed_weights(self):
        design = CrossoverDesign(2, {"AB": 2, "BA": 2})
        table = random_consistent_table(2, "b", 1, 4, seed=13)
        weights = WeightModel({z: table.covariance(z) for z in design.observed}, "user")
        restriction = assemble("b", 2, design.scope, 1)
        spec = stack(
            [instantaneous_effect(1, "", design.scope), instantaneous_effect(2, "A", design.scope)]
        )
        points = []
        for assignment in enumerate_assignments(design):
            dataset = realize_dataset(table, assignment)
            fit = solve_restricted_wls(design, sequence_means(dataset), weights, restriction)
            points.append(point_estimate(fit, spec))
        mean = np.mean(points, axis=0)
        assert np.abs(mean - true_value(spec, table)).max() < 1e-9

    def test_blue_dominates_plug_in(self):
        # with true weights, the engine's period-2 contrast beats the plain
        # group-mean difference whenever the periods are correlated
        design = CrossoverDesign(2, {"AA": 2, "AB": 2, "BA": 2, "BB": 2})
        table = random_consistent_table(2, "a", 1, 8, seed=23)
        weights = WeightModel({z: table.covariance(z) for z in design.observed}, "user")
        restriction = assemble("a", 2, design.scope)
        spec = instantaneous_effect(2, "A", design.scope)
        engine_points = []
        plug_in_points = []
        for assignment in enumerate_assignments(design):
            dataset = realize_dataset(table, assignment)
            means = sequence_means(dataset)
            fit = solve_restricted_wls(design, means, weights, restriction)
            engine_points.append(point_estimate(fit, spec)[0])
            plug_in_points.append(means[as_sequence("AA")][1] - means[as_sequence("AB")][1])
        assert np.var(engine_points) <= np.var(plug_in_points) + 1e-9

    def test_variance_identity_with_fixed_weights(self):
        design = CrossoverDesign(2, {"AB": 2, "BA": 2})
        table = random_consistent_table(2, "c", 1, 4, seed=37)
        weights = WeightModel({z: table.covariance(z) for z in design.observed}, "user")
        restriction = assemble("c", 2, design.scope, 1)
        spec = instantaneous_effect(1, "", design.scope)
        points = []
        base = None
        for assignment in enumerate_assignments(design):
            dataset = realize_dataset(table, assignment)
            fit = solve_restricted_wls(design, sequence_means(dataset), weights, restriction)
            base = base or fit
            points.append(point_estimate(fit, spec)[0])
        empirical = np.var(points)
        formula = oracle_variance(base, spec, table)[0, 0]
        assert empirical == pytest.approx(formula, abs=1e-9)

    def test_matched_pair_equivalence_through_engine(self, rng):
        from crossover.twoperiod import paired_difference_estimate

        design = CrossoverDesign(2, {"AB": 5, "BA": 5})
        dataset = make_dataset(design, rng)
        fit = feasible_rwls(dataset, "b", 1)
        spec = marginal_effect(
            [instantaneous_effect(1, "", design.scope), instantaneous_effect(2, "A", design.scope)],
            labels=("average_effect",),
        )
        engine = point_estimate(fit, spec)[0]
        assert engine == pytest.approx(paired_difference_estimate(dataset), abs=1e-10)
