from __future__ import annotations

import numpy as np
import polars as pl
import pytest

from src.dataset import Dataset
from src.dependence import (
    EstimatorConfig,
    Stratum,
    adjust_target,
    append_records,
    bin_conditioning,
    conditioning_resolution,
    estimate_coefficient,
    estimate_many,
    estimate_record,
    group_coefficient,
    group_scan,
    strata_of,
)
from src.errors import (
    ColumnOutOfRange,
    EmptyStratum,
    InsufficientSamples,
    NoComparableCells,
)
from src.gaussian import closed_form_coefficient, estimate_covariance, gaussian_cmi, sem_to_covariance
from src.simgen import (
    FunctionalNode,
    FunctionalSystem,
    functional_system_bounds,
    observed_ranges,
    sample_functional_system,
    sample_group_model,
    sample_linear_sem,
    sample_ratio_model,
)


def uniform_frame(n: int, seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    return Dataset(("X", "Z", "Y"), rng.uniform(size=(n, 3)))


def test_bin_conditioning_uniform_cells():
    ds = uniform_frame(100, seed=4)
    partition = bin_conditioning(ds, "X", ["Z"], bins=2, min_occupancy=5)
    assert partition.n_cells == 4
    assert sum(rows.size for rows in partition.cells.values()) == 100
    assert len(partition.comparable_pairs()) == 2
    for (first_k, first_j), (second_k, second_j) in partition.comparable_pairs():
        assert first_k == second_k
        assert first_j != second_j


def test_bin_conditioning_without_k():
    partition = bin_conditioning(uniform_frame(100), "X", (), bins=4, min_occupancy=5)
    assert all(k_bins == () for k_bins, _ in partition.cells)
    assert partition.n_cells == 4


def test_constant_target_has_no_comparable_cells():
    ds = Dataset(("X", "Y"), np.column_stack([np.ones(60), np.arange(60.0)]))
    with pytest.raises(NoComparableCells):
        bin_conditioning(ds, "X", (), bins=2, min_occupancy=5)
    empty = bin_conditioning(ds, "X", (), bins=2, min_occupancy=5, allow_empty=True)
    assert empty.comparable_pairs() == []


def test_unknown_column():
    with pytest.raises(ColumnOutOfRange):
        bin_conditioning(uniform_frame(50), "W", ())


def test_few_distinct_values_are_binned_by_value():
    values = np.column_stack([np.repeat([0.0, 1.0, 2.0], 30), np.arange(90.0)])
    ds = Dataset(("X", "Y"), values)
    partition = bin_conditioning(ds, "X", (), bins=4, min_occupancy=10)
    assert sorted(rows.size for rows in partition.cells.values()) == [30, 30, 30]


def test_linear_coefficient_recovers_slope(linear_pair):
    est = estimate_coefficient(linear_pair, "Y", "X")
    assert est.value == pytest.approx(2.0, abs=0.15)
    assert est.verdict == "dependent"
    assert est.dependent
    assert est.diagnostics.n_pairs == 6


def test_independent_columns_are_independent(independent_pair):
    est = estimate_coefficient(independent_pair, "Y", "X")
    assert est.value >= 0.0
    assert est.value < est.tau
    assert est.verdict == "independent"


@pytest.mark.parametrize("fixture_name,expected", [("linear_pair", "dependent"), ("independent_pair", "independent")])
def test_mmd_estimator_verdicts(request, fixture_name, expected):
    ds = request.getfixturevalue(fixture_name)
    est = estimate_coefficient(ds, "Y", "X", estimator="mmd")
    assert est.estimator == "mmd"
    assert est.verdict == expected


def test_verdict_matches_threshold(linear_pair):
    est = estimate_coefficient(linear_pair, "Y", "X")
    assert est.dependent == (est.value > est.tau)


def test_quantile_aggregation_does_not_exceed_max(linear_pair):
    top = estimate_coefficient(linear_pair, "Y", "X")
    q = estimate_coefficient(
        linear_pair, "Y", "X", config=EstimatorConfig(aggregation="quantile", quantile=0.5)
    )
    assert q.value <= top.value


def test_median_representative_is_selectable(linear_pair):
    est = estimate_coefficient(
        linear_pair, "Y", "X", config=EstimatorConfig(representative="median")
    )
    assert est.value > 1.5


def test_insufficient_samples():
    with pytest.raises(InsufficientSamples) as info:
        estimate_coefficient(uniform_frame(30), "Y", "X")
    assert info.value.need == 40


def test_i_must_differ_from_j():
    with pytest.raises(ValueError):
        estimate_coefficient(uniform_frame(100), "X", "X")


def test_estimate_many_matches_serial(linear_pair):
    queries = [(1, 0, ()), (0, 1, ())]
    serial = estimate_many(linear_pair, queries)
    threaded = estimate_many(linear_pair, queries, EstimatorConfig(workers=2))
    assert [est.value for est in serial] == [est.value for est in threaded]


def test_group_model_strata_coefficients():
    ds = sample_group_model(20_000, seed=2)
    female = group_coefficient(ds, "Y", "X", "C", "female")
    male = group_coefficient(ds, "Y", "X", "C", "male")
    assert female == pytest.approx(2.0, abs=0.25)
    assert male == pytest.approx(3.0, abs=0.35)


def test_ratio_model_scan_ranks_largest_stratum_first():
    ds = sample_ratio_model(30_000, seed=1, m=3)
    scan = group_scan(ds, "Y", "X", "C")
    assert [item.stratum.label for item in scan.ranking] == ["3", "2", "1"]
    assert scan.argmax.label == "3"
    assert scan.supremum == scan.ranking[0].coefficient
    assert scan.supremum == pytest.approx(3.0, abs=0.4)


def test_identical_strata_keep_stable_order():
    rng = np.random.default_rng(9)
    x = rng.normal(size=200)
    y = 2.0 * x + rng.normal(size=200)
    values = np.vstack(
        [np.column_stack([np.zeros(200), x, y]), np.column_stack([np.ones(200), x, y])]
    )
    ds = Dataset(("C", "X", "Y"), values)
    scan = group_scan(ds, "Y", "X", "C")
    assert [item.stratum.label for item in scan.ranking] == ["0", "1"]
    assert scan.ranking[0].coefficient == scan.ranking[1].coefficient


def test_single_stratum_scan():
    rng = np.random.default_rng(1)
    x = rng.normal(size=300)
    ds = Dataset(("C", "X", "Y"), np.column_stack([np.ones(300), x, x + rng.normal(size=300)]))
    scan = group_scan(ds, "Y", "X", "C")
    assert len(scan.ranking) == 1


def test_constant_x_in_stratum():
    rng = np.random.default_rng(2)
    ds = Dataset(("C", "X", "Y"), np.column_stack([np.zeros(100), np.ones(100), rng.normal(size=100)]))
    with pytest.raises(NoComparableCells):
        group_coefficient(ds, "Y", "X", "C", 0.0)


def test_independent_stratum_is_near_zero():
    rng = np.random.default_rng(3)
    n = 8000
    ds = Dataset(("C", "X", "Y"), np.column_stack([np.zeros(n), rng.normal(size=n), rng.normal(size=n)]))
    assert group_coefficient(ds, "Y", "X", "C", 0.0) < 0.15


def test_sparse_stratum_is_empty():
    ds = sample_group_model(200, seed=0)
    with pytest.raises(EmptyStratum):
        group_coefficient(ds, "Y", "X", "C", "male", EstimatorConfig(min_occupancy=150))
    with pytest.raises(EmptyStratum):
        group_coefficient(ds, "Y", "X", "C", "other")


def test_continuous_strata_are_quantile_intervals():
    ds = uniform_frame(400)
    strata = strata_of(ds, "Z", bins=4)
    assert len(strata) == 4
    column = ds.column("Z")
    masks = [stratum.mask(column) for stratum in strata]
    assert sum(int(mask.sum()) for mask in masks) == 400
    assert all(isinstance(stratum, Stratum) and stratum.interval for stratum in strata)


def test_append_records(tmp_path, linear_pair):
    est = estimate_coefficient(linear_pair, "Y", "X")
    record = estimate_record(linear_pair, est)
    assert record["K"] == ""
    path = str(tmp_path / "estimates.csv")
    append_records(path, [record])
    frame = append_records(path, [record])
    assert frame.height == 2
    assert pl.read_csv(path).get_column("verdict").to_list() == ["dependent", "dependent"]


def test_conditioning_resolution_grows_with_rows():
    assert conditioning_resolution(10_000, 0) == 1
    assert [conditioning_resolution(n, 1) for n in (2_500, 10_000, 40_000)] == [2, 3, 4]
    assert conditioning_resolution(10_000, 2) == 2
    assert conditioning_resolution(50, 1) == 2
    assert conditioning_resolution(10_000, 1, cond_bins=6) == 6


def test_bin_conditioning_reports_resolution():
    partition = bin_conditioning(uniform_frame(10_000, seed=2), "X", ["Z"])
    assert partition.resolution == 3
    assert set(partition.groups()) == {(0,), (1,), (2,)}
    assert partition.n_cells == 12
    assert len(partition.comparable_pairs()) == 18
    assert set(partition.j_edges) == {(0,), (1,), (2,)}


def test_discrete_conditioning_column_keeps_every_level():
    rng = np.random.default_rng(6)
    n = 3000
    values = np.column_stack([rng.normal(size=n), rng.integers(0, 3, n).astype(float), rng.normal(size=n)])
    partition = bin_conditioning(Dataset(("X", "Z", "Y"), values), "X", ["Z"])
    assert partition.resolution == 2
    assert set(partition.groups()) == {(0,), (1,), (2,)}


def test_adjustment_removes_within_group_linear_trend():
    rng = np.random.default_rng(12)
    n = 4000
    z = rng.normal(size=n)
    x = rng.normal(size=n)
    values = np.column_stack([x, z, 3.0 * z])
    ds = Dataset(("X", "Z", "Y"), values)
    partition = bin_conditioning(ds, "X", ["Z"])
    adjusted = adjust_target(ds.column("Y"), ds.column("X"), ds.values[:, [1]], partition, "location")
    for keys in partition.groups().values():
        rows = np.concatenate([partition.cells[key] for key in keys])
        assert np.ptp(adjusted[rows]) < 1e-8
    untouched = adjust_target(ds.column("Y"), ds.column("X"), ds.values[:, [1]], partition, "none")
    assert np.array_equal(untouched, ds.column("Y"))


def test_chain_is_independent_given_the_middle(chain_sem):
    ds = sample_linear_sem(chain_sem, 10_000, seed=4)
    est = estimate_coefficient(ds, "Z", "X", ["Y"])
    assert est.verdict == "independent"
    assert est.diagnostics.resolution == 3
    leaky = estimate_coefficient(ds, "Z", "X", ["Y"], config=EstimatorConfig(adjustment="none"))
    assert leaky.verdict == "dependent"
    assert est.value < leaky.value


@pytest.mark.slow
def test_conditional_estimate_approaches_closed_form(chain_sem):
    # E[Y | X, Z] = (X + Z) / 2 for the unit chain
    truth = closed_form_coefficient(sem_to_covariance(chain_sem), 1, 0, (2,))
    assert truth == pytest.approx(0.5)
    errors = {}
    for n in (2_500, 160_000):
        values = [
            estimate_coefficient(sample_linear_sem(chain_sem, n, seed=seed), "Y", "X", ["Z"]).value
            for seed in range(5)
        ]
        errors[n] = float(np.mean(np.abs(np.asarray(values) - truth)))
    assert errors[160_000] < 0.75 * errors[2_500]
    assert errors[160_000] < 0.12


@pytest.mark.parametrize("factor", [0.1, 10.0])
def test_rescaling_the_source_rescales_the_coefficient(linear_pair, factor):
    scaled = Dataset(
        linear_pair.columns, linear_pair.values * np.array([factor, 1.0]), linear_pair.provenance
    )
    base = estimate_coefficient(linear_pair, "Y", "X")
    moved = estimate_coefficient(scaled, "Y", "X")
    assert moved.value == pytest.approx(base.value / factor, rel=0.05)
    assert moved.verdict == base.verdict


def test_coefficient_is_asymmetric(linear_pair):
    forward = estimate_coefficient(linear_pair, "Y", "X")
    backward = estimate_coefficient(linear_pair, "X", "Y")
    # X = 0.4 Y + noise
    assert backward.value == pytest.approx(0.4, abs=0.1)
    assert abs(forward.value - backward.value) > 3.0 * max(forward.tau, backward.tau)


def test_estimate_lies_between_functional_bounds():
    system = FunctionalSystem(
        (
            FunctionalNode("X", noise="uniform"),
            FunctionalNode(
                "Y",
                ("X",),
                location=lambda pa: 1.5 * pa[:, 0],
                scale=lambda pa: 1.0 + 0.25 * pa[:, 0],
            ),
        )
    )
    ds = sample_functional_system(system, 10_000, seed=8)
    bounds = functional_system_bounds(system, "Y", "X", ranges=observed_ranges(ds))
    est = estimate_coefficient(ds, "Y", "X")
    assert bounds.lower == pytest.approx(1.5)
    assert bounds.lower - 3.0 * est.tau <= est.value <= bounds.upper + 3.0 * est.tau


def test_ratio_model_strata_share_gaussian_cmi():
    ds = sample_ratio_model(30_000, seed=5, m=3)
    c = ds.column("C")
    for level in np.unique(c):
        sub = ds.select_rows(np.flatnonzero(c == level))
        model = estimate_covariance(Dataset(("X", "Y"), sub.values[:, [1, 2]]))
        assert gaussian_cmi(model, 0, 1) == pytest.approx(0.5 * np.log(2.0), abs=0.03)
    scan = group_scan(ds, "Y", "X", "C")
    assert [item.stratum.label for item in scan.ranking] == ["3", "2", "1"]


def test_threshold_multiplier_grows_with_pairs():
    config = EstimatorConfig()
    assert config.multiplier(1) == pytest.approx(0.5 + 1.959964, abs=1e-5)
    assert config.multiplier(1) < config.multiplier(6) < config.multiplier(24)


def test_estimate_reports_multiplier(linear_pair):
    est = estimate_coefficient(linear_pair, "Y", "X")
    assert est.diagnostics.multiplier == pytest.approx(EstimatorConfig().multiplier(6))
