from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.errors import (
    DimensionMismatch,
    EmptyDistribution,
    InvalidKernel,
    InvalidPairing,
    NotNormalized,
    SizeCapExceeded,
)
from src.ipm import (
    EmpiricalDistribution,
    KernelSpec,
    MetricSpace,
    mmd_squared,
    mmd_squared_with_diagnostics,
    sandwich_bounds,
    wasserstein_1d_exact,
    wasserstein_lp,
)

from .conftest import samples_1d


def dist(*values: float) -> EmpiricalDistribution:
    return EmpiricalDistribution.from_samples(list(values))


def test_empty_distribution_rejected():
    with pytest.raises(EmptyDistribution):
        EmpiricalDistribution.from_samples([])


def test_weights_must_sum_to_one():
    with pytest.raises(NotNormalized):
        EmpiricalDistribution(np.array([0.0, 1.0]), np.array([0.6, 0.6]))
    normalized = EmpiricalDistribution.from_samples([0.0, 1.0], [3.0, 1.0], normalize=True)
    assert normalized.weights.tolist() == [0.75, 0.25]


@pytest.mark.parametrize(
    "a,b,expected",
    [
        ((0.0,), (0.0,), 0.0),
        ((0.0,), (3.0,), 3.0),
        ((0.0, 2.0), (1.0, 3.0), 1.0),
    ],
)
@pytest.mark.parametrize("method", ["network-simplex", "dual-lp"])
def test_wasserstein_lp_small_cases(a, b, expected, method):
    assert wasserstein_lp(dist(*a), dist(*b), method=method) == pytest.approx(expected, abs=1e-9)


def test_wasserstein_exact_small_cases():
    assert wasserstein_1d_exact(dist(0.0, 2.0), dist(1.0, 3.0)) == pytest.approx(1.0)
    assert wasserstein_1d_exact(dist(4.0, -1.0, 2.0), dist(4.0, -1.0, 2.0)) == 0.0
    assert wasserstein_1d_exact(dist(0.0), dist(5.0)) == pytest.approx(5.0)


def test_lp_size_cap():
    a = dist(*range(6))
    b = dist(*range(6))
    with pytest.raises(SizeCapExceeded) as info:
        wasserstein_lp(a, b, cap=10)
    assert info.value.total == 12
    assert info.value.cap == 10


def test_exact_needs_one_dimension():
    plane = EmpiricalDistribution(np.array([[0.0, 1.0]]))
    with pytest.raises(DimensionMismatch):
        wasserstein_1d_exact(plane, plane)
    with pytest.raises(DimensionMismatch):
        wasserstein_lp(plane, dist(0.0))


def test_lp_in_the_plane_uses_euclidean_cost():
    a = EmpiricalDistribution(np.array([[0.0, 0.0]]))
    b = EmpiricalDistribution(np.array([[3.0, 4.0]]))
    assert wasserstein_lp(a, b) == pytest.approx(5.0)
    assert wasserstein_lp(a, b, method="dual-lp") == pytest.approx(5.0, abs=1e-7)


def test_custom_metric_is_respected():
    taxicab = MetricSpace(2, distance=lambda u, v: float(np.abs(u - v).sum()))
    a = EmpiricalDistribution(np.array([[0.0, 0.0]]))
    b = EmpiricalDistribution(np.array([[3.0, 4.0]]))
    assert wasserstein_lp(a, b, taxicab) == pytest.approx(7.0)
    assert taxicab.check_axioms(np.random.default_rng(0).normal(size=(20, 2)))


def test_check_axioms_flags_a_non_metric():
    squared = MetricSpace(1, distance=lambda u, v: float((u - v) @ (u - v)))
    assert not squared.check_axioms(np.linspace(0.0, 10.0, 11))


@settings(max_examples=60, deadline=None)
@given(samples_1d(max_size=24), samples_1d(max_size=24))
def test_lp_matches_exact_oracle(xs, ys):
    a = EmpiricalDistribution.from_samples(xs)
    b = EmpiricalDistribution.from_samples(ys)
    exact = wasserstein_1d_exact(a, b)
    assert wasserstein_lp(a, b) == pytest.approx(exact, abs=1e-7)


@settings(max_examples=25, deadline=None)
@given(samples_1d(max_size=12), samples_1d(max_size=12))
def test_dual_lp_matches_exact_oracle(xs, ys):
    a = EmpiricalDistribution.from_samples(xs)
    b = EmpiricalDistribution.from_samples(ys)
    exact = wasserstein_1d_exact(a, b)
    assert wasserstein_lp(a, b, method="dual-lp") == pytest.approx(exact, abs=1e-6)


def test_mmd_two_atoms():
    assert mmd_squared(dist(0.0), dist(1.0), KernelSpec(1.0)) == pytest.approx(
        2.0 - 2.0 * math.exp(-0.5), abs=1e-6
    )
    assert mmd_squared(dist(0.0), dist(1.0), KernelSpec(1.0)) == pytest.approx(0.786939, abs=1e-6)


def test_mmd_identical_multisets_vanish():
    result = mmd_squared_with_diagnostics(dist(0.0, 1.0), dist(1.0, 0.0), KernelSpec(1.0))
    assert result.value == pytest.approx(0.0, abs=1e-12)
    assert result.value >= 0.0
    if result.raw < 0:
        assert result.clamped


def test_kernel_validation():
    with pytest.raises(InvalidKernel):
        KernelSpec(0.0)
    with pytest.raises(InvalidKernel):
        KernelSpec(1.0, family="laplace")  # type: ignore[arg-type]


def test_median_heuristic():
    kernel = KernelSpec.median_heuristic(dist(0.0, 1.0), dist(3.0))
    # pairwise distances 1, 3, 2
    assert kernel.bandwidth == pytest.approx(2.0)
    assert KernelSpec.median_heuristic(dist(2.0), dist(2.0)).bandwidth == 1.0


def test_mmd_shrinks_with_sample_size():
    rng = np.random.default_rng(3)
    kernel = KernelSpec(1.0)
    medians = []
    for n in (100, 400, 1600):
        values = [
            mmd_squared(
                EmpiricalDistribution.from_samples(rng.normal(size=n)),
                EmpiricalDistribution.from_samples(rng.normal(size=n)),
                kernel,
            )
            for _ in range(30)
        ]
        medians.append(float(np.median(values)))
    assert medians[0] > 2.5 * medians[1]
    assert medians[1] > 2.5 * medians[2]


@pytest.mark.parametrize(
    "a,b,expected",
    [
        ((0.0,), (3.0,), (3.0, 3.0)),
        ((-1.0, 1.0), (-1.0, 1.0), (0.0, 0.0)),
        ((0.0, 2.0), (1.0, 3.0), (1.0, 1.0)),
    ],
)
def test_sandwich_examples(a, b, expected):
    bounds = sandwich_bounds(dist(*a), dist(*b))
    assert bounds.lower == pytest.approx(expected[0])
    assert bounds.upper == pytest.approx(expected[1])


def test_sandwich_with_explicit_pairing():
    a = dist(0.0, 2.0)
    b = dist(1.0, 3.0)
    crossed = sandwich_bounds(a, b, pairing=[(0, 1), (1, 0)])
    # 0 -> 3 and 2 -> 1: E[(x - y)^2] = (9 + 1) / 2
    assert crossed.upper == pytest.approx(math.sqrt(5.0))
    assert crossed.lower == pytest.approx(1.0)


def test_sandwich_rejects_bad_pairings():
    a = dist(0.0, 2.0)
    b = dist(1.0, 3.0)
    with pytest.raises(InvalidPairing):
        sandwich_bounds(a, b, pairing=[(0, 0)])
    with pytest.raises(InvalidPairing):
        sandwich_bounds(a, b, pairing=[(0, 5), (1, 1)])
    with pytest.raises(InvalidPairing):
        sandwich_bounds(a, b, pairing=[])


@settings(max_examples=150, deadline=None)
@given(samples_1d(), samples_1d())
def test_sandwich_contains_exact_value(xs, ys):
    a = EmpiricalDistribution.from_samples(xs)
    b = EmpiricalDistribution.from_samples(ys)
    bounds = sandwich_bounds(a, b)
    exact = wasserstein_1d_exact(a, b)
    assert bounds.lower <= exact + 1e-9
    assert exact <= bounds.upper + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(min_value=0.01, max_value=1.0), min_size=2, max_size=8))
def test_weighted_lp_matches_exact(raw_weights):
    points = np.arange(len(raw_weights), dtype=float)
    a = EmpiricalDistribution.from_samples(points, raw_weights, normalize=True)
    b = EmpiricalDistribution.from_samples(points[::-1] * 0.5)
    assert wasserstein_lp(a, b) == pytest.approx(wasserstein_1d_exact(a, b), abs=1e-7)
