"""Integral probability metrics between finite weighted point sets.

Two estimators are exposed: the Wasserstein-1 distance (solved as a transportation
problem with POT's network simplex, or literally as the Lipschitz dual LP with HiGHS)
and the squared maximum mean discrepancy under a Gaussian kernel. The exact 1-D
Wasserstein value and the mean/second-moment sandwich bounds serve as oracles.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Literal, NamedTuple, Sequence

import numpy as np
import ot
from scipy import sparse
from scipy.optimize import linprog
from scipy.spatial.distance import cdist, pdist
from scipy.stats import wasserstein_distance

from .errors import (
    DimensionMismatch,
    EmptyDistribution,
    InvalidKernel,
    InvalidPairing,
    NotNormalized,
    SizeCapExceeded,
    SolverNonConvergence,
)


DEFAULT_LP_CAP = 2000
SOLVER_TOLERANCE = 1e-9
_WEIGHT_TOLERANCE = 1e-12
_MEDIAN_HEURISTIC_MAX_POINTS = 1000

LpMethod = Literal["network-simplex", "dual-lp"]


@dataclass(frozen=True)
class MetricSpace:
    dimension: int
    distance: Callable[[np.ndarray, np.ndarray], float] | None = None

    def __post_init__(self) -> None:
        if int(self.dimension) < 1:
            raise ValueError("dimension must be a positive integer")

    @classmethod
    def euclidean(cls, dimension: int = 1) -> "MetricSpace":
        return cls(dimension=dimension)

    @property
    def is_euclidean(self) -> bool:
        return self.distance is None

    def pairwise(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.dimension)
        y = np.asarray(y, dtype=float).reshape(-1, self.dimension)
        if self.distance is None:
            return cdist(x, y, "euclidean")
        return cdist(x, y, self.distance)

    def check_axioms(
        self,
        points: np.ndarray,
        trials: int = 200,
        seed: int = 0,
        atol: float = 1e-9,
    ) -> bool:
        """Spot-check identity, symmetry and the triangle inequality on random triples."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dimension)
        if len(pts) == 0:
            return True
        rng = np.random.default_rng(seed)
        for _ in range(trials):
            p, q, r = pts[rng.integers(0, len(pts), size=3)]
            d = self.pairwise(np.vstack([p, q, r]), np.vstack([p, q, r]))
            if abs(d[0, 0]) > atol:
                return False
            if abs(d[0, 1] - d[1, 0]) > atol:
                return False
            if d[0, 1] > d[0, 2] + d[2, 1] + atol:
                return False
        return True


@dataclass(frozen=True)
class EmpiricalDistribution:
    points: np.ndarray
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise EmptyDistribution("distribution has no points")
        if self.weights is None:
            weights = np.full(pts.shape[0], 1.0 / pts.shape[0])
        else:
            weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if weights.shape[0] != pts.shape[0]:
            raise ValueError("weights and points differ in length")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise NotNormalized("weights must be finite and nonnegative")
        if abs(weights.sum() - 1.0) > _WEIGHT_TOLERANCE:
            raise NotNormalized(f"weights sum to {weights.sum()!r}, expected 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_samples(
        cls,
        values: Iterable[float] | np.ndarray,
        weights: Sequence[float] | np.ndarray | None = None,
        normalize: bool = False,
    ) -> "EmpiricalDistribution":
        pts = np.asarray(values, dtype=float)
        if pts.size == 0:
            raise EmptyDistribution("distribution has no points")
        if weights is not None and normalize:
            w = np.asarray(weights, dtype=float)
            total = w.sum()
            if total <= 0:
                raise NotNormalized("weights sum to zero")
            weights = w / total
        return cls(pts, weights)

    @property
    def dimension(self) -> int:
        return int(self.points.shape[1])

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def mean(self) -> np.ndarray:
        return self.weights @ self.points


@dataclass(frozen=True)
class KernelSpec:
    bandwidth: float
    family: Literal["gaussian"] = "gaussian"

    def __post_init__(self) -> None:
        if self.family != "gaussian":
            raise InvalidKernel(f"unsupported kernel family: {self.family}")
        if not np.isfinite(self.bandwidth) or self.bandwidth <= 0:
            raise InvalidKernel(f"bandwidth must be > 0, got {self.bandwidth!r}")

    @classmethod
    def median_heuristic(
        cls,
        a: EmpiricalDistribution,
        b: EmpiricalDistribution,
        space: MetricSpace | None = None,
    ) -> "KernelSpec":
        pooled = np.vstack([a.points, b.points])
        if len(pooled) > _MEDIAN_HEURISTIC_MAX_POINTS:
            step = int(np.ceil(len(pooled) / _MEDIAN_HEURISTIC_MAX_POINTS))
            pooled = pooled[::step]
        if space is None or space.is_euclidean:
            dists = pdist(pooled, "euclidean")
        else:
            dists = pdist(pooled, space.distance)
        positive = dists[dists > 0]
        if positive.size == 0:
            return cls(bandwidth=1.0)
        return cls(bandwidth=float(np.median(positive)))

    def gram(self, x: np.ndarray, y: np.ndarray, space: MetricSpace) -> np.ndarray:
        d = space.pairwise(x, y)
        return np.exp(-0.5 * (d / self.bandwidth) ** 2)


class MmdResult(NamedTuple):
    value: float
    raw: float
    clamped: bool


class Bounds(NamedTuple):
    lower: float
    upper: float


def _space_for(
    a: EmpiricalDistribution,
    b: EmpiricalDistribution,
    space: MetricSpace | None,
) -> MetricSpace:
    if a.dimension != b.dimension:
        raise DimensionMismatch(
            f"distributions live in dimensions {a.dimension} and {b.dimension}"
        )
    if space is None:
        return MetricSpace.euclidean(a.dimension)
    if space.dimension != a.dimension:
        raise DimensionMismatch(
            f"metric space has dimension {space.dimension}, points have {a.dimension}"
        )
    return space


def wasserstein_lp(
    a: EmpiricalDistribution,
    b: EmpiricalDistribution,
    space: MetricSpace | None = None,
    *,
    method: LpMethod = "network-simplex",
    cap: int = DEFAULT_LP_CAP,
    max_iter: int = 1_000_000,
) -> float:
    """Wasserstein-1 distance between two empirical distributions.

    ``network-simplex`` solves the primal transportation problem (exact, the default);
    ``dual-lp`` solves the Lipschitz dual with one pair of constraints per point pair.
    Both return the same optimum up to solver tolerance.
    """
    space = _space_for(a, b, space)
    total = len(a) + len(b)
    if total > cap:
        raise SizeCapExceeded(total, cap)
    if method == "network-simplex":
        value = _solve_transport(a, b, space, max_iter)
    elif method == "dual-lp":
        value = _solve_dual_lp(a, b, space, max_iter)
    else:
        raise ValueError(f"unknown LP method: {method}")
    return max(0.0, float(value))


def _solve_transport(
    a: EmpiricalDistribution,
    b: EmpiricalDistribution,
    space: MetricSpace,
    max_iter: int,
) -> float:
    cost = np.ascontiguousarray(space.pairwise(a.points, b.points), dtype=np.float64)
    value, log = ot.emd2(
        np.ascontiguousarray(a.weights, dtype=np.float64),
        np.ascontiguousarray(b.weights, dtype=np.float64),
        cost,
        numItermax=max_iter,
        log=True,
    )
    warning = log.get("warning") if isinstance(log, dict) else None
    if warning:
        raise SolverNonConvergence(f"network simplex stopped early: {warning}")
    return float(value)


def _solve_dual_lp(
    a: EmpiricalDistribution,
    b: EmpiricalDistribution,
    space: MetricSpace,
    max_iter: int,
) -> float:
    log = logging.getLogger(__name__)
    pooled = np.vstack([a.points, b.points])
    n = pooled.shape[0]
    objective = -np.concatenate([a.weights, -b.weights])
    dist = space.pairwise(pooled, pooled)
    rows, cols = np.triu_indices(n, k=1)
    m = rows.shape[0]
    if m == 0:
        return 0.0
    # alpha_p - alpha_q <= d(p, q) and alpha_q - alpha_p <= d(p, q)
    row_ids = np.repeat(np.arange(2 * m), 2)
    col_ids = np.empty(4 * m, dtype=int)
    col_ids[0::4] = rows
    col_ids[1::4] = cols
    col_ids[2::4] = cols
    col_ids[3::4] = rows
    values = np.tile([1.0, -1.0], 2 * m)
    a_ub = sparse.csr_matrix((values, (row_ids, col_ids)), shape=(2 * m, n))
    b_ub = np.repeat(dist[rows, cols], 2)
    # potentials are defined up to a constant
    bounds = [(0.0, 0.0)] + [(None, None)] * (n - 1)
    result = linprog(
        objective,
        A_ub=a_ub,
        b_ub=b_ub,
        bounds=bounds,
        method="highs-ds",
        options={
            "maxiter": max_iter,
            "primal_feasibility_tolerance": SOLVER_TOLERANCE,
            "dual_feasibility_tolerance": SOLVER_TOLERANCE,
        },
    )
    if result.status != 0:
        raise SolverNonConvergence(
            f"dual LP did not reach optimality: status={result.status} message={result.message}"
        )
    log.debug("Dual LP solved: points=%s constraints=%s iterations=%s", n, 2 * m, result.nit)
    return float(-result.fun)


def wasserstein_1d_exact(a: EmpiricalDistribution, b: EmpiricalDistribution) -> float:
    if a.dimension != 1 or b.dimension != 1:
        raise DimensionMismatch("exact Wasserstein needs 1-D distributions")
    return float(
        wasserstein_distance(a.points[:, 0], b.points[:, 0], a.weights, b.weights)
    )


def mmd_squared_with_diagnostics(
    a: EmpiricalDistribution,
    b: EmpiricalDistribution,
    kernel: KernelSpec,
    space: MetricSpace | None = None,
) -> MmdResult:
    space = _space_for(a, b, space)
    k_aa = kernel.gram(a.points, a.points, space)
    k_bb = kernel.gram(b.points, b.points, space)
    k_ab = kernel.gram(a.points, b.points, space)
    raw = float(
        a.weights @ k_aa @ a.weights
        + b.weights @ k_bb @ b.weights
        - 2.0 * (a.weights @ k_ab @ b.weights)
    )
    if raw < 0.0:
        return MmdResult(value=0.0, raw=raw, clamped=True)
    return MmdResult(value=raw, raw=raw, clamped=False)


def mmd_squared(
    a: EmpiricalDistribution,
    b: EmpiricalDistribution,
    kernel: KernelSpec,
    space: MetricSpace | None = None,
) -> float:
    return mmd_squared_with_diagnostics(a, b, kernel, space).value


def _quantile_coupling(
    a: EmpiricalDistribution, b: EmpiricalDistribution
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    order_a = np.argsort(a.points[:, 0], kind="stable")
    order_b = np.argsort(b.points[:, 0], kind="stable")
    xa = a.points[order_a, 0]
    xb = b.points[order_b, 0]
    cum_a = np.cumsum(a.weights[order_a])
    cum_b = np.cumsum(b.weights[order_b])
    cum_a[-1] = 1.0
    cum_b[-1] = 1.0
    breaks = np.union1d(cum_a, cum_b)
    masses = np.diff(np.concatenate([[0.0], breaks]))
    keep = masses > 0
    breaks = breaks[keep]
    masses = masses[keep]
    mids = breaks - masses / 2.0
    idx_a = np.minimum(np.searchsorted(cum_a, mids, side="right"), len(xa) - 1)
    idx_b = np.minimum(np.searchsorted(cum_b, mids, side="right"), len(xb) - 1)
    return xa[idx_a], xb[idx_b], masses


def _explicit_coupling(
    a: EmpiricalDistribution,
    b: EmpiricalDistribution,
    pairing: Sequence[tuple],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not pairing:
        raise InvalidPairing("pairing is empty")
    xs: list[float] = []
    ys: list[float] = []
    masses: list[float] = []
    mass_a = np.zeros(len(a))
    mass_b = np.zeros(len(b))
    for item in pairing:
        if len(item) == 2:
            ia, ib = item
            mass = float(a.weights[ia]) if 0 <= ia < len(a) else -1.0
        elif len(item) == 3:
            ia, ib, mass = item
        else:
            raise InvalidPairing(f"pairing entries are (ia, ib[, mass]), got {item!r}")
        if not (0 <= ia < len(a) and 0 <= ib < len(b)):
            raise InvalidPairing(f"pairing index out of range: {item!r}")
        if mass < 0:
            raise InvalidPairing(f"negative coupling mass: {item!r}")
        mass_a[ia] += mass
        mass_b[ib] += mass
        xs.append(float(a.points[ia, 0]))
        ys.append(float(b.points[ib, 0]))
        masses.append(float(mass))
    if not (np.allclose(mass_a, a.weights, atol=1e-9) and np.allclose(mass_b, b.weights, atol=1e-9)):
        raise InvalidPairing("pairing marginals do not match the distribution weights")
    return np.asarray(xs), np.asarray(ys), np.asarray(masses)


def sandwich_bounds(
    a: EmpiricalDistribution,
    b: EmpiricalDistribution,
    pairing: Sequence[tuple] | None = None,
) -> Bounds:
    """Mean-gap lower bound and coupling second-moment upper bound on W1 (1-D).

    The default coupling is the sorted (quantile) pairing, which also handles unequal
    sizes and weights.
    """
    if a.dimension != 1 or b.dimension != 1:
        raise DimensionMismatch("sandwich bounds need 1-D distributions")
    lower = abs(float(a.mean()[0] - b.mean()[0]))
    if pairing is None:
        x, y, mass = _quantile_coupling(a, b)
    else:
        x, y, mass = _explicit_coupling(a, b, pairing)
    # E[x^2] + E[y^2] - 2 E_pi[xy], written as E_pi[(x - y)^2]
    upper = float(np.sqrt(max(0.0, float(mass @ (x - y) ** 2))))
    return Bounds(lower=lower, upper=max(upper, lower))
