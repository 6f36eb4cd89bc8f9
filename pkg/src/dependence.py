"""Binned estimator of the conditional dependence coefficient and the group scan.

Exact realization matches never occur in continuous data, so each conditioning
variable is cut into equal-frequency bins whose number grows slowly with the sample
size, and inside every conditioning group the target is cut again into
equal-frequency bins. Two cells of one group form a comparable pair. Before the
distances are taken, the part of ``X_i`` that still varies with the conditioning
columns inside a group is regressed out (location, and by default log-scale), so
the comparison sees only the target's contribution. The coefficient is the largest
ratio of the IPM distance between the two conditional laws of ``X_i`` and the
distance between the cells' target representatives.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
import os
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np
import polars as pl
from scipy.stats import norm

from .dataset import Dataset
from .errors import EmptyStratum, InsufficientSamples, NoComparableCells
from .ipm import (
    EmpiricalDistribution,
    KernelSpec,
    mmd_squared_with_diagnostics,
    wasserstein_1d_exact,
)
from .utils import atomic_write_text


Estimator = Literal["wasserstein", "mmd"]
Adjustment = Literal["location-scale", "location", "none"]
GroupKey = tuple[int, ...]
CellKey = tuple[GroupKey, int]

ADJUSTMENTS = ("location-scale", "location", "none")
RESULT_COLUMNS = ["i", "j", "K", "estimator", "value", "tau", "verdict", "n_cells"]
_GAP_EPSILON = 1e-12
_LOG_FLOOR = 1e-3


@dataclass(frozen=True)
class EstimatorConfig:
    estimator: Estimator = "wasserstein"
    bins: int = 4
    # None grows the per-column resolution with the sample size
    cond_bins: int | None = None
    min_occupancy: int = 20
    threshold_c0: float = 0.5
    alpha: float = 0.05
    adjustment: Adjustment = "location-scale"
    # None selects the median heuristic per cell pair
    bandwidth: float | None = None
    aggregation: Literal["max", "quantile"] = "max"
    quantile: float = 0.95
    representative: Literal["mean", "median"] = "mean"
    workers: int = 1

    def __post_init__(self) -> None:
        if self.estimator not in ("wasserstein", "mmd"):
            raise ValueError(f"unknown estimator: {self.estimator}")
        if self.bins < 2:
            raise ValueError("bins must be at least 2")
        if self.cond_bins is not None and self.cond_bins < 2:
            raise ValueError("cond_bins must be at least 2")
        if self.min_occupancy < 1:
            raise ValueError("min_occupancy must be positive")
        if self.threshold_c0 < 0:
            raise ValueError("threshold_c0 must not be negative")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.adjustment not in ADJUSTMENTS:
            raise ValueError(f"unknown adjustment: {self.adjustment}")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.aggregation not in ("max", "quantile"):
            raise ValueError(f"unknown aggregation: {self.aggregation}")
        if not 0.0 < self.quantile <= 1.0:
            raise ValueError("quantile must lie in (0, 1]")
        if self.representative not in ("mean", "median"):
            raise ValueError(f"unknown representative: {self.representative}")
        if self.workers < 1:
            raise ValueError("workers must be positive")

    @classmethod
    def from_run_config(cls, config) -> "EstimatorConfig":
        bandwidth = None if config.bandwidth == "median" else float(config.bandwidth)
        cond_bins = None if config.cond_bins == "auto" else int(config.cond_bins)
        return cls(
            estimator=config.estimator,
            bins=config.bins,
            cond_bins=cond_bins,
            min_occupancy=config.min_occupancy,
            threshold_c0=config.threshold_c0,
            alpha=config.alpha,
            adjustment=config.adjustment,
            bandwidth=bandwidth,
            aggregation=config.aggregation,
            quantile=config.quantile,
            representative=config.representative,
            workers=config.workers,
        )

    def multiplier(self, n_pairs: int) -> float:
        """Threshold multiplier for a maximum taken over ``n_pairs`` cell pairs."""
        return self.threshold_c0 + float(norm.isf(self.alpha / (2.0 * max(1, n_pairs))))


def conditioning_resolution(
    n_rows: int,
    n_conditioning: int,
    bins: int = 4,
    min_occupancy: int = 20,
    cond_bins: int | None = None,
) -> int:
    """Bins per conditioning column.

    A fixed ``cond_bins`` is returned as is. Otherwise the count is the largest
    ``r >= 2`` with ``r ** (k + 3) <= n / (bins * min_occupancy)``: the number of
    groups grows like ``n ** (k / (k + 3))`` and the rows per group like
    ``n ** (3 / (k + 3))``, so both the group width and the within-group noise
    vanish as ``n`` grows.
    """
    if n_conditioning == 0:
        return 1
    if cond_bins is not None:
        return cond_bins
    budget = n_rows / float(bins * min_occupancy)
    if budget <= 1.0:
        return 2
    return max(2, int(np.floor(budget ** (1.0 / (n_conditioning + 3)) + 1e-9)))


@dataclass(frozen=True)
class CellPartition:
    j: int
    K: tuple[int, ...]
    cells: Mapping[CellKey, np.ndarray]
    edges: Mapping[int, np.ndarray]
    min_occupancy: int
    resolution: int = 1
    j_edges: Mapping[GroupKey, np.ndarray] = field(default_factory=dict)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def groups(self) -> dict[GroupKey, list[CellKey]]:
        by_group: dict[GroupKey, list[CellKey]] = {}
        for key in sorted(self.cells):
            by_group.setdefault(key[0], []).append(key)
        return by_group

    def comparable_pairs(self) -> list[tuple[CellKey, CellKey]]:
        pairs: list[tuple[CellKey, CellKey]] = []
        for keys in self.groups().values():
            for pos, first in enumerate(keys):
                for second in keys[pos + 1 :]:
                    pairs.append((first, second))
        return pairs


@dataclass(frozen=True)
class EstimateDiagnostics:
    n_pairs: int
    n_cells: int
    min_cell_size: int
    best_pair: tuple[CellKey, CellKey] | None
    raw_distances: tuple[float, ...]
    skipped_pairs: int = 0
    clamped_mmd: int = 0
    resolution: int = 1
    multiplier: float = 0.0


@dataclass(frozen=True)
class DependenceEstimate:
    value: float
    i: int
    j: int
    K: tuple[int, ...]
    estimator: Estimator
    tau: float
    diagnostics: EstimateDiagnostics = field(compare=False)

    @property
    def verdict(self) -> str:
        return "dependent" if self.value > self.tau else "independent"

    @property
    def dependent(self) -> bool:
        return self.value > self.tau


def _bin_codes(values: np.ndarray, n_bins: int, by_value: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    levels = np.unique(values)
    if levels.size <= max(n_bins, by_value or 0):
        return np.searchsorted(levels, values), levels
    qs = np.quantile(values, np.linspace(0.0, 1.0, n_bins + 1))
    inner = np.unique(qs[1:-1])
    codes = np.searchsorted(inner, values, side="right")
    return codes, np.concatenate([[values.min()], inner, [values.max()]])


def bin_conditioning(
    ds: Dataset,
    j: int | str,
    K: Iterable[int | str] = (),
    bins: int = 4,
    min_occupancy: int = 20,
    cond_bins: int | None = None,
    allow_empty: bool = False,
) -> CellPartition:
    """Group rows by conditioning bins, then cut ``x_j`` inside each group.

    Columns with at most ``bins`` distinct values are binned by value everywhere.
    A continuous ``x_j`` gets ``min(bins, group_size // min_occupancy)``
    equal-frequency bins per group, so every group contributes cells of about
    equal size. Cells below ``min_occupancy`` are dropped.
    """
    log = logging.getLogger(__name__)
    j_idx = ds.index_of(j)
    k_idx = tuple(sorted({ds.index_of(k) for k in K}))
    if j_idx in k_idx:
        raise ValueError("target column must not be in the conditioning set")
    if bins < 2:
        raise ValueError("bins must be at least 2")
    resolution = conditioning_resolution(ds.n_rows, len(k_idx), bins, min_occupancy, cond_bins)

    edges: dict[int, np.ndarray] = {}
    groups: dict[GroupKey, np.ndarray] = {}
    if k_idx:
        code_columns = []
        for idx in k_idx:
            codes, edges[idx] = _bin_codes(ds.values[:, idx], resolution, by_value=bins)
            code_columns.append(codes)
        keys, inverse = np.unique(np.column_stack(code_columns), axis=0, return_inverse=True)
        inverse = np.asarray(inverse).reshape(-1)
        for pos, key in enumerate(keys):
            groups[tuple(int(v) for v in key)] = np.flatnonzero(inverse == pos)
    else:
        groups[()] = np.arange(ds.n_rows)

    x_j = ds.values[:, j_idx]
    levels = np.unique(x_j)
    by_value = levels.size <= bins
    cells: dict[CellKey, np.ndarray] = {}
    j_edges: dict[GroupKey, np.ndarray] = {}
    dropped = 0
    for group, rows in groups.items():
        if by_value:
            codes = np.searchsorted(levels, x_j[rows])
            j_edges[group] = levels
        else:
            n_bins = min(bins, rows.size // min_occupancy)
            if n_bins < 2:
                dropped += 1
                continue
            codes, j_edges[group] = _bin_codes(x_j[rows], n_bins)
        for code in np.unique(codes):
            members = rows[codes == code]
            if members.size < min_occupancy:
                dropped += 1
                continue
            cells[(group, int(code))] = members

    partition = CellPartition(
        j=j_idx,
        K=k_idx,
        cells=cells,
        edges=edges,
        min_occupancy=min_occupancy,
        resolution=resolution,
        j_edges=j_edges,
    )
    log.debug(
        "Cells built: j=%s K=%s resolution=%s groups=%s retained=%s dropped=%s",
        j_idx,
        k_idx,
        resolution,
        len(groups),
        len(cells),
        dropped,
    )
    if not partition.comparable_pairs() and not allow_empty:
        raise NoComparableCells(
            f"no two retained cells share a conditioning bin (j={ds.columns[j_idx]}, "
            f"K={[ds.columns[k] for k in k_idx]}, retained={len(cells)})"
        )
    return partition


def adjust_target(
    x_i: np.ndarray,
    x_j: np.ndarray,
    x_k: np.ndarray,
    partition: CellPartition,
    how: Adjustment = "location-scale",
) -> np.ndarray:
    """Remove the within-group effect of the conditioning columns from ``x_i``.

    Per group, ``x_i`` is fitted by least squares on the cell indicators, the
    within-cell deviation of ``x_j`` and centred linear and quadratic terms of
    ``x_K``; the ``x_K`` terms are subtracted. With ``location-scale`` the log
    absolute residual is then fitted on the cell indicators and ``x_K`` and the
    residual is rescaled to remove the ``x_K`` part of its spread.
    """
    out = np.asarray(x_i, dtype=float).copy()
    if how == "none" or x_k.shape[1] == 0:
        return out
    for keys in partition.groups().values():
        if len(keys) < 2:
            continue
        rows = np.concatenate([partition.cells[key] for key in keys])
        labels = np.concatenate(
            [np.full(partition.cells[key].size, pos) for pos, key in enumerate(keys)]
        )
        onehot = (labels[:, None] == np.arange(len(keys))[None, :]).astype(float)
        xj = x_j[rows]
        cell_means = (onehot.T @ xj) / onehot.sum(axis=0)
        z = x_k[rows] - x_k[rows].mean(axis=0)
        local = np.column_stack([z, z**2 - (z**2).mean(axis=0)])
        design = np.column_stack([onehot, xj - onehot @ cell_means, local])
        target = out[rows]
        coef, *_ = np.linalg.lstsq(design, target, rcond=None)
        resid = target - design @ coef
        adjusted = target - local @ coef[len(keys) + 1 :]
        if how == "location-scale":
            floor = max(_LOG_FLOOR * float(np.std(resid)), 1e-12)
            spread, *_ = np.linalg.lstsq(
                np.column_stack([onehot, z]), np.log(np.abs(resid) + floor), rcond=None
            )
            factor = np.exp(-(z @ spread[len(keys) :]))
            adjusted = adjusted - resid + resid * factor
        out[rows] = adjusted
    return out


def _representative(values: np.ndarray, how: str) -> float:
    if how == "median":
        return float(np.median(values))
    return float(np.mean(values))


def _pooled_sd(first: np.ndarray, second: np.ndarray) -> float:
    dof = first.size + second.size - 2
    if dof <= 0:
        return 0.0
    ss = 0.0
    if first.size > 1:
        ss += float(np.var(first, ddof=1)) * (first.size - 1)
    if second.size > 1:
        ss += float(np.var(second, ddof=1)) * (second.size - 1)
    return float(np.sqrt(ss / dof))


def estimate_coefficient(
    ds: Dataset,
    i: int | str,
    j: int | str,
    K: Iterable[int | str] = (),
    estimator: Estimator | None = None,
    config: EstimatorConfig | None = None,
) -> DependenceEstimate:
    log = logging.getLogger(__name__)
    config = config or EstimatorConfig()
    estimator = estimator or config.estimator
    i_idx = ds.index_of(i)
    j_idx = ds.index_of(j)
    k_idx = tuple(sorted({ds.index_of(k) for k in K}))
    if i_idx == j_idx or i_idx in k_idx:
        raise ValueError("i must differ from j and lie outside K")
    need = 2 * config.min_occupancy
    if ds.n_rows < need:
        raise InsufficientSamples(ds.n_rows, need)

    partition = bin_conditioning(
        ds,
        j_idx,
        k_idx,
        bins=config.bins,
        min_occupancy=config.min_occupancy,
        cond_bins=config.cond_bins,
    )
    x_j = ds.values[:, j_idx]
    x_i = adjust_target(
        ds.values[:, i_idx], x_j, ds.values[:, list(k_idx)], partition, config.adjustment
    )
    scale = max(1.0, float(np.max(np.abs(x_j))))

    ratios: list[float] = []
    spreads: list[float] = []
    distances: list[float] = []
    used_pairs: list[tuple[CellKey, CellKey]] = []
    skipped = 0
    clamped = 0
    for first, second in partition.comparable_pairs():
        rows_a = partition.cells[first]
        rows_b = partition.cells[second]
        gap = abs(
            _representative(x_j[rows_a], config.representative)
            - _representative(x_j[rows_b], config.representative)
        )
        if gap <= _GAP_EPSILON * scale:
            skipped += 1
            log.debug("Skipping cell pair with coincident representatives: %s %s", first, second)
            continue
        sample_a = x_i[rows_a]
        sample_b = x_i[rows_b]
        a = EmpiricalDistribution.from_samples(sample_a)
        b = EmpiricalDistribution.from_samples(sample_b)
        if estimator == "wasserstein":
            distance = wasserstein_1d_exact(a, b)
            kappa = _pooled_sd(sample_a, sample_b)
        else:
            kernel = (
                KernelSpec(config.bandwidth)
                if config.bandwidth is not None
                else KernelSpec.median_heuristic(a, b)
            )
            mmd = mmd_squared_with_diagnostics(a, b, kernel)
            clamped += int(mmd.clamped)
            distance = float(np.sqrt(mmd.value))
            kappa = 1.0
        ratios.append(distance / gap)
        spreads.append(kappa * np.sqrt(1.0 / rows_a.size + 1.0 / rows_b.size) / gap)
        distances.append(distance)
        used_pairs.append((first, second))

    if not ratios:
        raise NoComparableCells("every comparable cell pair has coincident target representatives")

    ratio_arr = np.asarray(ratios)
    if config.aggregation == "quantile":
        value = float(np.quantile(ratio_arr, config.quantile, method="inverted_cdf"))
        best = int(np.flatnonzero(ratio_arr == value)[0])
    else:
        best = int(np.argmax(ratio_arr))
        value = float(ratio_arr[best])
    multiplier = config.multiplier(len(ratios))

    diagnostics = EstimateDiagnostics(
        n_pairs=len(ratios),
        n_cells=partition.n_cells,
        min_cell_size=min(rows.size for rows in partition.cells.values()),
        best_pair=used_pairs[best],
        raw_distances=tuple(distances),
        skipped_pairs=skipped,
        clamped_mmd=clamped,
        resolution=partition.resolution,
        multiplier=multiplier,
    )
    result = DependenceEstimate(
        value=max(0.0, value),
        i=i_idx,
        j=j_idx,
        K=k_idx,
        estimator=estimator,
        tau=float(multiplier * spreads[best]),
        diagnostics=diagnostics,
    )
    log.debug(
        "Coefficient estimated: i=%s j=%s K=%s estimator=%s value=%.6g tau=%.6g verdict=%s pairs=%s resolution=%s",
        ds.columns[i_idx],
        ds.columns[j_idx],
        [ds.columns[k] for k in k_idx],
        estimator,
        result.value,
        result.tau,
        result.verdict,
        len(ratios),
        partition.resolution,
    )
    return result


def estimate_many(
    ds: Dataset,
    queries: Sequence[tuple[int, int, tuple[int, ...]]],
    config: EstimatorConfig | None = None,
) -> list[DependenceEstimate]:
    config = config or EstimatorConfig()

    def _run(query: tuple[int, int, tuple[int, ...]]) -> DependenceEstimate:
        i, j, K = query
        return estimate_coefficient(ds, i, j, K, config=config)

    if config.workers <= 1 or len(queries) <= 1:
        return [_run(query) for query in queries]
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(_run, queries))


@dataclass(frozen=True)
class Stratum:
    label: str
    code: float | None = None
    interval: tuple[float, float] | None = None

    def mask(self, column: np.ndarray) -> np.ndarray:
        if self.interval is not None:
            low, high = self.interval
            return (column >= low) & (column <= high)
        return column == self.code


@dataclass(frozen=True)
class StratumResult:
    stratum: Stratum
    n_rows: int
    estimate: DependenceEstimate

    @property
    def coefficient(self) -> float:
        return self.estimate.value


@dataclass(frozen=True)
class GroupScan:
    ranking: tuple[StratumResult, ...]

    @property
    def supremum(self) -> float:
        return self.ranking[0].coefficient

    @property
    def argmax(self) -> Stratum:
        return self.ranking[0].stratum


def _resolve_stratum(ds: Dataset, c_idx: int, stratum: Stratum | float | str) -> Stratum:
    if isinstance(stratum, Stratum):
        return stratum
    name = ds.columns[c_idx]
    if isinstance(stratum, str) and name in ds.labels:
        levels = ds.labels[name]
        if stratum not in levels:
            raise EmptyStratum(f"stratum {stratum!r} not present in column {name!r}")
        return Stratum(label=stratum, code=float(levels.index(stratum)))
    code = float(stratum)
    return Stratum(label=ds.label_of(c_idx, code), code=code)


def strata_of(ds: Dataset, c: int | str, bins: int = 4) -> list[Stratum]:
    c_idx = ds.index_of(c)
    column = ds.values[:, c_idx]
    levels = np.unique(column)
    if ds.is_categorical(c_idx) or levels.size <= bins:
        return [Stratum(label=ds.label_of(c_idx, level), code=float(level)) for level in levels]
    qs = np.unique(np.quantile(column, np.linspace(0.0, 1.0, bins + 1)))
    strata: list[Stratum] = []
    for pos in range(len(qs) - 1):
        low = float(qs[pos])
        # half-open bins except the last, nudged so boundary rows fall in one stratum
        high = float(qs[pos + 1]) if pos == len(qs) - 2 else float(np.nextafter(qs[pos + 1], -np.inf))
        strata.append(Stratum(label=f"[{low:.4g}, {qs[pos + 1]:.4g}]", interval=(low, high)))
    return strata


def group_estimate(
    ds: Dataset,
    y: int | str,
    x: int | str,
    c: int | str,
    stratum: Stratum | float | str,
    config: EstimatorConfig | None = None,
) -> StratumResult:
    config = config or EstimatorConfig()
    c_idx = ds.index_of(c)
    resolved = _resolve_stratum(ds, c_idx, stratum)
    rows = np.flatnonzero(resolved.mask(ds.values[:, c_idx]))
    if rows.size < config.min_occupancy:
        raise EmptyStratum(
            f"stratum {resolved.label!r} has {rows.size} rows, need {config.min_occupancy}"
        )
    sub = ds.select_rows(rows)
    estimate = estimate_coefficient(sub, y, x, (), config=config)
    return StratumResult(stratum=resolved, n_rows=int(rows.size), estimate=estimate)


def group_coefficient(
    ds: Dataset,
    y: int | str,
    x: int | str,
    c: int | str,
    stratum: Stratum | float | str,
    config: EstimatorConfig | None = None,
) -> float:
    return group_estimate(ds, y, x, c, stratum, config).coefficient


def group_scan(
    ds: Dataset,
    y: int | str,
    x: int | str,
    c: int | str,
    config: EstimatorConfig | None = None,
    strata_bins: int = 4,
) -> GroupScan:
    log = logging.getLogger(__name__)
    config = config or EstimatorConfig()
    results: list[StratumResult] = []
    for stratum in strata_of(ds, c, strata_bins):
        try:
            results.append(group_estimate(ds, y, x, c, stratum, config))
        except EmptyStratum as exc:
            log.info("Stratum skipped: %s", exc.message)
        except NoComparableCells as exc:
            log.warning("Stratum skipped: stratum=%s reason=%s", stratum.label, exc.message)
    if not results:
        raise EmptyStratum("no stratum has enough rows for a coefficient")
    ranking = tuple(sorted(results, key=lambda item: -item.coefficient))
    log.info(
        "Group scan done: strata=%s argmax=%s supremum=%.6g",
        len(ranking),
        ranking[0].stratum.label,
        ranking[0].coefficient,
    )
    return GroupScan(ranking=ranking)


def estimate_record(ds: Dataset, est: DependenceEstimate) -> dict[str, object]:
    return {
        "i": ds.columns[est.i],
        "j": ds.columns[est.j],
        "K": ";".join(ds.columns[k] for k in est.K),
        "estimator": est.estimator,
        "value": est.value,
        "tau": est.tau,
        "verdict": est.verdict,
        "n_cells": est.diagnostics.n_cells,
    }


def append_records(path: str, records: Sequence[Mapping[str, object]]) -> pl.DataFrame:
    schema = {
        "i": pl.String,
        "j": pl.String,
        "K": pl.String,
        "estimator": pl.String,
        "value": pl.Float64,
        "tau": pl.Float64,
        "verdict": pl.String,
        "n_cells": pl.Int64,
    }
    frame = pl.DataFrame([dict(rec) for rec in records], schema=schema)
    if os.path.exists(path):
        previous = pl.read_csv(path, schema=schema)
        frame = pl.concat([previous, frame], how="vertical")
    atomic_write_text(path, frame.write_csv())
    return frame
