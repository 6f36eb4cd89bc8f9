"""Closed forms for jointly Gaussian systems.

All information quantities in this module are in nats.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
import logging
from typing import Iterable, Sequence

import networkx as nx
import numpy as np
from scipy import linalg

from .dataset import Dataset
from .errors import (
    CyclicSupport,
    InsufficientSamples,
    SingularBlock,
    SingularConditioningBlock,
)


PIVOT_THRESHOLD = 1e-12
_SYMMETRY_TOLERANCE = 1e-12
_PSD_TOLERANCE = 1e-10


def _as_indices(value: int | Iterable[int]) -> tuple[int, ...]:
    if isinstance(value, (int, np.integer)):
        return (int(value),)
    return tuple(int(v) for v in value)


@dataclass(frozen=True)
class GaussianModel:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self) -> None:
        cov = np.array(self.covariance, dtype=float, copy=True)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ValueError("covariance must be a square matrix")
        mean = np.array(self.mean, dtype=float, copy=True).reshape(-1)
        if mean.shape[0] != cov.shape[0]:
            raise ValueError("mean and covariance dimensions differ")
        scale = max(1.0, float(np.max(np.abs(cov))) if cov.size else 1.0)
        if np.max(np.abs(cov - cov.T), initial=0.0) > _SYMMETRY_TOLERANCE * scale:
            raise ValueError("covariance is not symmetric")
        cov = (cov + cov.T) / 2.0
        if cov.size and float(np.linalg.eigvalsh(cov).min()) < -_PSD_TOLERANCE * scale:
            raise ValueError("covariance is not positive semidefinite")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @classmethod
    def centered(cls, covariance: np.ndarray) -> "GaussianModel":
        cov = np.atleast_2d(np.asarray(covariance, dtype=float))
        return cls(mean=np.zeros(cov.shape[0]), covariance=cov)

    @property
    def dimension(self) -> int:
        return int(self.covariance.shape[0])

    def block(self, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
        return self.covariance[np.ix_(list(rows), list(cols))]


@dataclass(frozen=True)
class LinearSem:
    # coefficients[i, j] is the weight of the edge j -> i
    coefficients: np.ndarray
    noise_variances: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        a = np.array(self.coefficients, dtype=float, copy=True)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("coefficient matrix must be square")
        if np.any(np.diag(a) != 0):
            raise ValueError("coefficient matrix must have a zero diagonal")
        noise = np.array(self.noise_variances, dtype=float, copy=True).reshape(-1)
        if noise.shape[0] != a.shape[0]:
            raise ValueError("one noise variance per node is required")
        if np.any(noise <= 0) or not np.all(np.isfinite(noise)):
            raise ValueError("noise variances must be positive")
        names = tuple(self.names) if self.names is not None else None
        if names is not None and len(names) != a.shape[0]:
            raise ValueError("one name per node is required")
        a.setflags(write=False)
        noise.setflags(write=False)
        object.__setattr__(self, "coefficients", a)
        object.__setattr__(self, "noise_variances", noise)
        object.__setattr__(self, "names", names)
        if not nx.is_directed_acyclic_graph(self.graph()):
            raise CyclicSupport("support of the coefficient matrix has a cycle")

    @property
    def size(self) -> int:
        return int(self.coefficients.shape[0])

    @property
    def column_names(self) -> tuple[str, ...]:
        if self.names is not None:
            return self.names
        return tuple(f"X{k + 1}" for k in range(self.size))

    def graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(range(self.coefficients.shape[0]))
        targets, sources = np.nonzero(self.coefficients)
        g.add_edges_from(zip(sources.tolist(), targets.tolist()))
        return g

    def parents(self, i: int) -> tuple[int, ...]:
        return tuple(int(k) for k in np.flatnonzero(self.coefficients[i]))

    def topological_order(self) -> list[int]:
        return list(nx.lexicographical_topological_sort(self.graph()))


def _check_pivots(matrix: np.ndarray, error: type) -> None:
    scale = float(np.max(np.abs(np.diag(matrix)), initial=0.0))
    if scale <= 0.0:
        raise error("block has zero variance")
    try:
        factor, _ = linalg.cho_factor(matrix, check_finite=False)
        pivots = np.diag(factor) ** 2
    except linalg.LinAlgError:
        _, d, _ = linalg.ldl(matrix, check_finite=False)
        pivots = np.abs(np.linalg.eigvalsh(d))
    if float(pivots.min()) < PIVOT_THRESHOLD * scale:
        raise error(
            f"block is singular: smallest relative pivot {float(pivots.min()) / scale:.3g}"
        )


def _regression(
    model: GaussianModel, targets: Sequence[int], block: Sequence[int]
) -> np.ndarray:
    sigma_bb = model.block(block, block)
    _check_pivots(sigma_bb, SingularConditioningBlock)
    sigma_tb = model.block(targets, block)
    # rows: targets, columns: block entries
    return linalg.solve(sigma_bb, sigma_tb.T, assume_a="pos").T


def _check_disjoint(*groups: Sequence[int]) -> None:
    seen: set[int] = set()
    for group in groups:
        for idx in group:
            if idx in seen:
                raise ValueError("index sets must be disjoint")
            seen.add(idx)


def closed_form_coefficient(
    model: GaussianModel, i: int, j: int, K: Iterable[int] = ()
) -> float:
    """|first entry of Sigma_{i,{j,K}} (Sigma_{{j,K},{j,K}})^{-1}| with X_j ordered first."""
    k_idx = tuple(sorted(_as_indices(K)))
    _check_disjoint((i,), (j,), k_idx)
    beta = _regression(model, [i], [j, *k_idx])
    return float(abs(beta[0, 0]))


def closed_form_block_coefficient(
    model: GaussianModel,
    targets: int | Iterable[int],
    sources: int | Iterable[int],
    K: Iterable[int] = (),
) -> float:
    """Set-valued coefficient: spectral norm of the regression of targets on sources given K."""
    t_idx = _as_indices(targets)
    s_idx = _as_indices(sources)
    k_idx = tuple(sorted(_as_indices(K)))
    _check_disjoint(t_idx, s_idx, k_idx)
    beta = _regression(model, list(t_idx), [*s_idx, *k_idx])
    return float(np.linalg.norm(beta[:, : len(s_idx)], 2))


def sem_to_covariance(sem: LinearSem, mean: np.ndarray | None = None) -> GaussianModel:
    identity = np.eye(sem.size)
    mixing = np.linalg.solve(identity - sem.coefficients, identity)
    cov = mixing @ np.diag(sem.noise_variances) @ mixing.T
    return GaussianModel(
        mean=np.zeros(sem.size) if mean is None else np.asarray(mean, dtype=float),
        covariance=(cov + cov.T) / 2.0,
    )


def _logdet(model: GaussianModel, idx: Sequence[int]) -> float:
    if not idx:
        return 0.0
    sub = model.block(idx, idx)
    eigvals = np.linalg.eigvalsh(sub)
    scale = max(float(np.max(np.abs(eigvals))), np.finfo(float).tiny)
    if float(eigvals.min()) <= PIVOT_THRESHOLD * scale:
        raise SingularBlock(f"principal block {list(idx)} is singular")
    sign, value = np.linalg.slogdet(sub)
    if sign <= 0:
        raise SingularBlock(f"principal block {list(idx)} is not positive definite")
    return float(value)


def gaussian_cmi(
    model: GaussianModel,
    i: int | Iterable[int],
    j: int | Iterable[int],
    K: Iterable[int] = (),
) -> float:
    i_idx = _as_indices(i)
    j_idx = _as_indices(j)
    k_idx = tuple(sorted(_as_indices(K)))
    _check_disjoint(i_idx, j_idx, k_idx)
    value = 0.5 * (
        _logdet(model, [*i_idx, *k_idx])
        + _logdet(model, [*j_idx, *k_idx])
        - _logdet(model, list(k_idx))
        - _logdet(model, [*i_idx, *j_idx, *k_idx])
    )
    return max(0.0, float(value))


def estimate_covariance(ds: Dataset) -> GaussianModel:
    if ds.n_rows < 2:
        raise InsufficientSamples(ds.n_rows, 2)
    cov = np.atleast_2d(np.cov(ds.values, rowvar=False, ddof=1))
    return GaussianModel(mean=ds.values.mean(axis=0), covariance=cov)


def global_markov_violations(
    sem: LinearSem,
    max_cond: int | None = None,
    tol: float = 1e-9,
) -> list[tuple[int, int, tuple[int, ...]]]:
    """Triples (i, j, K) d-separated in the SEM's DAG but with a nonzero closed-form coefficient."""
    from .structure import Dag, d_separated

    log = logging.getLogger(__name__)
    model = sem_to_covariance(sem)
    dag = Dag.from_networkx(sem.graph())
    nodes = list(range(sem.size))
    limit = sem.size - 2 if max_cond is None else max_cond
    violations: list[tuple[int, int, tuple[int, ...]]] = []
    for i in nodes:
        for j in nodes:
            if i == j:
                continue
            rest = [k for k in nodes if k not in (i, j)]
            for size in range(0, min(limit, len(rest)) + 1):
                for K in combinations(rest, size):
                    if not d_separated(dag, {i}, {j}, set(K)):
                        continue
                    value = closed_form_coefficient(model, i, j, K)
                    if value > tol:
                        violations.append((i, j, K))
    log.debug("Global Markov check: nodes=%s violations=%s", sem.size, len(violations))
    return violations
