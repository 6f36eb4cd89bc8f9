"""Seeded synthetic data for the built-in experimental systems.

Every generator draws each column's noise from its own Philox stream spawned from
the seed, so a column's draws do not depend on how many other columns are sampled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
import logging
import math
from typing import Callable, Literal, Mapping, Sequence

import networkx as nx
import numpy as np

from .dataset import Clamp, Dataset, Provenance
from .errors import BadParams, CyclicSupport, EmptyGrid, NodeNotParent, NotNormalized, ZeroScale
from .gaussian import LinearSem
from .ipm import Bounds


NONLINEAR_COLUMNS = ("X1", "X2", "X3", "X4", "X5")
GROUP_LABELS = ("female", "male")
NATURAL_LEVEL = 1.0
NON_NATURAL_LEVEL = math.sqrt(2.0)
DEFAULT_GRID_POINTS = 101


def column_streams(seed: int, count: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.Generator(np.random.Philox(child)) for child in children]


@dataclass(frozen=True)
class InterventionSpec:
    clamps: tuple[Clamp, ...] = ()

    @classmethod
    def of(cls, **values: float) -> "InterventionSpec":
        return cls(tuple(Clamp(name, float(value)) for name, value in values.items()))

    @classmethod
    def x3(cls, natural: bool) -> "InterventionSpec":
        level = NATURAL_LEVEL if natural else NON_NATURAL_LEVEL
        return cls((Clamp("X3", level, natural=natural),))

    @classmethod
    def from_provenance(cls, provenance: Provenance) -> "InterventionSpec":
        return cls(provenance.clamps)

    def clamp_for(self, name: str) -> Clamp | None:
        for clamp in self.clamps:
            if clamp.column == name:
                return clamp
        return None

    def check(self, columns: Sequence[str]) -> None:
        for clamp in self.clamps:
            if clamp.column not in columns:
                raise BadParams(f"cannot clamp unknown column {clamp.column!r}")

    def provenance(self) -> Provenance:
        return Provenance(self.clamps)


def _clamped(
    spec: InterventionSpec | None, name: str, values: np.ndarray
) -> np.ndarray:
    clamp = spec.clamp_for(name) if spec is not None else None
    if clamp is None:
        return values
    return np.full_like(values, clamp.value)


def sample_linear_sem(
    sem: LinearSem,
    n: int,
    seed: int = 0,
    intervention: InterventionSpec | None = None,
) -> Dataset:
    if n < 1:
        raise BadParams("n must be at least 1")
    names = sem.column_names
    if intervention is not None:
        intervention.check(names)
    streams = column_streams(seed, sem.size)
    noise = np.column_stack(
        [streams[k].normal(0.0, math.sqrt(sem.noise_variances[k]), n) for k in range(sem.size)]
    )
    values = np.zeros((n, sem.size))
    for i in sem.topological_order():
        column = values @ sem.coefficients[i] + noise[:, i]
        values[:, i] = _clamped(intervention, names[i], column)
    provenance = intervention.provenance() if intervention is not None else Provenance()
    return Dataset(names, values, provenance)


def sample_nonlinear_system(
    n: int,
    seed: int = 0,
    intervention: InterventionSpec | None = None,
) -> Dataset:
    """X1=W1, X3=W3, X5=W5 if X3 is natural else 2*sqrt(|X1|)+W5,
    X4=X3-X5+W4, X2=X1^2+2*X4-|X5|+W2, with W ~ U[-1, 1]."""
    if n < 1:
        raise BadParams("n must be at least 1")
    if intervention is not None:
        intervention.check(NONLINEAR_COLUMNS)
    streams = column_streams(seed, len(NONLINEAR_COLUMNS))
    w = {name: streams[k].uniform(-1.0, 1.0, n) for k, name in enumerate(NONLINEAR_COLUMNS)}

    x1 = _clamped(intervention, "X1", w["X1"])
    x3 = _clamped(intervention, "X3", w["X3"])
    x3_clamp = intervention.clamp_for("X3") if intervention is not None else None
    # observational X3 is continuous and never natural
    if x3_clamp is not None and x3_clamp.natural:
        x5 = w["X5"]
    else:
        x5 = 2.0 * np.sqrt(np.abs(x1)) + w["X5"]
    x5 = _clamped(intervention, "X5", x5)
    x4 = _clamped(intervention, "X4", x3 - x5 + w["X4"])
    x2 = _clamped(intervention, "X2", x1**2 + 2.0 * x4 - np.abs(x5) + w["X2"])

    provenance = intervention.provenance() if intervention is not None else Provenance()
    return Dataset(NONLINEAR_COLUMNS, np.column_stack([x1, x2, x3, x4, x5]), provenance)


def sample_group_model(n: int, seed: int = 0, split: float = 0.5) -> Dataset:
    """C in {female, male}; female: X~N(1.5, 1), Y=2X+N(0, 1); male: X~N(1, 4), Y=3X+N(0, 9)."""
    if n < 1:
        raise BadParams("n must be at least 1")
    if not 0.0 <= split <= 1.0:
        raise BadParams("split must lie in [0, 1]")
    c_stream, x_stream, y_stream = column_streams(seed, 3)
    male = c_stream.random(n) >= split
    x = np.where(male, x_stream.normal(1.0, 2.0, n), x_stream.normal(1.5, 1.0, n))
    y = np.where(male, 3.0 * x + y_stream.normal(0.0, 3.0, n), 2.0 * x + y_stream.normal(0.0, 1.0, n))
    values = np.column_stack([male.astype(float), x, y])
    return Dataset(("C", "X", "Y"), values, Provenance(), {"C": GROUP_LABELS})


def sample_ratio_model(
    n: int,
    seed: int = 0,
    m: int = 3,
    p: Sequence[float] | None = None,
) -> Dataset:
    """C in {1..M} with probabilities p, X = W1/C, Y = C*X + W2, W ~ N(0, 1)."""
    if n < 1 or m < 1:
        raise BadParams("n and m must be at least 1")
    probs = np.full(m, 1.0 / m) if p is None else np.asarray(p, dtype=float)
    if probs.shape != (m,):
        raise BadParams(f"p must have {m} entries")
    if np.any(probs < 0) or abs(float(probs.sum()) - 1.0) > 1e-9:
        raise NotNormalized("stratum probabilities must be nonnegative and sum to 1")
    c_stream, x_stream, y_stream = column_streams(seed, 3)
    c = c_stream.choice(np.arange(1, m + 1), size=n, p=probs / probs.sum()).astype(float)
    x = x_stream.normal(0.0, 1.0, n) / c
    y = c * x + y_stream.normal(0.0, 1.0, n)
    return Dataset(("C", "X", "Y"), np.column_stack([c, x, y]))


def _unit_scale(parents: np.ndarray) -> np.ndarray:
    return np.ones(parents.shape[0])


@dataclass(frozen=True)
class FunctionalNode:
    name: str
    parents: tuple[str, ...] = ()
    # both callables take an (n, len(parents)) array and return n values
    location: Callable[[np.ndarray], np.ndarray] = field(default=lambda pa: np.zeros(pa.shape[0]))
    scale: Callable[[np.ndarray], np.ndarray] = _unit_scale
    noise: Literal["gaussian", "uniform"] = "gaussian"
    noise_sd: float = 1.0

    def __post_init__(self) -> None:
        if self.noise not in ("gaussian", "uniform"):
            raise ValueError(f"unknown noise law: {self.noise}")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.noise == "uniform":
            half_width = self.noise_sd * math.sqrt(3.0)
            return rng.uniform(-half_width, half_width, n)
        return rng.normal(0.0, self.noise_sd, n)


@dataclass(frozen=True)
class FunctionalSystem:
    nodes: tuple[FunctionalNode, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        names = [node.name for node in self.nodes]
        if len(set(names)) != len(names):
            raise ValueError("node names must be unique")
        for node in self.nodes:
            for parent in node.parents:
                if parent not in names:
                    raise ValueError(f"{node.name} has unknown parent {parent!r}")
        if not nx.is_directed_acyclic_graph(self.graph()):
            raise CyclicSupport("parent structure has a cycle")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(node.name for node in self.nodes)

    def graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.names)
        for node in self.nodes:
            g.add_edges_from((parent, node.name) for parent in node.parents)
        return g

    def node(self, name: str) -> FunctionalNode:
        for node in self.nodes:
            if node.name == name:
                return node
        raise KeyError(name)

    def order(self) -> list[str]:
        position = {name: pos for pos, name in enumerate(self.names)}
        return list(nx.lexicographical_topological_sort(self.graph(), key=position.__getitem__))


def sample_functional_system(
    system: FunctionalSystem,
    n: int,
    seed: int = 0,
    intervention: InterventionSpec | None = None,
) -> Dataset:
    if n < 1:
        raise BadParams("n must be at least 1")
    names = system.names
    if intervention is not None:
        intervention.check(names)
    streams = dict(zip(names, column_streams(seed, len(names))))
    values: dict[str, np.ndarray] = {}
    for name in system.order():
        node = system.node(name)
        parents = (
            np.column_stack([values[p] for p in node.parents])
            if node.parents
            else np.empty((n, 0))
        )
        noise = node.draw(streams[name], n)
        clamp = intervention.clamp_for(name) if intervention is not None else None
        if clamp is not None:
            values[name] = np.full(n, clamp.value)
            continue
        scale = np.asarray(node.scale(parents), dtype=float).reshape(-1)
        if np.any(scale == 0.0):
            raise ZeroScale(f"scale function of {name} returned 0 on sampled parents")
        values[name] = np.asarray(node.location(parents), dtype=float).reshape(-1) + scale * noise
    provenance = intervention.provenance() if intervention is not None else Provenance()
    return Dataset(names, np.column_stack([values[name] for name in names]), provenance)


def observed_ranges(ds: Dataset) -> dict[str, tuple[float, float]]:
    return {
        name: (float(ds.values[:, k].min()), float(ds.values[:, k].max()))
        for k, name in enumerate(ds.columns)
    }


def functional_system_bounds(
    system: FunctionalSystem,
    i: str,
    j: str,
    grid: Mapping[str, Sequence[float]] | None = None,
    ranges: Mapping[str, tuple[float, float]] | None = None,
    points: int = DEFAULT_GRID_POINTS,
) -> Bounds:
    """Lattice estimate of the location-slope lower bound and the location/scale upper bound.

    Axes missing from ``grid`` are uniform lattices over ``ranges`` (default [-1, 1]).
    Consecutive lattice points along the j axis attain the maximum over all pairs,
    since every chord slope averages the consecutive ones.
    """
    log = logging.getLogger(__name__)
    node = system.node(i)
    if j not in node.parents:
        raise NodeNotParent(f"{j} is not a parent of {i}")
    grid = dict(grid or {})
    ranges = dict(ranges or {})
    axes: list[np.ndarray] = []
    for parent in node.parents:
        if parent in grid:
            axis = np.unique(np.asarray(grid[parent], dtype=float))
        else:
            low, high = ranges.get(parent, (-1.0, 1.0))
            axis = np.unique(np.linspace(low, high, points))
        if axis.size == 0:
            raise EmptyGrid(f"grid axis for {parent} is empty")
        axes.append(axis)
    j_pos = node.parents.index(j)
    j_axis = axes[j_pos]
    if j_axis.size < 2:
        raise EmptyGrid(f"grid axis for {j} needs at least two distinct values")

    other_axes = [axis for pos, axis in enumerate(axes) if pos != j_pos]
    lower = 0.0
    upper = 0.0
    steps = np.diff(j_axis)
    for others in product(*other_axes):
        realizations = np.empty((j_axis.size, len(node.parents)))
        rest = iter(others)
        for pos in range(len(node.parents)):
            realizations[:, pos] = j_axis if pos == j_pos else next(rest)
        loc = np.asarray(node.location(realizations), dtype=float).reshape(-1)
        scale = np.asarray(node.scale(realizations), dtype=float).reshape(-1)
        loc_slope = np.diff(loc) / steps
        scale_slope = np.diff(scale) / steps * node.noise_sd
        lower = max(lower, float(np.max(np.abs(loc_slope))))
        upper = max(upper, float(np.max(np.hypot(loc_slope, scale_slope))))
    log.debug("Functional bounds: i=%s j=%s lower=%.6g upper=%.6g", i, j, lower, upper)
    return Bounds(lower=lower, upper=upper)
