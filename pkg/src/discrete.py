"""Exact enumeration on finite discrete factored models.

Information quantities here are in bits. Conditionals at zero-probability
conditioning cells come from the CPT product: each zero CPT factor is treated as
the limit of a uniform perturbation, and only the atoms with the fewest zero
factors contribute.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, product
import logging
from typing import Iterable, Literal, Mapping, Sequence

import networkx as nx
import numpy as np
import orjson
from scipy.stats import entropy as _scipy_entropy

from .errors import (
    BadModelJson,
    CyclicGraph,
    NonDisjointSets,
    NotNormalized,
    SupportTooLarge,
    ValueNotInSupport,
)
from .ipm import EmpiricalDistribution, wasserstein_1d_exact


UNIT = "bits"
SUPPORT_CAP = 1_000_000
_CPT_TOLERANCE = 1e-12


@dataclass(frozen=True)
class DiscreteNode:
    name: str
    values: tuple[float, ...]
    parents: tuple[str, ...]
    # axes: one per parent (in order), then this node
    cpt: np.ndarray

    def __post_init__(self) -> None:
        values = tuple(float(v) for v in self.values)
        if not values:
            raise ValueError(f"{self.name} has an empty support")
        if len(set(values)) != len(values):
            raise ValueError(f"{self.name} has repeated support values")
        cpt = np.array(self.cpt, dtype=float, copy=True)
        cpt.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "parents", tuple(self.parents))
        object.__setattr__(self, "cpt", cpt)

    @property
    def cardinality(self) -> int:
        return len(self.values)

    def code_of(self, value: float) -> int:
        try:
            return self.values.index(float(value))
        except ValueError as exc:
            raise ValueNotInSupport(f"{value!r} is not in the support of {self.name}") from exc


@dataclass(frozen=True)
class FactoredModel:
    nodes: tuple[DiscreteNode, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        names = self.names
        if len(set(names)) != len(names):
            raise ValueError("node names must be unique")
        lookup = {node.name: node for node in self.nodes}
        g = nx.DiGraph()
        g.add_nodes_from(names)
        for node in self.nodes:
            for parent in node.parents:
                if parent not in lookup:
                    raise ValueError(f"{node.name} has unknown parent {parent!r}")
                g.add_edge(parent, node.name)
            shape = tuple(lookup[p].cardinality for p in node.parents) + (node.cardinality,)
            if node.cpt.shape != shape:
                raise ValueError(f"CPT of {node.name} has shape {node.cpt.shape}, expected {shape}")
            if np.any(node.cpt < 0):
                raise NotNormalized(f"CPT of {node.name} has negative entries")
            if np.max(np.abs(node.cpt.sum(axis=-1) - 1.0)) > _CPT_TOLERANCE:
                raise NotNormalized(f"CPT rows of {node.name} do not sum to 1")
        if not nx.is_directed_acyclic_graph(g):
            raise CyclicGraph("model graph has a directed cycle")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(node.name for node in self.nodes)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(node.cardinality for node in self.nodes)

    @property
    def support_size(self) -> int:
        return int(np.prod(self.cardinalities, dtype=object))

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError as exc:
            raise ValueError(f"unknown node {name!r}") from exc

    def node(self, name: str) -> DiscreteNode:
        return self.nodes[self.index_of(name)]

    def edges(self) -> list[tuple[str, str]]:
        return [(parent, node.name) for node in self.nodes for parent in node.parents]

    def _factor(self, node: DiscreteNode) -> np.ndarray:
        axes = [self.index_of(p) for p in node.parents] + [self.index_of(node.name)]
        order = np.argsort(axes)
        shape = [1] * len(self.nodes)
        for axis in axes:
            shape[axis] = self.nodes[axis].cardinality
        return node.cpt.transpose(order).reshape(shape)

    def factors(self) -> list[np.ndarray]:
        if self.support_size > SUPPORT_CAP:
            raise SupportTooLarge(self.support_size, SUPPORT_CAP)
        return [self._factor(node) for node in self.nodes]


@dataclass(frozen=True)
class JointTable:
    names: tuple[str, ...]
    probs: np.ndarray

    def marginal(self, names: Sequence[str]) -> np.ndarray:
        keep = [self.names.index(name) for name in names]
        drop = tuple(axis for axis in range(len(self.names)) if axis not in keep)
        reduced = self.probs.sum(axis=drop)
        remaining = [axis for axis in range(len(self.names)) if axis in keep]
        return np.transpose(reduced, [remaining.index(axis) for axis in keep])


def joint_distribution(model: FactoredModel) -> JointTable:
    factors = model.factors()
    probs = np.ones(model.cardinalities)
    for factor in factors:
        probs = probs * factor
    total = float(probs.sum())
    if abs(total - 1.0) > 1e-10:
        raise NotNormalized(f"joint sums to {total!r}")
    return JointTable(model.names, probs)


def do_intervene(model: FactoredModel, assignments: Mapping[str, float]) -> FactoredModel:
    replaced: list[DiscreteNode] = []
    for node in model.nodes:
        if node.name not in assignments:
            replaced.append(node)
            continue
        code = node.code_of(assignments[node.name])
        point_mass = np.zeros(node.cardinality)
        point_mass[code] = 1.0
        replaced.append(DiscreteNode(node.name, node.values, (), point_mass))
    for name in assignments:
        if name not in model.names:
            raise ValueNotInSupport(f"cannot intervene on unknown node {name!r}")
    return FactoredModel(tuple(replaced))


def entropy(p: Sequence[float] | np.ndarray) -> float:
    probs = np.asarray(p, dtype=float)
    if probs.size == 0 or np.any(probs < 0) or abs(float(probs.sum()) - 1.0) > 1e-9:
        raise NotNormalized("probabilities must be nonnegative and sum to 1")
    return float(_scipy_entropy(probs, base=2))


def _as_names(value: str | Iterable[str]) -> tuple[str, ...]:
    if isinstance(value, str):
        return (value,)
    return tuple(value)


def _check_disjoint(*groups: Sequence[str]) -> None:
    seen: set[str] = set()
    for group in groups:
        overlap = seen & set(group)
        if overlap:
            raise NonDisjointSets(f"node sets overlap on {sorted(overlap)}")
        seen |= set(group)


def cmi_discrete(
    model: FactoredModel,
    i: str | Iterable[str],
    j: str | Iterable[str],
    K: Iterable[str] = (),
) -> float:
    i_names, j_names, k_names = _as_names(i), _as_names(j), tuple(K)
    _check_disjoint(i_names, j_names, k_names)
    joint = joint_distribution(model)
    p_ijk = joint.marginal(i_names + j_names + k_names)
    ni, nj = len(i_names), len(j_names)
    p_ik = p_ijk.sum(axis=tuple(range(ni, ni + nj)), keepdims=True)
    p_jk = p_ijk.sum(axis=tuple(range(ni)), keepdims=True)
    p_k = p_ijk.sum(axis=tuple(range(ni + nj)), keepdims=True)
    positive = p_ijk > 0
    ratio = np.divide(
        p_ijk * p_k,
        p_ik * p_jk,
        out=np.ones_like(p_ijk),
        where=positive,
    )
    value = float(np.sum(np.where(positive, p_ijk * np.log2(ratio), 0.0)))
    return max(0.0, value)


def _assignments(model: FactoredModel, names: Sequence[str]) -> list[dict[str, float]]:
    supports = [model.node(name).values for name in names]
    return [dict(zip(names, combo)) for combo in product(*supports)]


def information_flow(
    model: FactoredModel,
    A: str | Iterable[str],
    B: str | Iterable[str],
    K: Iterable[str] = (),
) -> float:
    """Information flow from A to B imposing K: a do-calculus analogue of CMI, in bits."""
    log = logging.getLogger(__name__)
    a_names, b_names, k_names = _as_names(A), _as_names(B), tuple(K)
    _check_disjoint(a_names, b_names, k_names)
    observational = joint_distribution(model)
    p_k = observational.marginal(k_names) if k_names else np.array(1.0)

    total = 0.0
    for x_k in _assignments(model, k_names):
        k_codes = tuple(model.node(name).code_of(x_k[name]) for name in k_names)
        weight_k = float(p_k[k_codes]) if k_names else 1.0
        if weight_k <= 0:
            continue
        p_a = joint_distribution(do_intervene(model, x_k)).marginal(a_names)
        a_rows = _assignments(model, a_names)
        p_b_given: list[np.ndarray] = []
        for x_a in a_rows:
            p_b_given.append(
                joint_distribution(do_intervene(model, {**x_k, **x_a})).marginal(b_names)
            )
        a_codes = [tuple(model.node(name).code_of(x_a[name]) for name in a_names) for x_a in a_rows]
        mixture = sum(float(p_a[codes]) * p_b for codes, p_b in zip(a_codes, p_b_given))
        for codes, p_b in zip(a_codes, p_b_given):
            weight_a = float(p_a[codes])
            if weight_a <= 0:
                continue
            positive = p_b > 0
            terms = np.where(
                positive,
                p_b * np.log2(np.divide(p_b, mixture, out=np.ones_like(p_b), where=positive)),
                0.0,
            )
            total += weight_k * weight_a * float(terms.sum())
    log.debug("Information flow: A=%s B=%s K=%s value=%.6g", a_names, b_names, k_names, total)
    return max(0.0, total)


def _conditional_table(model: FactoredModel, target: str, given: Sequence[str]) -> np.ndarray:
    """P(target | given) for every realization of ``given``, zero-probability cells included.

    Returns an array with one axis per ``given`` node followed by the target axis.
    """
    factors = model.factors()
    zeros = np.zeros(model.cardinalities, dtype=int)
    weight = np.ones(model.cardinalities)
    for node, factor in zip(model.nodes, factors):
        is_zero = factor == 0
        zeros = zeros + is_zero
        weight = weight * np.where(is_zero, 1.0 / node.cardinality, factor)

    keep = [model.index_of(name) for name in given] + [model.index_of(target)]
    given_axes = tuple(model.index_of(name) for name in given)
    other = tuple(axis for axis in range(len(model.nodes)) if axis not in given_axes)
    fewest = zeros.min(axis=other, keepdims=True)
    leading = np.where(zeros == fewest, weight, 0.0)
    drop = tuple(axis for axis in range(len(model.nodes)) if axis not in keep)
    reduced = leading.sum(axis=drop)
    remaining = [axis for axis in range(len(model.nodes)) if axis in keep]
    table = np.transpose(reduced, [remaining.index(axis) for axis in keep])
    return table / table.sum(axis=-1, keepdims=True)


def _law(values: Sequence[float], probs: np.ndarray) -> EmpiricalDistribution:
    return EmpiricalDistribution.from_samples(values, probs, normalize=True)


def _distance(first: Sequence[float], second: Sequence[float]) -> float:
    return float(np.linalg.norm(np.subtract(first, second)))


def exact_coefficient(
    model: FactoredModel,
    i: str,
    j: str | Iterable[str],
    K: Iterable[str] = (),
) -> float:
    j_names, k_names = _as_names(j), tuple(K)
    _check_disjoint((i,), j_names, k_names)
    table = _conditional_table(model, i, j_names + k_names)
    support = model.node(i).values
    j_rows = list(product(*(range(model.node(name).cardinality) for name in j_names)))
    k_rows = list(product(*(range(model.node(name).cardinality) for name in k_names)))
    best = 0.0
    for k_codes in k_rows:
        for first, second in combinations(j_rows, 2):
            gap = _distance(
                [model.node(name).values[c] for name, c in zip(j_names, first)],
                [model.node(name).values[c] for name, c in zip(j_names, second)],
            )
            w = wasserstein_1d_exact(
                _law(support, table[first + k_codes]),
                _law(support, table[second + k_codes]),
            )
            best = max(best, w / gap)
    return best


def do_coefficient(
    model: FactoredModel,
    i: str,
    j: str | Iterable[str],
    K: Iterable[str] = (),
) -> float:
    j_names, k_names = _as_names(j), tuple(K)
    _check_disjoint((i,), j_names, k_names)
    support = model.node(i).values
    laws: dict[tuple[float, ...], EmpiricalDistribution] = {}
    for assignment in _assignments(model, j_names + k_names):
        key = tuple(assignment[name] for name in j_names + k_names)
        marginal = joint_distribution(do_intervene(model, assignment)).marginal((i,))
        laws[key] = _law(support, marginal)

    best = 0.0
    j_values = list(product(*(model.node(name).values for name in j_names)))
    for x_k in product(*(model.node(name).values for name in k_names)):
        for first, second in combinations(j_values, 2):
            w = wasserstein_1d_exact(laws[first + x_k], laws[second + x_k])
            best = max(best, w / _distance(first, second))
    return best


@dataclass(frozen=True)
class XorModel:
    """Three binaries with Z = X xor Y.

    Variant ``b``: X is the root with P(X=0)=b and Y copies X, flipped w.p. epsilon.
    Variant ``a``: Y is the root with P(Y=0)=b and X copies Y, flipped w.p. epsilon.
    """

    variant: Literal["a", "b"] = "b"
    b: float = 0.5
    epsilon: float = 0.1

    def __post_init__(self) -> None:
        if self.variant not in ("a", "b"):
            raise ValueError(f"unknown XOR variant: {self.variant}")
        if not (0.0 <= self.b <= 1.0 and 0.0 <= self.epsilon <= 1.0):
            raise ValueError("b and epsilon must lie in [0, 1]")

    def build(self) -> FactoredModel:
        eps = self.epsilon
        root = np.array([self.b, 1.0 - self.b])
        copy = np.array([[1.0 - eps, eps], [eps, 1.0 - eps]])
        xor = np.zeros((2, 2, 2))
        for x, y in product((0, 1), repeat=2):
            xor[x, y, x ^ y] = 1.0
        if self.variant == "b":
            x_node = DiscreteNode("X", (0, 1), (), root)
            y_node = DiscreteNode("Y", (0, 1), ("X",), copy)
        else:
            y_node = DiscreteNode("Y", (0, 1), (), root)
            x_node = DiscreteNode("X", (0, 1), ("Y",), copy)
        z_node = DiscreteNode("Z", (0, 1), ("X", "Y"), xor)
        return FactoredModel((x_node, y_node, z_node))


def model_from_dict(doc: Mapping) -> FactoredModel:
    try:
        specs = doc["nodes"]
        cards = {spec["name"]: len(spec["values"]) for spec in specs}
        nodes = []
        for spec in specs:
            parents = tuple(spec.get("parents", ()))
            shape = tuple(cards[p] for p in parents) + (len(spec["values"]),)
            cpt = np.asarray(spec["cpt"], dtype=float).reshape(shape)
            nodes.append(DiscreteNode(spec["name"], tuple(spec["values"]), parents, cpt))
        return FactoredModel(tuple(nodes))
    except (KeyError, TypeError, ValueError) as exc:
        raise BadModelJson(f"invalid model document: {exc}") from exc


def model_to_dict(model: FactoredModel) -> dict:
    return {
        "nodes": [
            {
                "name": node.name,
                "values": list(node.values),
                "parents": list(node.parents),
                "cpt": node.cpt.reshape(-1, node.cardinality).tolist(),
            }
            for node in model.nodes
        ]
    }


def load_model_json(path: str) -> FactoredModel:
    try:
        with open(path, "rb") as handle:
            doc = orjson.loads(handle.read())
    except (OSError, orjson.JSONDecodeError) as exc:
        raise BadModelJson(f"cannot read {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise BadModelJson(f"{path}: top level must be an object")
    return model_from_dict(doc)
