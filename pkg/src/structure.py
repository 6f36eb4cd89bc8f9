"""Structure discovery: d-separation, PC-stable skeleton search, v-structures,
Meek's rules and orientation from interventional data."""

from __future__ import annotations

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
import logging
import re
from typing import Iterable, Mapping, Protocol, Sequence

import networkx as nx
import numpy as np
import polars as pl

from .dataset import Dataset
from .dependence import EstimatorConfig, estimate_coefficient
from .errors import (
    CyclicGraph,
    InsufficientSamples,
    MissingInterventionData,
    NoComparableCells,
    NonDisjointSets,
)
from .utils import atomic_write_text


SKELETON = "skeleton"
V_STRUCTURE = "v-structure"
INTERVENTIONAL = "interventional"
MEEK = ("meek-R1", "meek-R2", "meek-R3", "meek-R4")

_EDGE_COLORS = {
    SKELETON: "gray40",
    V_STRUCTURE: "blue",
    INTERVENTIONAL: "darkgreen",
    "meek-R1": "red",
    "meek-R2": "red",
    "meek-R3": "red",
    "meek-R4": "red",
}


def _pair(a: int, b: int) -> frozenset[int]:
    return frozenset((a, b))


@dataclass(frozen=True)
class Dag:
    nodes: tuple[str, ...]
    edges: frozenset[tuple[int, int]]

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", frozenset((int(a), int(b)) for a, b in self.edges))
        n = len(self.nodes)
        for a, b in self.edges:
            if not (0 <= a < n and 0 <= b < n) or a == b:
                raise ValueError(f"invalid edge ({a}, {b}) for {n} nodes")
        if not nx.is_directed_acyclic_graph(self.graph):
            raise CyclicGraph("graph has a directed cycle")

    @classmethod
    def from_networkx(cls, g: nx.DiGraph, names: Sequence[str] | None = None) -> "Dag":
        order = sorted(g.nodes)
        index = {node: pos for pos, node in enumerate(order)}
        labels = tuple(names) if names is not None else tuple(f"X{pos + 1}" for pos in range(len(order)))
        return cls(labels, frozenset((index[a], index[b]) for a, b in g.edges))

    @classmethod
    def from_names(cls, nodes: Sequence[str], edges: Iterable[tuple[str, str]]) -> "Dag":
        index = {name: pos for pos, name in enumerate(nodes)}
        return cls(tuple(nodes), frozenset((index[a], index[b]) for a, b in edges))

    @cached_property
    def graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(range(len(self.nodes)))
        g.add_edges_from(self.edges)
        return g

    @property
    def size(self) -> int:
        return len(self.nodes)

    def parents(self, v: int) -> set[int]:
        return set(self.graph.predecessors(v))

    def children(self, v: int) -> set[int]:
        return set(self.graph.successors(v))

    def adjacent(self, a: int, b: int) -> bool:
        return (a, b) in self.edges or (b, a) in self.edges

    def index_of(self, name: str) -> int:
        return self.nodes.index(name)


@dataclass
class Pdag:
    nodes: tuple[str, ...]
    undirected: set[frozenset[int]] = field(default_factory=set)
    directed: set[tuple[int, int]] = field(default_factory=set)
    sepsets: dict[frozenset[int], tuple[int, ...]] = field(default_factory=dict)
    provenance: dict[frozenset[int], str] = field(default_factory=dict)

    @classmethod
    def complete(cls, nodes: Sequence[str]) -> "Pdag":
        n = len(nodes)
        undirected = {_pair(a, b) for a, b in combinations(range(n), 2)}
        return cls(tuple(nodes), undirected, set(), {}, {edge: SKELETON for edge in undirected})

    def copy(self) -> "Pdag":
        return Pdag(
            self.nodes,
            set(self.undirected),
            set(self.directed),
            dict(self.sepsets),
            dict(self.provenance),
        )

    def index_of(self, name: str) -> int:
        return self.nodes.index(name)

    def has_directed(self, a: int, b: int) -> bool:
        return (a, b) in self.directed

    def has_undirected(self, a: int, b: int) -> bool:
        return _pair(a, b) in self.undirected

    def adjacent(self, a: int, b: int) -> bool:
        return self.has_undirected(a, b) or (a, b) in self.directed or (b, a) in self.directed

    def neighbors(self, v: int) -> set[int]:
        return {u for u in range(len(self.nodes)) if u != v and self.adjacent(u, v)}

    def undirected_neighbors(self, v: int) -> set[int]:
        return {u for u in range(len(self.nodes)) if u != v and self.has_undirected(u, v)}

    def parents(self, v: int) -> set[int]:
        return {a for a, b in self.directed if b == v}

    def children(self, v: int) -> set[int]:
        return {b for a, b in self.directed if a == v}

    def skeleton(self) -> set[frozenset[int]]:
        return set(self.undirected) | {_pair(a, b) for a, b in self.directed}

    def remove_edge(self, a: int, b: int) -> None:
        self.undirected.discard(_pair(a, b))
        self.directed.discard((a, b))
        self.directed.discard((b, a))
        self.provenance.pop(_pair(a, b), None)

    def orient(self, a: int, b: int, provenance: str) -> None:
        self.undirected.discard(_pair(a, b))
        self.directed.discard((b, a))
        self.directed.add((a, b))
        self.provenance[_pair(a, b)] = provenance

    def unorient(self, a: int, b: int) -> None:
        self.directed.discard((a, b))
        self.directed.discard((b, a))
        self.undirected.add(_pair(a, b))

    def directed_graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(range(len(self.nodes)))
        g.add_edges_from(self.directed)
        return g

    def is_valid(self) -> bool:
        both = {_pair(a, b) for a, b in self.directed} & self.undirected
        if both:
            return False
        if any((b, a) in self.directed for a, b in self.directed):
            return False
        return nx.is_directed_acyclic_graph(self.directed_graph())

    def sepset(self, a: int, b: int) -> tuple[int, ...] | None:
        return self.sepsets.get(_pair(a, b))

    def edge_rows(self) -> list[dict[str, str]]:
        rows: list[dict[str, str]] = []
        for a, b in sorted(self.directed):
            rows.append(
                {
                    "source": self.nodes[a],
                    "target": self.nodes[b],
                    "kind": "directed",
                    "provenance": self.provenance.get(_pair(a, b), SKELETON),
                }
            )
        for edge in sorted(self.undirected, key=lambda e: tuple(sorted(e))):
            a, b = sorted(edge)
            rows.append(
                {
                    "source": self.nodes[a],
                    "target": self.nodes[b],
                    "kind": "undirected",
                    "provenance": self.provenance.get(edge, SKELETON),
                }
            )
        return rows


def _check_disjoint(*groups: set[int]) -> None:
    seen: set[int] = set()
    for group in groups:
        if seen & group:
            raise NonDisjointSets("node sets must be disjoint")
        seen |= group


def d_separated(g: Dag, A: Iterable[int], B: Iterable[int], C: Iterable[int] = ()) -> bool:
    """Bayes-ball reachability: True iff every trail between A and B is blocked by C."""
    a_set, b_set, c_set = set(A), set(B), set(C)
    _check_disjoint(a_set, b_set, c_set)
    if not a_set or not b_set:
        return True

    ancestors_of_c: set[int] = set()
    stack = list(c_set)
    while stack:
        node = stack.pop()
        if node in ancestors_of_c:
            continue
        ancestors_of_c.add(node)
        stack.extend(g.parents(node))

    queue: deque[tuple[int, str]] = deque((node, "up") for node in a_set)
    visited: set[tuple[int, str]] = set()
    while queue:
        node, direction = queue.popleft()
        if (node, direction) in visited:
            continue
        visited.add((node, direction))
        if node not in c_set and node in b_set:
            return False
        if direction == "up":
            # arrived from a child
            if node not in c_set:
                queue.extend((p, "up") for p in g.parents(node))
                queue.extend((ch, "down") for ch in g.children(node))
        else:
            # arrived from a parent
            if node not in c_set:
                queue.extend((ch, "down") for ch in g.children(node))
            if node in ancestors_of_c:
                queue.extend((p, "up") for p in g.parents(node))
    return True


@dataclass(frozen=True)
class CiDecision:
    independent: bool
    statistic: float = 0.0
    threshold: float = 0.0


class CiTest(Protocol):
    def __call__(self, i: int, j: int, K: tuple[int, ...]) -> CiDecision | None: ...


@dataclass(frozen=True)
class OracleCiTest:
    dag: Dag

    def __call__(self, i: int, j: int, K: tuple[int, ...]) -> CiDecision:
        return CiDecision(independent=d_separated(self.dag, {i}, {j}, set(K)))


@dataclass(frozen=True)
class DataCiTest:
    """Symmetrised coefficient test: independent only if neither direction exceeds its threshold.

    Returns None when neither direction can be evaluated for this conditioning set.
    """

    ds: Dataset
    config: EstimatorConfig = field(default_factory=EstimatorConfig)

    def __call__(self, i: int, j: int, K: tuple[int, ...]) -> CiDecision | None:
        log = logging.getLogger(__name__)
        estimates = []
        for target, source in ((i, j), (j, i)):
            try:
                estimates.append(estimate_coefficient(self.ds, target, source, K, config=self.config))
            except (NoComparableCells, InsufficientSamples) as exc:
                log.debug(
                    "CI direction untestable: i=%s j=%s K=%s reason=%s",
                    self.ds.columns[target],
                    self.ds.columns[source],
                    [self.ds.columns[k] for k in K],
                    exc.code,
                )
        if not estimates:
            return None
        dependent = [est for est in estimates if est.dependent]
        worst = max(dependent or estimates, key=lambda est: est.value - est.tau)
        return CiDecision(
            independent=not dependent,
            statistic=worst.value,
            threshold=worst.tau,
        )


def _test_edge(
    ci_test: CiTest,
    i: int,
    j: int,
    candidates: Sequence[int],
    size: int,
) -> tuple[int, ...] | None:
    for K in combinations(sorted(candidates), size):
        decision = ci_test(i, j, K)
        if decision is not None and decision.independent:
            return K
    return None


def pc_skeleton(
    nodes: Sequence[str],
    ci_test: CiTest,
    max_cond_size: int = 3,
    workers: int = 1,
) -> Pdag:
    """PC-stable adjacency search: removals are committed only between levels."""
    log = logging.getLogger(__name__)
    pdag = Pdag.complete(nodes)
    level = 0
    while level <= max_cond_size:
        snapshot = {v: pdag.neighbors(v) for v in range(len(nodes))}
        tasks: list[tuple[int, int, tuple[int, ...]]] = []
        for edge in sorted(pdag.skeleton(), key=lambda e: tuple(sorted(e))):
            i, j = sorted(edge)
            tasks.append((i, j, tuple(sorted(snapshot[i] - {j}))))
            tasks.append((i, j, tuple(sorted(snapshot[j] - {i}))))
        tasks = [task for task in tasks if len(task[2]) >= level]
        if not tasks:
            break

        def _run(task: tuple[int, int, tuple[int, ...]]) -> tuple[int, ...] | None:
            i, j, candidates = task
            return _test_edge(ci_test, i, j, candidates, level)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(_run, tasks))
        else:
            outcomes = [_run(task) for task in tasks]

        removed = 0
        for (i, j, _), sepset in zip(tasks, outcomes):
            if sepset is None or not pdag.adjacent(i, j):
                continue
            pdag.remove_edge(i, j)
            pdag.sepsets[_pair(i, j)] = sepset
            removed += 1
            log.debug(
                "Edge removed: %s - %s sepset=%s",
                nodes[i],
                nodes[j],
                [nodes[k] for k in sepset],
            )
        log.info(
            "Skeleton level done: level=%s removed=%s remaining=%s",
            level,
            removed,
            len(pdag.skeleton()),
        )
        level += 1
    return pdag


def learn_skeleton(
    ds: Dataset,
    config: EstimatorConfig | None = None,
    *,
    max_cond_size: int = 3,
    min_samples: int = 200,
    ci_test: CiTest | None = None,
) -> Pdag:
    if ds.n_rows < min_samples:
        raise InsufficientSamples(ds.n_rows, min_samples)
    config = config or EstimatorConfig()
    test = ci_test if ci_test is not None else DataCiTest(ds, config)
    return pc_skeleton(ds.columns, test, max_cond_size=max_cond_size, workers=config.workers)


def _unshielded_triples(p: Pdag) -> list[tuple[int, int, int]]:
    triples: list[tuple[int, int, int]] = []
    n = len(p.nodes)
    for k in range(n):
        around = sorted(p.neighbors(k))
        for i, j in combinations(around, 2):
            if not p.adjacent(i, j):
                triples.append((i, k, j))
    return triples


def orient_v_structures(p: Pdag) -> Pdag:
    log = logging.getLogger(__name__)
    out = p.copy()
    proposals: set[tuple[int, int]] = set()
    for i, k, j in _unshielded_triples(p):
        sepset = p.sepset(i, j)
        if sepset is None or k in sepset:
            continue
        proposals.add((i, k))
        proposals.add((j, k))

    for a, b in sorted(proposals):
        if (b, a) in proposals:
            if (a, b) not in p.directed and (b, a) not in p.directed:
                log.warning(
                    "Conflicting v-structure orientations, leaving undirected: %s - %s",
                    p.nodes[a],
                    p.nodes[b],
                )
            continue
        if (b, a) in p.directed:
            log.warning(
                "V-structure contradicts existing orientation, keeping %s -> %s",
                p.nodes[b],
                p.nodes[a],
            )
            continue
        if (a, b) in p.directed:
            continue
        out.orient(a, b, V_STRUCTURE)
        if not nx.is_directed_acyclic_graph(out.directed_graph()):
            out.unorient(a, b)
            out.provenance[_pair(a, b)] = p.provenance.get(_pair(a, b), SKELETON)
            log.warning("V-structure would create a cycle, leaving undirected: %s - %s", p.nodes[a], p.nodes[b])
    return out


def _meek_step(p: Pdag) -> tuple[int, int, str] | None:
    for edge in sorted(p.undirected, key=lambda e: tuple(sorted(e))):
        x, y = sorted(edge)
        for a, b in ((x, y), (y, x)):
            # R1: c -> a - b, c and b nonadjacent
            if any(not p.adjacent(c, b) for c in p.parents(a) if c != b):
                return a, b, MEEK[0]
            # R2: a -> c -> b with a - b
            if p.children(a) & p.parents(b):
                return a, b, MEEK[1]
            # R3: a - c -> b, a - d -> b, c and d nonadjacent
            candidates = sorted(p.undirected_neighbors(a) & p.parents(b))
            for c, d in combinations(candidates, 2):
                if not p.adjacent(c, d):
                    return a, b, MEEK[2]
            # R4: a - d -> c -> b, a adjacent to c, d and b nonadjacent
            for d in p.undirected_neighbors(a):
                if d == b or p.adjacent(d, b):
                    continue
                for c in p.children(d):
                    if c in (a, b):
                        continue
                    if p.has_directed(c, b) and p.adjacent(a, c):
                        return a, b, MEEK[3]
    return None


def meek_rules(p: Pdag) -> Pdag:
    log = logging.getLogger(__name__)
    out = p.copy()
    fired = 0
    while True:
        step = _meek_step(out)
        if step is None:
            break
        a, b, rule = step
        out.orient(a, b, rule)
        fired += 1
        log.debug("Meek rule fired: rule=%s edge=%s -> %s", rule, out.nodes[a], out.nodes[b])
    log.debug("Meek closure done: orientations=%s", fired)
    return out


def cpdag(dag: Dag) -> Pdag:
    """Reference CPDAG of a DAG: its skeleton, its v-structures, then Meek's closure."""
    p = Pdag(dag.nodes)
    for a, b in dag.edges:
        p.undirected.add(_pair(a, b))
        p.provenance[_pair(a, b)] = SKELETON
    for v in range(dag.size):
        for a, b in combinations(sorted(dag.parents(v)), 2):
            if not dag.adjacent(a, b):
                p.orient(a, v, V_STRUCTURE)
                p.orient(b, v, V_STRUCTURE)
    return meek_rules(p)


def _pool_experiments(
    p: Pdag, experiments: Sequence[tuple[str, Dataset]]
) -> dict[str, Dataset]:
    pooled: dict[str, list[Dataset]] = {}
    for node, ds in experiments:
        if node not in p.nodes:
            raise MissingInterventionData(f"intervened node {node!r} is not in the graph")
        if node not in ds.provenance.clamped_columns:
            raise MissingInterventionData(f"dataset does not clamp {node!r}")
        if tuple(ds.columns) != tuple(p.nodes):
            raise MissingInterventionData(
                f"interventional columns {list(ds.columns)} differ from graph nodes {list(p.nodes)}"
            )
        pooled.setdefault(node, []).append(ds)
    merged: dict[str, Dataset] = {}
    for node, parts in pooled.items():
        values = np.vstack([part.values for part in parts])
        merged[node] = Dataset(parts[0].columns, values, parts[0].provenance, parts[0].labels)
        if np.unique(merged[node].column(node)).size < 2:
            raise MissingInterventionData(
                f"interventions on {node!r} need at least two clamp levels"
            )
    return merged


def orient_with_interventions(
    p: Pdag,
    experiments: Sequence[tuple[str, Dataset]],
    config: EstimatorConfig | None = None,
) -> Pdag:
    """Orient and add edges from do-experiments, then close under v-structures and Meek's rules.

    For each intervened node i, a node j counts as affected when the coefficient of
    j on i across the clamp levels exceeds its threshold.
    """
    log = logging.getLogger(__name__)
    if not experiments:
        return p.copy()
    config = config or EstimatorConfig()
    out = p.copy()
    added = False
    for node, ds in _pool_experiments(p, experiments).items():
        i = out.index_of(node)
        affected: set[int] = set()
        for j in range(len(out.nodes)):
            if j == i:
                continue
            try:
                est = estimate_coefficient(ds, j, i, (), config=config)
            except NoComparableCells as exc:
                raise MissingInterventionData(
                    f"clamp levels of {node!r} leave no comparable cells: {exc.message}"
                ) from exc
            if est.dependent:
                affected.add(j)
            log.debug(
                "Intervention effect: do=%s target=%s value=%.6g tau=%.6g",
                node,
                out.nodes[j],
                est.value,
                est.tau,
            )

        for j in sorted(out.neighbors(i)):
            if j in affected:
                if out.has_directed(j, i):
                    log.warning("Intervention contradicts %s -> %s, keeping it", out.nodes[j], node)
                    continue
                out.orient(i, j, INTERVENTIONAL)
            else:
                if out.has_directed(i, j):
                    log.warning("Intervention contradicts %s -> %s, keeping it", node, out.nodes[j])
                    continue
                out.orient(j, i, INTERVENTIONAL)

        for j in sorted(affected):
            if out.adjacent(i, j):
                continue
            possible_parents = out.parents(j) | out.undirected_neighbors(j)
            if possible_parents & affected:
                continue
            out.orient(i, j, INTERVENTIONAL)
            added = True
            log.info("Edge added from intervention: %s -> %s", node, out.nodes[j])

    if added:
        out = orient_v_structures(out)
    return meek_rules(out)


def pdag_to_dot(p: Pdag) -> str:
    lines = ["digraph depmeter {"]
    for name in p.nodes:
        lines.append(f'  "{name}";')
    for row in p.edge_rows():
        attrs = [f'provenance="{row["provenance"]}"', f'color="{_EDGE_COLORS.get(row["provenance"], "black")}"']
        if row["kind"] == "undirected":
            attrs.insert(0, "dir=none")
        lines.append(f'  "{row["source"]}" -> "{row["target"]}" [{", ".join(attrs)}];')
    for key in sorted(p.sepsets, key=lambda e: tuple(sorted(e))):
        a, b = sorted(key)
        members = " ".join(f'"{p.nodes[k]}"' for k in p.sepsets[key])
        lines.append(f'  // sepset "{p.nodes[a]}" "{p.nodes[b]}" : {members}'.rstrip())
    lines.append("}")
    return "\n".join(lines) + "\n"


_NODE_RE = re.compile(r'^\s*"([^"]+)"\s*;\s*$')
_EDGE_RE = re.compile(r'^\s*"([^"]+)"\s*(->|--)\s*"([^"]+)"\s*(?:\[(.*)\])?\s*;\s*$')
_SEPSET_RE = re.compile(r'^\s*//\s*sepset\s+"([^"]+)"\s+"([^"]+)"\s*:(.*)$')
_QUOTED_RE = re.compile(r'"([^"]+)"')


def pdag_from_dot(text: str) -> Pdag:
    nodes: list[str] = []
    edges: list[tuple[str, str, bool, str]] = []
    seps: list[tuple[str, str, list[str]]] = []
    for line in text.splitlines():
        if match := _SEPSET_RE.match(line):
            seps.append((match.group(1), match.group(2), _QUOTED_RE.findall(match.group(3))))
        elif match := _EDGE_RE.match(line):
            attrs = match.group(4) or ""
            undirected = match.group(2) == "--" or "dir=none" in attrs.replace(" ", "")
            prov = re.search(r'provenance\s*=\s*"([^"]+)"', attrs)
            edges.append((match.group(1), match.group(3), undirected, prov.group(1) if prov else SKELETON))
        elif match := _NODE_RE.match(line):
            nodes.append(match.group(1))
    for source, target, _, _ in edges:
        for name in (source, target):
            if name not in nodes:
                nodes.append(name)
    p = Pdag(tuple(nodes))
    for source, target, undirected, prov in edges:
        a, b = p.index_of(source), p.index_of(target)
        if undirected:
            p.undirected.add(_pair(a, b))
            p.provenance[_pair(a, b)] = prov
        else:
            p.orient(a, b, prov)
    for first, second, members in seps:
        p.sepsets[_pair(p.index_of(first), p.index_of(second))] = tuple(
            p.index_of(name) for name in members
        )
    return p


def write_dot(p: Pdag, path: str) -> None:
    atomic_write_text(path, pdag_to_dot(p))


def write_edge_list(p: Pdag, path: str) -> pl.DataFrame:
    frame = pl.DataFrame(
        p.edge_rows(),
        schema={"source": pl.String, "target": pl.String, "kind": pl.String, "provenance": pl.String},
    )
    atomic_write_text(path, frame.write_csv())
    return frame


def summarize(p: Pdag) -> Mapping[str, int]:
    return {
        "nodes": len(p.nodes),
        "directed": len(p.directed),
        "undirected": len(p.undirected),
        "removed": len(p.sepsets),
    }
