#!/usr/bin/env python3
"""
Causal Graph Machinery
Directed acyclic graphs over time-indexed variables, d-separation, interventional
(mutilated) graphs and the Markovian POMIS special case.

Usage:
    API: from causal_graph import CausalGraph, VariableId, d_separated, pomis_markovian
"""

import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Set, Tuple, Union

import networkx as nx

logger = logging.getLogger(__name__)

# Per-node class tags
MANIPULATIVE = 'manipulative'
NON_MANIPULATIVE = 'non-manipulative'
OBSERVED = 'observed'
LATENT = 'latent'
TARGET = 'target'

CLASS_TAGS = {MANIPULATIVE, NON_MANIPULATIVE, OBSERVED, LATENT, TARGET}


class UnknownVariableError(KeyError):
    """Raised when a variable is not a node of the graph."""


class CyclicGraphError(ValueError):
    """Raised when an operation requires an acyclic graph."""


class PreconditionError(ValueError):
    """Raised when the graph violates the precondition of an operation."""


@dataclass(frozen=True)
class VariableId:
    """
    A node of a causal graph.

    time_index is a step >= 1, or None for static variables (pi_A, J, ...).
    """
    name: str
    time_index: Optional[int] = None

    def __post_init__(self):
        if self.time_index is not None and self.time_index < 1:
            raise ValueError(f"time_index must be >= 1 or None, got {self.time_index}")

    @property
    def is_static(self) -> bool:
        return self.time_index is None

    def sort_key(self) -> Tuple[int, str]:
        return (0 if self.time_index is None else self.time_index, self.name)

    def __str__(self) -> str:
        if self.time_index is None:
            return self.name
        return f"{self.name}@{self.time_index}"

    @classmethod
    def parse(cls, text: str) -> 'VariableId':
        """Parse `name@t` (time-indexed) or `name` (static)."""
        text = text.strip()
        if not text:
            raise ValueError("empty variable name")
        if '@' in text:
            name, _, index = text.rpartition('@')
            return cls(name, int(index))
        return cls(text)


VarLike = Union[VariableId, str]


def _as_var(v: VarLike) -> VariableId:
    return v if isinstance(v, VariableId) else VariableId.parse(v)


class CausalGraph:
    """
    Directed graph over VariableIds with latent markers and class tags.

    Latent confounders are explicit nodes rather than bidirected edges. Instances
    are treated as immutable: every transformation returns a new graph.
    """

    def __init__(self,
                 nodes: Iterable[VarLike],
                 edges: Iterable[Tuple[VarLike, VarLike]] = (),
                 latent: Iterable[VarLike] = (),
                 classes: Optional[Mapping[VarLike, str]] = None):
        self._g = nx.DiGraph()
        for node in nodes:
            self._g.add_node(_as_var(node))

        for tail, head in edges:
            tail, head = _as_var(tail), _as_var(head)
            for endpoint in (tail, head):
                if endpoint not in self._g:
                    raise UnknownVariableError(f"edge endpoint {endpoint} is not a node")
            if (not tail.is_static and not head.is_static
                    and head.time_index < tail.time_index):
                raise ValueError(f"edge {tail} -> {head} runs backwards in time")
            self._g.add_edge(tail, head)

        self._latent: FrozenSet[VariableId] = frozenset(_as_var(v) for v in latent)
        missing = [v for v in self._latent if v not in self._g]
        if missing:
            raise UnknownVariableError(f"latent variables not in graph: {sorted(map(str, missing))}")

        tags: Dict[VariableId, str] = {}
        for v in self._g.nodes:
            tags[v] = LATENT if v in self._latent else OBSERVED
        for v, tag in (classes or {}).items():
            v = _as_var(v)
            if v not in self._g:
                raise UnknownVariableError(f"class tag for unknown variable {v}")
            if tag not in CLASS_TAGS:
                raise ValueError(f"unknown class tag {tag!r} for {v}")
            tags[v] = tag
        self._classes = tags

    # ========================================================================
    # BASIC QUERIES
    # ========================================================================

    @property
    def nodes(self) -> FrozenSet[VariableId]:
        return frozenset(self._g.nodes)

    @property
    def edges(self) -> List[Tuple[VariableId, VariableId]]:
        return sorted(self._g.edges, key=lambda e: (e[0].sort_key(), e[1].sort_key()))

    @property
    def latent(self) -> FrozenSet[VariableId]:
        return self._latent

    @property
    def class_map(self) -> Dict[VariableId, str]:
        return dict(self._classes)

    def nodes_of_class(self, tag: str) -> Set[VariableId]:
        return {v for v, t in self._classes.items() if t == tag}

    def __contains__(self, v: VarLike) -> bool:
        return _as_var(v) in self._g

    def __len__(self) -> int:
        return self._g.number_of_nodes()

    def _require(self, v: VarLike) -> VariableId:
        v = _as_var(v)
        if v not in self._g:
            raise UnknownVariableError(f"unknown variable {v}")
        return v

    def parents(self, v: VarLike) -> Set[VariableId]:
        return set(self._g.predecessors(self._require(v)))

    def children(self, v: VarLike) -> Set[VariableId]:
        return set(self._g.successors(self._require(v)))

    def ancestors(self, vs: Iterable[VarLike]) -> Set[VariableId]:
        """Strict ancestors of a set of variables."""
        result: Set[VariableId] = set()
        for v in vs:
            result |= nx.ancestors(self._g, self._require(v))
        return result

    def descendants(self, vs: Iterable[VarLike]) -> Set[VariableId]:
        result: Set[VariableId] = set()
        for v in vs:
            result |= nx.descendants(self._g, self._require(v))
        return result

    def is_acyclic(self) -> bool:
        return nx.is_directed_acyclic_graph(self._g)

    def topological_order(self) -> List[VariableId]:
        if not self.is_acyclic():
            raise CyclicGraphError("graph has a directed cycle")
        return list(nx.lexicographical_topological_sort(self._g, key=lambda v: v.sort_key()))

    # ========================================================================
    # TRANSFORMATIONS
    # ========================================================================

    def subgraph(self, keep: Iterable[VarLike]) -> 'CausalGraph':
        """Induced subgraph G[keep]."""
        keep_set = {self._require(v) for v in keep}
        return CausalGraph(
            keep_set,
            [(t, h) for t, h in self._g.edges if t in keep_set and h in keep_set],
            latent=self._latent & keep_set,
            classes={v: self._classes[v] for v in keep_set},
        )

    def without(self, drop: Iterable[VarLike]) -> 'CausalGraph':
        drop_set = {_as_var(v) for v in drop}
        return self.subgraph(v for v in self._g.nodes if v not in drop_set)

    def do(self, intervened: Iterable[VarLike]) -> 'CausalGraph':
        """Mutilated graph G_{\\bar X}: incoming edges of the intervened variables removed."""
        cut = {self._require(v) for v in intervened}
        return CausalGraph(
            self._g.nodes,
            [(t, h) for t, h in self._g.edges if h not in cut],
            latent=self._latent,
            classes=self._classes,
        )

    def with_node(self, v: VarLike, parents: Iterable[VarLike] = (),
                  tag: str = OBSERVED) -> 'CausalGraph':
        """Copy of the graph with one extra node wired to the given parents."""
        v = _as_var(v)
        parent_set = [self._require(p) for p in parents]
        classes = dict(self._classes)
        classes[v] = tag
        return CausalGraph(
            list(self._g.nodes) + [v],
            list(self._g.edges) + [(p, v) for p in parent_set],
            latent=self._latent | ({v} if tag == LATENT else set()),
            classes=classes,
        )

    # ========================================================================
    # SERIALIZATION (edge-list text format)
    # ========================================================================

    def to_edge_list(self) -> str:
        """
        Plain-text edge list: `latent:` lines first, then one `tail -> head` per line.
        Isolated nodes are written as `node: name`.
        """
        lines = []
        for v in sorted(self._latent, key=lambda x: x.sort_key()):
            lines.append(f"latent: {v}")
        for v in sorted(self._g.nodes, key=lambda x: x.sort_key()):
            if self._g.degree(v) == 0:
                lines.append(f"node: {v}")
        for tail, head in self.edges:
            lines.append(f"{tail} -> {head}")
        return '\n'.join(lines) + '\n'

    @classmethod
    def from_edge_list(cls, text: str) -> 'CausalGraph':
        nodes: List[VariableId] = []
        edges: List[Tuple[VariableId, VariableId]] = []
        latent: List[VariableId] = []
        seen: Set[VariableId] = set()

        def add(v: VariableId):
            if v not in seen:
                seen.add(v)
                nodes.append(v)

        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            try:
                if line.startswith('latent:'):
                    for name in line[len('latent:'):].replace(',', ' ').split():
                        v = VariableId.parse(name)
                        add(v)
                        latent.append(v)
                elif line.startswith('node:'):
                    for name in line[len('node:'):].replace(',', ' ').split():
                        add(VariableId.parse(name))
                elif '->' in line:
                    tail_text, head_text = line.split('->', 1)
                    tail, head = VariableId.parse(tail_text), VariableId.parse(head_text)
                    add(tail)
                    add(head)
                    edges.append((tail, head))
                else:
                    raise ValueError(f"cannot parse {line!r}")
            except ValueError as e:
                raise ValueError(f"edge list line {lineno}: {e}") from e
        return cls(nodes, edges, latent=latent)

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'CausalGraph':
        return cls.from_edge_list(Path(path).read_text())

    def __repr__(self) -> str:
        return (f"CausalGraph(nodes={self._g.number_of_nodes()}, "
                f"edges={self._g.number_of_edges()}, latent={len(self._latent)})")


# ============================================================================
# FUNCTIONAL INTERFACE
# ============================================================================

def parents(graph: CausalGraph, v: VarLike) -> Set[VariableId]:
    """Tails of the edges into v."""
    return graph.parents(v)


def is_acyclic(graph: CausalGraph) -> bool:
    return graph.is_acyclic()


def d_separated(graph: CausalGraph,
                a: Iterable[VarLike],
                b: Iterable[VarLike],
                given: Iterable[VarLike] = ()) -> bool:
    """
    Test whether `a` and `b` are d-separated by `given`.

    Reachability ("Bayes-ball") procedure: phase one marks `given` and its
    ancestors, phase two walks (node, direction) pairs from `a` and collects every
    node reachable along an active trail.

    Example:
        >>> g = CausalGraph(['X', 'Z', 'J'], [('X', 'Z'), ('Z', 'J')])
        >>> d_separated(g, {'X'}, {'J'}, {'Z'})
        True
    """
    a_set = {graph._require(v) for v in a}
    b_set = {graph._require(v) for v in b}
    z_set = {graph._require(v) for v in given}
    if a_set & b_set or a_set & z_set or b_set & z_set:
        raise ValueError("a, b and given must be pairwise disjoint")
    if not a_set or not b_set:
        return True

    # Phase 1: conditioning set and its ancestors (open colliders)
    opens_collider = z_set | graph.ancestors(z_set)

    # Phase 2: 'up' = arrived from a child, 'down' = arrived from a parent
    pending = deque((v, 'up') for v in a_set)
    visited: Set[Tuple[VariableId, str]] = set()
    while pending:
        node, direction = pending.popleft()
        if (node, direction) in visited:
            continue
        visited.add((node, direction))

        if node not in z_set and node in b_set:
            return False

        if direction == 'up':
            if node in z_set:
                continue
            for p in graph.parents(node):
                pending.append((p, 'up'))
            for c in graph.children(node):
                pending.append((c, 'down'))
        else:
            if node not in z_set:
                for c in graph.children(node):
                    pending.append((c, 'down'))
            if node in opens_collider:
                for p in graph.parents(node):
                    pending.append((p, 'up'))
    return True


def has_causal_effect(graph: CausalGraph, x: Iterable[VarLike], y: Iterable[VarLike],
                      given: Iterable[VarLike] = ()) -> bool:
    """
    Whether do(x) can change y: x and y are d-connected in the graph with the
    incoming edges of x removed.
    """
    x_set = {_as_var(v) for v in x}
    return not d_separated(graph.do(x_set), x_set, y, given)


def pomis_markovian(graph: CausalGraph, target: VarLike) -> FrozenSet[FrozenSet[VariableId]]:
    """
    POMIS set of a Markovian graph where all non-target nodes are manipulative:
    exactly one set, the parents of the target.

    Raises:
        PreconditionError: if the graph has latent nodes (use the approximate
            reduction of the pruning module instead)
    """
    target = graph._require(target)
    if graph.latent:
        raise PreconditionError(
            f"graph has {len(graph.latent)} latent nodes; the Markovian POMIS rule does not apply"
        )
    non_manipulable = [v for v, tag in graph.class_map.items()
                       if v != target and tag in (NON_MANIPULATIVE, LATENT)]
    if non_manipulable:
        raise PreconditionError(
            f"non-manipulative variables present: {sorted(map(str, non_manipulable))}"
        )
    return frozenset({frozenset(graph.parents(target))})


__all__ = [
    'VariableId', 'CausalGraph', 'UnknownVariableError', 'CyclicGraphError',
    'PreconditionError', 'parents', 'is_acyclic', 'd_separated', 'has_causal_effect',
    'pomis_markovian', 'MANIPULATIVE', 'NON_MANIPULATIVE', 'OBSERVED', 'LATENT', 'TARGET',
]
