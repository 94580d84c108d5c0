#!/usr/bin/env python3
"""
Causal Pruning
Per-step reduction of the unrolled causal graph to a two-slice window, the pruned
intervention set handed to the planner, and reduction-factor accounting.

A node is *settled* at step t when at least `determinism` of the particles agree on its
next intrusion level under the base strategy and no particle plans an exploit on it.
Settled nodes lose I, Z and S in the next slice; their analyze/decoy interventions then
have no causal path to J and are pruned.

Usage:
    API: from pruning import CausalPruner, PruningConfig, prune_factor
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Hashable, Iterable, List, Optional, Sequence, Set, Tuple, Union

from belief import ParticleBelief
from cage2_model import (
    COMPROMISED, DO_NOTHING, N_DECOYS, AttackKind, AttackerAction, CageEnvironment, Intervention,
    InterventionKind, Topology, WorldState, causal_graph_of, plan_attack, reward, step_intrusion,
)
from causal_graph import TARGET, CausalGraph, VariableId, has_causal_effect

logger = logging.getLogger(__name__)

TARGET_NODE = VariableId('J')


class PruneFactorDomainError(ValueError):
    """Raised for per-step ratios outside (0, 1]."""


@dataclass(frozen=True)
class PruningConfig:
    tau_compromised: float = 0.5  # rule (ii): remove/restore need P(I in {C,R}) >= this
    tau_decoy: float = 0.5        # rule (iii): analyze/decoy need P(I in {C,R}) <= this
    determinism: float = 0.99
    enabled: bool = True

    def __post_init__(self):
        for name in ('tau_compromised', 'tau_decoy', 'determinism'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")


@dataclass(frozen=True)
class PrunedInterventionSet:
    """Admissible interventions in canonical order; do(∅) is always first."""
    admissible: Tuple[Intervention, ...]
    full_size: int

    def __post_init__(self):
        if DO_NOTHING not in self.admissible:
            raise ValueError("do-nothing must always be admissible")
        if len(self.admissible) > self.full_size:
            raise ValueError("admissible set larger than the candidate set")

    @property
    def pruned_size(self) -> int:
        return len(self.admissible)

    @property
    def fraction(self) -> float:
        """Share of candidates pruned."""
        return 1.0 - self.pruned_size / self.full_size

    def __contains__(self, intervention: Intervention) -> bool:
        return intervention in self.admissible

    def __iter__(self):
        return iter(self.admissible)

    def __len__(self) -> int:
        return len(self.admissible)


def candidate_interventions(topology: Topology) -> Tuple[Intervention, ...]:
    """do(∅) plus analyze, 8 decoys, remove and restore for every defended node, in canonical order."""
    candidates = [DO_NOTHING]
    for node in topology.node_ids:
        candidates.append(Intervention.analyze(node))
        candidates.extend(Intervention.start_decoy(node, j) for j in range(N_DECOYS))
        candidates.append(Intervention.remove(node))
        candidates.append(Intervention.restore(node))
    return tuple(sorted(candidates, key=Intervention.sort_key))


# ============================================================================
# BELIEF SUMMARIES
# ============================================================================

def _predicted_levels(world: WorldState, env: CageEnvironment,
                      base_strategy: Intervention) -> Tuple[Optional[int], ...]:
    """
    Next intrusion level of every node under the base strategy, or None where it is
    random (the planned attack is an exploit on that node).
    """
    topology = env.topology
    current = env.prepare(world, base_strategy)
    kind, target = plan_attack(current, topology, current.attacker_tag)
    if kind is AttackKind.EXPLOIT:
        return tuple(None if node_id == target else node.intrusion
                     for node_id, node in zip(topology.node_ids, current.nodes))
    action = AttackerAction(kind, target)
    return tuple(step_intrusion(node, node_id, action, False, topology)
                 for node_id, node in zip(topology.node_ids, current.nodes))


def _agreement(values: Iterable[Optional[Hashable]], weights: Iterable[int]) -> Tuple[Optional[Hashable], float]:
    """Most common non-None value and its share of the total weight."""
    counts: Counter = Counter()
    total = 0
    for value, weight in zip(values, weights):
        total += weight
        if value is not None:
            counts[value] += weight
    if not counts or total == 0:
        return None, 0.0
    value, count = counts.most_common(1)[0]
    return value, count / total


def settled_nodes(belief: ParticleBelief, env: CageEnvironment, base_strategy: Intervention = DO_NOTHING,
                  determinism: float = 0.99,
                  predict: Optional[Callable[[WorldState], Tuple[Optional[int], ...]]] = None) -> FrozenSet[int]:
    """
    Nodes whose next intrusion level is fixed by the belief under the base strategy.
    `predict` replaces the per-particle prediction (the pruner passes a memoised one).
    """
    distinct = belief.counts
    worlds = list(distinct)
    weights = [distinct[w] for w in worlds]
    if predict is None:
        predictions = [_predicted_levels(w, env, base_strategy) for w in worlds]
    else:
        predictions = [predict(w) for w in worlds]
    settled = set()
    for i, node_id in enumerate(env.topology.node_ids):
        column = [p[i] for p in predictions]
        if any(v is None for v in column):
            continue
        _, share = _agreement(column, weights)
        if share >= determinism:
            settled.add(node_id)
    return frozenset(settled)


def compromise_marginals(belief: ParticleBelief, topology: Topology) -> Dict[int, float]:
    counts = [0] * topology.n_nodes
    m = 0
    for world, weight in belief.counts.items():
        m += weight
        for i, node in enumerate(world.nodes):
            if node.intrusion in COMPROMISED:
                counts[i] += weight
    return {node_id: counts[i] / m for i, node_id in enumerate(topology.node_ids)}


# ============================================================================
# REDUCED GRAPH
# ============================================================================

def _slice_extractors(env: CageEnvironment,
                      base_strategy: Intervention) -> Dict[str, Callable[[WorldState, int], Optional[Hashable]]]:
    """Value of a slice variable (by name prefix) in a particle; None = not fixed by the particle."""
    topology = env.topology

    def attack(world: WorldState, _: int) -> Optional[Hashable]:
        current = env.prepare(world, base_strategy)
        kind, target = plan_attack(current, topology, current.attacker_tag)
        return None if kind is AttackKind.EXPLOIT else (kind, target)

    return {
        'I': lambda w, i: w.nodes[i].intrusion,
        'Z': lambda w, i: w.activity[i],
        'D': lambda w, i: w.nodes[i].decoys,
        'S': lambda w, i: w.nodes[i].reported_service,
        'C': lambda w, _: w.client_count,
        'R': lambda w, _: reward(w, DO_NOTHING, env.rewards, topology),
        'A': attack,
        'piA': lambda w, _: w.attacker_tag,
    }


def reduced_graph(graph: CausalGraph, t: int, belief: ParticleBelief, base_strategy: Intervention,
                  env: CageEnvironment, config: Optional[PruningConfig] = None) -> CausalGraph:
    """
    Two-slice reduction for the decision at step t (0-based; the decision acts on slice t+2).

    Slice t+1 variables fixed across `determinism` of the particles are removed, settled
    nodes lose I, Z and S in slice t+2, J is appended over R@t+2 (and the next decision
    X@t+2 when one remains), and everything that is not an ancestor of J is dropped.
    """
    config = config or PruningConfig()
    s = t + 1
    topology = env.topology
    window = [v for v in graph.nodes
              if v.time_index in (s, s + 1) or (v.is_static and v != TARGET_NODE)]
    reduced = graph.subgraph(window)

    extractors = _slice_extractors(env, base_strategy)
    distinct = belief.counts
    worlds = list(distinct)
    weights = [distinct[w] for w in worlds]
    determined: Set[VariableId] = set()
    for v in reduced.nodes:
        if v in reduced.latent and v.name != 'piA':
            continue
        if v.time_index not in (s, None):
            continue
        prefix, _, node = v.name.partition('_')
        extractor = extractors.get(prefix)
        if extractor is None:
            continue
        index = topology.index(int(node)) if node else 0
        _, share = _agreement((extractor(w, index) for w in worlds), weights)
        if share >= config.determinism:
            determined.add(v)

    settled = settled_nodes(belief, env, base_strategy, config.determinism)
    for node_id in settled:
        for name in ('I', 'Z', 'S'):
            determined.add(VariableId(f"{name}_{node_id}", s + 1))
    reduced = reduced.without(determined)

    parents = [VariableId('R', s + 1)]
    next_decision = VariableId('X', s + 1)
    if next_decision in reduced:
        parents.append(next_decision)
    reduced = reduced.with_node(TARGET_NODE, parents, tag=TARGET)
    keep = reduced.ancestors([TARGET_NODE]) | {TARGET_NODE}
    logger.debug(f"Reduced graph at t={t}: {len(keep)} of {len(window) + 1} variables kept")
    return reduced.subgraph(keep)


def intervention_variable(intervention: Intervention, slice_index: int) -> Optional[VariableId]:
    """The slice variable an analyze/decoy intervention sets; None for the other kinds."""
    if intervention.kind is InterventionKind.ANALYZE:
        return VariableId(f"Z_{intervention.node}", slice_index)
    if intervention.kind is InterventionKind.DECOY:
        return VariableId(f"D_{intervention.node}", slice_index)
    return None


def causal_effect_route(graph: CausalGraph, intervention: Intervention, t: int) -> bool:
    """Whether the variable set by the intervention can still affect J in the reduced graph."""
    variable = intervention_variable(intervention, t + 2)
    if variable is None:
        return True
    if variable not in graph:
        return False
    return has_causal_effect(graph, [variable], [TARGET_NODE])


# ============================================================================
# PRUNED SET
# ============================================================================

def pruned_intervention_set(observed_decoys: Sequence[Sequence[int]], belief: ParticleBelief,
                            topology: Topology, config: Optional[PruningConfig] = None,
                            reachable: Optional[Callable[[Intervention], bool]] = None) -> PrunedInterventionSet:
    """
    Apply the pruning rules to the candidate set:
    (i) decoys already running, (ii) remove/restore on nodes unlikely to be compromised,
    (iii) analyze/decoy on nodes likely compromised. `reachable` adds the graph route for
    analyze/decoy interventions.

    Example:
        >>> pruned = pruned_intervention_set(obs.decoys, belief, topology)
        >>> DO_NOTHING in pruned
        True
    """
    config = config or PruningConfig()
    candidates = candidate_interventions(topology)
    if not config.enabled:
        return PrunedInterventionSet(candidates, len(candidates))

    compromised = compromise_marginals(belief, topology)
    admissible: List[Intervention] = []
    for intervention in candidates:
        kind = intervention.kind
        if kind is InterventionKind.NONE:
            admissible.append(intervention)
            continue
        p = compromised[intervention.node]
        if kind in (InterventionKind.REMOVE, InterventionKind.RESTORE):
            if p < config.tau_compromised:
                continue
        else:
            if kind is InterventionKind.DECOY and observed_decoys[topology.index(intervention.node)][intervention.decoy]:
                continue
            if p > config.tau_decoy:
                continue
            if reachable is not None and not reachable(intervention):
                continue
        admissible.append(intervention)
    return PrunedInterventionSet(tuple(admissible), len(candidates))


class CausalPruner:
    """
    Pruning oracle for the planner. The graph route is evaluated in closed form from the
    settled nodes; `use_graph=True` builds the reduced graph and runs the d-separation
    test instead (same answer, much slower).

    The closed-form path is called at every visit of a growing node pool, so it memoises
    per-particle predictions and the pruned set per belief summary.
    """

    PREDICTION_CACHE_LIMIT = 200_000

    def __init__(self, env: CageEnvironment, config: Optional[PruningConfig] = None,
                 base_strategy: Intervention = DO_NOTHING, horizon: Optional[int] = None,
                 use_graph: bool = False):
        self.env = env
        self.config = config or PruningConfig()
        self.base_strategy = base_strategy
        self.horizon = horizon or env.horizon
        self.use_graph = use_graph
        self._graph: Optional[CausalGraph] = None
        self._predictions: Dict[WorldState, Tuple[Optional[int], ...]] = {}
        self._sets: Dict[Hashable, PrunedInterventionSet] = {}

    @property
    def graph(self) -> CausalGraph:
        if self._graph is None:
            self._graph = causal_graph_of(self.env.topology, self.horizon)
        return self._graph

    def reduced_graph(self, belief: ParticleBelief, t: int) -> CausalGraph:
        return reduced_graph(self.graph, t, belief, self.base_strategy, self.env, self.config)

    def _predict(self, world: WorldState) -> Tuple[Optional[int], ...]:
        levels = self._predictions.get(world)
        if levels is None:
            if len(self._predictions) >= self.PREDICTION_CACHE_LIMIT:
                self._predictions.clear()
            levels = self._predictions[world] = _predicted_levels(world, self.env, self.base_strategy)
        return levels

    def admissible(self, belief: ParticleBelief, t: int) -> PrunedInterventionSet:
        observed_decoys = tuple(node.decoys for node in belief.representative().nodes)
        topology = self.env.topology
        if not self.config.enabled:
            full = self._sets.get(None)
            if full is None:
                full = self._sets[None] = pruned_intervention_set(observed_decoys, belief, topology, self.config)
            return full

        if self.use_graph:
            reduced = self.reduced_graph(belief, t)

            def reachable(intervention: Intervention) -> bool:
                return causal_effect_route(reduced, intervention, t)

            return pruned_intervention_set(observed_decoys, belief, topology, self.config, reachable)

        config = self.config
        settled = settled_nodes(belief, self.env, self.base_strategy, config.determinism, self._predict)
        last_decision = t >= self.horizon - 1
        compromised = compromise_marginals(belief, topology)
        key = (
            observed_decoys, settled, last_decision,
            frozenset(n for n, p in compromised.items() if p < config.tau_compromised),
            frozenset(n for n, p in compromised.items() if p > config.tau_decoy),
        )
        cached = self._sets.get(key)
        if cached is not None:
            return cached

        def reachable(intervention: Intervention) -> bool:
            if intervention.node in settled:
                return False
            return not (intervention.kind is InterventionKind.ANALYZE and last_decision)

        pruned = self._sets[key] = pruned_intervention_set(observed_decoys, belief, topology, config, reachable)
        return pruned


# ============================================================================
# REDUCTION ACCOUNTING
# ============================================================================

def prune_factor(per_step_ratio: Union[float, Sequence[float]], T: Optional[int] = None) -> float:
    """
    Fractional reduction 1 - prod_t ratio_t of the number of intervention sequences.

    Args:
        per_step_ratio: one ratio per step, or a constant ratio (then T is required)
        T: horizon for a constant ratio

    Example:
        >>> round(prune_factor(0.9, 10), 4)
        0.6513
    """
    if isinstance(per_step_ratio, (int, float)):
        if T is None or T < 0:
            raise ValueError("a constant ratio needs a horizon T >= 0")
        ratios = [float(per_step_ratio)] * T
    else:
        ratios = [float(r) for r in per_step_ratio]
        if T is not None and T != len(ratios):
            raise ValueError(f"got {len(ratios)} ratios for horizon {T}")
    product = 1.0
    for r in ratios:
        if not 0.0 < r <= 1.0:
            raise PruneFactorDomainError(f"per-step ratio must be in (0, 1], got {r}")
        product *= r
    return 1.0 - product


def reduction_curve(ratios: Sequence[float] = (0.99, 0.95, 0.9),
                    horizons: Iterable[int] = range(1, 101)) -> Dict[float, List[Tuple[int, float]]]:
    """prune_factor over horizons for a few constant ratios."""
    horizons = list(horizons)
    return {ratio: [(T, prune_factor(ratio, T)) for T in horizons] for ratio in ratios}


@dataclass
class PruningStats:
    """Per-step (step, full_size, pruned_size, fraction) records of one episode."""
    rows: List[Tuple[int, int, int, float]] = field(default_factory=list)

    def record(self, step: int, pruned: PrunedInterventionSet):
        self.rows.append((step, pruned.full_size, pruned.pruned_size, pruned.fraction))

    @property
    def mean_fraction(self) -> float:
        if not self.rows:
            return 0.0
        return sum(row[3] for row in self.rows) / len(self.rows)

    def ratios(self) -> List[float]:
        """Admissible share per step, the input of prune_factor."""
        return [row[2] / row[1] for row in self.rows]


__all__ = [
    'PruningConfig', 'PrunedInterventionSet', 'PruneFactorDomainError', 'CausalPruner',
    'candidate_interventions', 'settled_nodes', 'compromise_marginals', 'reduced_graph',
    'causal_effect_route', 'intervention_variable', 'pruned_intervention_set', 'prune_factor',
    'reduction_curve', 'PruningStats',
]
