#!/usr/bin/env python3
"""
C-POMCP Planner
Online tree search over intervention/observation histories with particle beliefs at the
nodes, causal pruning at expansion and base-strategy rollouts; plain POMCP is the same
search with pruning disabled. The subtree matching the realised intervention and
observation is carried into the next decision. Also the do-nothing and random baselines,
exhaustive Q-values for micro instances and the episode driver.

Usage:
    API: from planner import SearchConfig, CPOMCPPlanner, run_episode
"""

import logging
import math
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from belief import ExactBelief, ParticleBelief, exact_update, particle_filter_step
from cage2_model import DO_NOTHING, CageEnvironment, Intervention, Observation, WorldState, spawn_rng
from pruning import CausalPruner, PrunedInterventionSet, PruningConfig, candidate_interventions

logger = logging.getLogger(__name__)

C_POMCP = 'c-pomcp'
POMCP = 'pomcp'
NOOP = 'noop'
RANDOM = 'random'
METHODS = (C_POMCP, POMCP, NOOP, RANDOM)

OBSERVATION_NODE = 'observation'
INTERVENTION_NODE = 'intervention'


def zero_base_value(state: WorldState) -> float:
    return 0.0


# ============================================================================
# CONFIGURATION AND TREE
# ============================================================================

@dataclass(frozen=True)
class SearchConfig:
    exploration_c: float = 0.5
    budget_sims: Optional[int] = 1000
    budget_seconds: Optional[float] = None
    rollout_depth: int = 4
    max_depth: int = 50
    gamma: float = 0.99
    particles_m: int = 1000
    base_strategy: Intervention = DO_NOTHING
    base_value: Callable[[WorldState], float] = zero_base_value
    pruning: PruningConfig = field(default_factory=PruningConfig)
    reuse_tree: bool = True

    def __post_init__(self):
        if self.exploration_c < 0:
            raise ValueError(f"exploration_c must be >= 0, got {self.exploration_c}")
        if self.budget_sims is None and self.budget_seconds is None:
            raise ValueError("a simulation or wall-clock budget is required")
        if self.budget_sims is not None and self.budget_sims <= 0:
            raise ValueError(f"budget_sims must be > 0, got {self.budget_sims}")
        if self.budget_seconds is not None and self.budget_seconds <= 0:
            raise ValueError(f"budget_seconds must be > 0, got {self.budget_seconds}")
        if self.rollout_depth < 0 or self.max_depth < 1:
            raise ValueError("rollout_depth must be >= 0 and max_depth >= 1")
        if self.particles_m < 1:
            raise ValueError(f"particles_m must be >= 1, got {self.particles_m}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")

    def without_pruning(self) -> 'SearchConfig':
        return replace(self, pruning=replace(self.pruning, enabled=False))


@dataclass
class SearchNode:
    """
    One history in the search tree. Observation nodes choose among interventions and pool
    the particles that reached them; intervention nodes branch on the observation that follows.
    """
    kind: str
    visits: int = 0
    total_return: float = 0.0
    children: Dict[Union[Intervention, Observation], 'SearchNode'] = field(default_factory=dict)
    pool: Counter = field(default_factory=Counter)
    pool_size: int = 0
    admissible: Optional[PrunedInterventionSet] = None
    admissible_pool_size: int = 0

    @property
    def value(self) -> float:
        """Mean of the returns backed up through this node (0 before the first visit)."""
        return self.total_return / self.visits if self.visits else 0.0

    @property
    def expanded(self) -> bool:
        return self.admissible is not None

    def update(self, ret: float):
        self.visits += 1
        self.total_return += ret

    def add_particle(self, state: WorldState):
        self.pool[state] += 1
        self.pool_size += 1

    def reset_pool(self, belief: ParticleBelief):
        self.pool = Counter(belief.counts)
        self.pool_size = len(belief)
        self.admissible_pool_size = -1

    @property
    def stale(self) -> bool:
        """The pool has grown since the admissible set was computed."""
        return self.pool_size != self.admissible_pool_size

    def pool_belief(self) -> ParticleBelief:
        return ParticleBelief.from_counts(self.pool)


@dataclass(frozen=True)
class SearchStatistics:
    simulations: int = 0
    tree_nodes: int = 0
    max_depth: int = 0
    pruned_fraction: float = 0.0
    full_size: int = 0
    pruned_size: int = 0
    search_ms: float = 0.0
    reused_visits: int = 0


def ucb_score(child_value: float, child_visits: int, parent_visits: int, c: float) -> float:
    """
    Ĵ + c * sqrt(ln N_parent / N_child); unvisited children score +inf.

    Example:
        >>> ucb_score(-5.0, 1, math.e, 0.5)
        -4.5
    """
    if child_visits == 0:
        return math.inf
    return child_value + c * math.sqrt(math.log(max(parent_visits, 1)) / child_visits)


# ============================================================================
# SEARCH
# ============================================================================

class CPOMCPPlanner:
    """
    Tree search with the causal pruner restricting expansion.

    Every observation node pools the particles that reached it. Its admissible set is
    recomputed from the pool whenever the pool has grown since the last visit, so the
    stored set always reflects the node's current belief. Children of interventions
    that drop out keep their statistics but are no longer selected.
    """

    name = C_POMCP
    needs_belief = True

    def __init__(self, env: CageEnvironment, config: Optional[SearchConfig] = None, pruner=None,
                 horizon: Optional[int] = None):
        self.env = env
        self.config = config or SearchConfig()
        self.horizon = horizon or env.horizon
        self.pruner = pruner or CausalPruner(env, self.config.pruning, self.config.base_strategy, self.horizon)
        self.root: Optional[SearchNode] = None
        self._last_intervention: Optional[Intervention] = None
        self._rng: Optional[np.random.Generator] = None
        self._tree_nodes = 0
        self._max_depth = 0

    # ------------------------------------------------------------------------
    # Tree phases
    # ------------------------------------------------------------------------

    def _new_node(self, kind: str) -> SearchNode:
        self._tree_nodes += 1
        return SearchNode(kind)

    def _refresh(self, node: SearchNode, t: int):
        """Recompute the admissible set from the node's pool; new interventions get fresh children."""
        node.admissible = self.pruner.admissible(node.pool_belief(), t)
        node.admissible_pool_size = node.pool_size
        for intervention in node.admissible:
            if intervention not in node.children:
                node.children[intervention] = self._new_node(INTERVENTION_NODE)

    def _select(self, node: SearchNode) -> Intervention:
        best, best_score = None, -math.inf
        for intervention in node.admissible:
            child = node.children[intervention]
            score = ucb_score(child.value, child.visits, node.visits, self.config.exploration_c)
            if best is None or score > best_score:
                best, best_score = intervention, score
        return best

    def rollout(self, state: WorldState, t: int, depth: int) -> float:
        """Discounted rewards of the base strategy for rollout_depth steps, closed by base_value."""
        config = self.config
        total, discount = 0.0, 1.0
        for k in range(config.rollout_depth):
            if t + k >= self.horizon:
                return total
            if depth + k >= config.max_depth:
                return total + discount * config.base_value(state)
            state = self.env.advance(state, config.base_strategy, self._rng)
            total += discount * self.env.reward(state, config.base_strategy)
            discount *= config.gamma
        if t + config.rollout_depth >= self.horizon:
            return total
        return total + discount * config.base_value(state)

    def simulate(self, node: SearchNode, state: WorldState, t: int, depth: int) -> float:
        """One descent from `node` with `state` sampled from its belief; returns the discounted return."""
        config = self.config
        self._max_depth = max(self._max_depth, depth)
        if depth >= config.max_depth:
            return config.base_value(state)
        if t >= self.horizon:
            return 0.0

        if not node.pool:
            node.add_particle(state)
        if not node.expanded:
            self._refresh(node, t)
            ret = self.rollout(state, t, depth)
            node.update(ret)
            return ret
        if node.stale:
            self._refresh(node, t)

        intervention = self._select(node)
        child = node.children[intervention]
        next_state, observation, r = self.env.step(state, intervention, self._rng)
        successor = child.children.get(observation)
        if successor is None:
            successor = self._new_node(OBSERVATION_NODE)
            child.children[observation] = successor
        successor.add_particle(next_state)

        ret = r + config.gamma * self.simulate(successor, next_state, t + 1, depth + 1)
        child.update(ret)
        node.update(ret)
        return ret

    def build_tree(self, belief: ParticleBelief, t: int, rng: np.random.Generator,
                   root: Optional[SearchNode] = None) -> Tuple[SearchNode, SearchStatistics]:
        """
        Run simulations from the belief until the budget is spent; returns the root and statistics.

        Args:
            belief: particle belief at the root
            t: 0-based decision index
            rng: search random stream
            root: subtree kept from the previous decision; its pool is replaced by `belief`
        """
        config = self.config
        self._rng = rng
        self._max_depth = 0
        started = time.perf_counter()

        if root is None:
            self._tree_nodes = 0
            root = self._new_node(OBSERVATION_NODE)
        else:
            self._tree_nodes = count_nodes(root)
        reused_visits = root.visits
        root.reset_pool(belief)
        self._refresh(root, t)

        simulations = 0
        while True:
            state = belief.sample(rng)
            self.simulate(root, state, t, 0)
            simulations += 1
            if config.budget_sims is not None and simulations >= config.budget_sims:
                break
            if config.budget_seconds is not None and time.perf_counter() - started >= config.budget_seconds:
                break

        elapsed = time.perf_counter() - started
        if config.budget_seconds is not None and elapsed > 1.5 * config.budget_seconds:
            logger.warning(f"Search at t={t} overran its budget: {elapsed:.3f}s of {config.budget_seconds}s")
        stats = SearchStatistics(
            simulations=simulations,
            tree_nodes=self._tree_nodes,
            max_depth=self._max_depth,
            pruned_fraction=root.admissible.fraction,
            full_size=root.admissible.full_size,
            pruned_size=root.admissible.pruned_size,
            search_ms=1000.0 * elapsed,
            reused_visits=reused_visits,
        )
        logger.debug(f"t={t}: {simulations} simulations ({reused_visits} reused), {self._tree_nodes} nodes, "
                     f"{stats.pruned_size}/{stats.full_size} admissible")
        return root, stats

    @staticmethod
    def best_intervention(root: SearchNode) -> Intervention:
        """Argmax of Ĵ over visited root children; ties go to the canonically smallest."""
        best, best_value = DO_NOTHING, -math.inf
        for intervention in root.admissible:
            child = root.children[intervention]
            if child.visits and child.value > best_value:
                best, best_value = intervention, child.value
        return best

    def search(self, belief: ParticleBelief, t: int, rng: np.random.Generator,
               root: Optional[SearchNode] = None) -> Tuple[Intervention, SearchStatistics]:
        self.root, stats = self.build_tree(belief, t, rng, root)
        return self.best_intervention(self.root), stats

    def subtree(self, observation: Optional[Observation]) -> Optional[SearchNode]:
        """Node of the last tree reached by the intervention just taken and `observation`."""
        if self.root is None or self._last_intervention is None or observation is None:
            return None
        child = self.root.children.get(self._last_intervention)
        return child.children.get(observation) if child is not None else None

    def act(self, belief: Optional[ParticleBelief], observation: Optional[Observation], t: int,
            rng: np.random.Generator) -> Tuple[Intervention, SearchStatistics]:
        root = self.subtree(observation) if self.config.reuse_tree else None
        intervention, stats = self.search(belief, t, rng, root)
        self._last_intervention = intervention
        return intervention, stats


def count_nodes(root: SearchNode) -> int:
    total, stack = 0, [root]
    while stack:
        node = stack.pop()
        total += 1
        stack.extend(node.children.values())
    return total


class POMCPPlanner(CPOMCPPlanner):
    """Same search over the full intervention set."""

    name = POMCP

    def __init__(self, env: CageEnvironment, config: Optional[SearchConfig] = None, pruner=None,
                 horizon: Optional[int] = None):
        super().__init__(env, (config or SearchConfig()).without_pruning(), pruner, horizon)


class NoopPolicy:
    """Always do(∅)."""

    name = NOOP
    needs_belief = False

    def __init__(self, env: CageEnvironment):
        self.full_size = len(candidate_interventions(env.topology))

    def act(self, belief, observation, t, rng) -> Tuple[Intervention, SearchStatistics]:
        return DO_NOTHING, SearchStatistics(full_size=self.full_size, pruned_size=self.full_size)


class RandomPolicy:
    """Uniform over the full candidate set."""

    name = RANDOM
    needs_belief = False

    def __init__(self, env: CageEnvironment):
        self.candidates = candidate_interventions(env.topology)

    def act(self, belief, observation, t, rng) -> Tuple[Intervention, SearchStatistics]:
        n = len(self.candidates)
        return self.candidates[int(rng.integers(n))], SearchStatistics(full_size=n, pruned_size=n)


def make_policy(method: str, env: CageEnvironment, config: SearchConfig, horizon: Optional[int] = None,
                pruner=None):
    if method == C_POMCP:
        return CPOMCPPlanner(env, config, pruner, horizon)
    if method == POMCP:
        return POMCPPlanner(env, config, pruner, horizon)
    if method == NOOP:
        return NoopPolicy(env)
    if method == RANDOM:
        return RandomPolicy(env)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


# ============================================================================
# EXACT PLANNING
# ============================================================================

def exact_q_values(env: CageEnvironment, belief: ExactBelief, t: int = 0, horizon: Optional[int] = None,
                   candidates: Optional[Sequence[Intervention]] = None,
                   gamma: Optional[float] = None) -> Dict[Intervention, float]:
    """
    Finite-horizon Q-values of every candidate intervention by exhaustive expansion of
    the belief tree (exact kernel, exact filter). Only feasible for the micro scenarios
    with a horizon of two or three decisions.

    Example:
        >>> q = exact_q_values(env, ExactBelief.point_mass(world), horizon=2)
        >>> best = max(q, key=q.get)
    """
    horizon = env.horizon if horizon is None else horizon
    gamma = env.gamma if gamma is None else gamma
    candidates = candidate_interventions(env.topology) if candidates is None else tuple(candidates)
    values: Dict[Intervention, float] = {}
    for intervention in candidates:
        immediate = 0.0
        observations: Dict[Observation, float] = {}
        for world, p_world in belief.support.items():
            for p_next, successor in env.transition_distribution(world, intervention):
                mass = p_world * p_next
                immediate += mass * env.reward(successor, intervention)
                if t + 1 >= horizon:
                    continue
                for p_obs, observation in env.observation_distribution(successor, intervention):
                    observations[observation] = observations.get(observation, 0.0) + mass * p_obs
        future = 0.0
        for observation, p_obs in observations.items():
            if p_obs <= 0.0:
                continue
            posterior = exact_update(belief, intervention, observation, env)
            future += p_obs * max(exact_q_values(env, posterior, t + 1, horizon, candidates, gamma).values())
        values[intervention] = immediate + gamma * future
    return values


# ============================================================================
# EPISODES
# ============================================================================

@dataclass(frozen=True)
class StepRecord:
    t: int
    intervention: Intervention
    observation: Observation
    reward: float
    cumulative_discounted_reward: float
    stats: SearchStatistics


@dataclass
class EpisodeRecord:
    seed: int
    method: str
    scenario: str
    attacker: str
    budget: Optional[float] = None
    steps: List[StepRecord] = field(default_factory=list)

    @property
    def total_reward(self) -> float:
        return sum(step.reward for step in self.steps)

    @property
    def discounted_return(self) -> float:
        return self.steps[-1].cumulative_discounted_reward if self.steps else 0.0

    @property
    def mean_pruned_fraction(self) -> float:
        if not self.steps:
            return 0.0
        return sum(step.stats.pruned_fraction for step in self.steps) / len(self.steps)

    @property
    def mean_search_ms(self) -> float:
        if not self.steps:
            return 0.0
        return sum(step.stats.search_ms for step in self.steps) / len(self.steps)


def run_episode(env: CageEnvironment, config: SearchConfig, seed: int, method: str = C_POMCP,
                horizon: Optional[int] = None, initial_world: Optional[WorldState] = None,
                pruner=None) -> EpisodeRecord:
    """
    Play one episode: filter the belief, search, act, observe, repeat for `horizon` steps.

    Args:
        env: environment (topology, noise, rewards, attacker prior)
        config: search configuration
        seed: root seed; every random stream of the episode is derived from it
        method: one of c-pomcp, pomcp, noop, random
        horizon: number of decisions (defaults to the environment's)
        initial_world: true start state (default: drawn from the attacker prior)

    Returns:
        EpisodeRecord with one StepRecord per decision
    """
    horizon = horizon or env.horizon
    world_rng = spawn_rng(seed, 'world')
    filter_rng = spawn_rng(seed, 'filter')
    search_rng = spawn_rng(seed, 'search')
    prior_rng = spawn_rng(seed, 'prior')

    policy = make_policy(method, env, config, horizon, pruner)
    world = initial_world or env.sample_initial_world(world_rng)
    belief = ParticleBelief.from_prior(env, config.particles_m, prior_rng) if policy.needs_belief else None

    record = EpisodeRecord(seed=seed, method=method, scenario=env.name, attacker=world.attacker_tag)
    logger.info(f"Episode start: {env.name} {method} seed={seed} attacker={world.attacker_tag} T={horizon}")
    cumulative, discount = 0.0, 1.0
    observation = None
    for t in range(horizon):
        intervention, stats = policy.act(belief, observation, t, search_rng)
        world, observation, r = env.step(world, intervention, world_rng)
        if belief is not None:
            belief = particle_filter_step(belief, intervention, observation, env, filter_rng)
        cumulative += discount * r
        discount *= env.gamma
        record.steps.append(StepRecord(t, intervention, observation, r, cumulative, stats))
        logger.debug(f"t={t} {intervention} reward={r:.3f}")
    logger.info(f"Episode end: {env.name} {method} seed={seed} return={cumulative:.3f}")
    return record


__all__ = [
    'SearchConfig', 'SearchNode', 'SearchStatistics', 'ucb_score', 'CPOMCPPlanner', 'POMCPPlanner',
    'NoopPolicy', 'RandomPolicy', 'make_policy', 'StepRecord', 'EpisodeRecord', 'run_episode',
    'count_nodes', 'exact_q_values', 'zero_base_value', 'METHODS', 'C_POMCP', 'POMCP', 'NOOP', 'RANDOM',
]
