#!/usr/bin/env python3
"""
Belief Tracking
Particle filter (systematic resampling) and exact Bayes filter over WorldStates.

Usage:
    API: from belief import ParticleBelief, particle_filter_step, exact_update
"""

import logging
from collections import Counter
from dataclasses import replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from cage2_model import (
    DO_NOTHING, CageEnvironment, IntrusionLevel, InterventionKind, Intervention, Observation,
    Topology, WorldState, condition_on,
)

logger = logging.getLogger(__name__)

# Share of particles rewritten when every particle is inconsistent with the observation
DEPRIVATION_REFRESH_SHARE = 0.1


class ImpossibleObservationError(ValueError):
    """Raised when an observation has zero probability under the whole belief."""


# ============================================================================
# BELIEF TYPES
# ============================================================================

class _BeliefMixin:
    """Queries shared by the particle and exact beliefs (both expose distribution())."""

    def distribution(self) -> Dict[WorldState, float]:
        raise NotImplementedError

    def marginals(self) -> List[Dict[IntrusionLevel, float]]:
        """Per-node distribution over intrusion levels, indexed like topology.nodes."""
        result: List[Dict[IntrusionLevel, float]] = []
        for world, p in self.distribution().items():
            if not result:
                result = [{level: 0.0 for level in IntrusionLevel} for _ in world.nodes]
            for i, node in enumerate(world.nodes):
                result[i][node.intrusion] += p
        return result

    def compromise_probability(self, index: int) -> float:
        """P(I_i in {C, R})."""
        return sum(p for w, p in self.distribution().items()
                   if w.nodes[index].intrusion >= IntrusionLevel.C)

    def attacker_distribution(self) -> Dict[str, float]:
        result: Dict[str, float] = {}
        for world, p in self.distribution().items():
            result[world.attacker_tag] = result.get(world.attacker_tag, 0.0) + p
        return result

    def snapshot(self, topology: Topology) -> Dict:
        """JSON-ready per-node marginal intrusion distribution."""
        return {
            'kind': type(self).__name__,
            'size': len(self),
            'attacker': self.attacker_distribution(),
            'nodes': {
                str(node_id): {level.name: round(p, 6) for level, p in marginal.items()}
                for node_id, marginal in zip(topology.node_ids, self.marginals())
            },
        }


class ParticleBelief(_BeliefMixin):
    """
    Unweighted multiset of M particles (weights are uniform after resampling).

    A belief built with from_counts keeps only the multiplicities; the particle tuple is
    materialised on first access.
    """

    def __init__(self, particles: Sequence[WorldState]):
        if not particles:
            raise ValueError("a particle belief needs at least one particle")
        self._particles: Optional[Tuple[WorldState, ...]] = tuple(particles)
        self._counts: Optional[Counter] = None

    @property
    def particles(self) -> Tuple[WorldState, ...]:
        if self._particles is None:
            self._particles = tuple(self._counts.elements())
        return self._particles

    @property
    def counts(self) -> Counter:
        """Multiplicity of each distinct particle."""
        if self._counts is None:
            self._counts = Counter(self._particles)
        return self._counts

    def __len__(self) -> int:
        if self._particles is not None:
            return len(self._particles)
        return sum(self._counts.values())

    @classmethod
    def from_world(cls, world: WorldState, m: int) -> 'ParticleBelief':
        return cls([world] * m)

    @classmethod
    def from_prior(cls, env: CageEnvironment, m: int, rng: np.random.Generator) -> 'ParticleBelief':
        return cls([env.sample_initial_world(rng) for _ in range(m)])

    @classmethod
    def from_counts(cls, counts: Mapping[WorldState, int]) -> 'ParticleBelief':
        """
        Belief over a pooled multiset.

        Example:
            >>> len(ParticleBelief.from_counts({world_a: 3, world_b: 1}))
            4
        """
        positive = Counter({world: int(n) for world, n in counts.items() if n > 0})
        if not positive:
            raise ValueError("a particle belief needs at least one particle")
        belief = cls.__new__(cls)
        belief._particles = None
        belief._counts = positive
        return belief

    def representative(self) -> WorldState:
        """Any one particle; the observed slice variables are shared by all of them."""
        if self._particles is not None:
            return self._particles[0]
        return next(iter(self._counts))

    def distribution(self) -> Dict[WorldState, float]:
        m = len(self)
        return {world: count / m for world, count in self.counts.items()}

    def sample(self, rng: np.random.Generator) -> WorldState:
        particles = self.particles
        return particles[int(rng.integers(len(particles)))]


class ExactBelief(_BeliefMixin):
    """Explicit distribution over an enumerable set of WorldStates."""

    def __init__(self, support: Mapping[WorldState, float]):
        total = sum(support.values())
        if total <= 0:
            raise ValueError("exact belief needs positive total mass")
        self.support = {w: p / total for w, p in support.items() if p > 0}

    def __len__(self) -> int:
        return len(self.support)

    @classmethod
    def point_mass(cls, world: WorldState) -> 'ExactBelief':
        return cls({world: 1.0})

    @classmethod
    def from_prior(cls, env: CageEnvironment) -> 'ExactBelief':
        support: Dict[WorldState, float] = {}
        for p, world in env.initial_support():
            support[world] = support.get(world, 0.0) + p
        return cls(support)

    def distribution(self) -> Dict[WorldState, float]:
        return dict(self.support)

    def sample(self, rng: np.random.Generator) -> WorldState:
        worlds = list(self.support)
        probs = np.array([self.support[w] for w in worlds])
        return worlds[int(rng.choice(len(worlds), p=probs / probs.sum()))]


Belief = Union[ParticleBelief, ExactBelief]


# ============================================================================
# PARTICLE FILTER
# ============================================================================

def systematic_resample(weights: Sequence[float], rng: np.random.Generator) -> np.ndarray:
    """
    Systematic resampling: one uniform offset, M evenly spaced positions.

    Returns:
        Indices into `weights`, length len(weights)
    """
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must have positive sum")
    m = len(w)
    positions = (rng.random() + np.arange(m)) / m
    cumulative = np.cumsum(w / total)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions, side='right')


def predict(particles: Iterable[WorldState], intervention: Intervention, env: CageEnvironment,
            rng: np.random.Generator) -> List[WorldState]:
    """Push every particle through the transition kernel (activity not yet sampled)."""
    return [env.advance(world, intervention, rng) for world in particles]


def _consistent_with_alerts(world: WorldState, observation: Observation, intervention: Intervention,
                            topology: Topology) -> WorldState:
    """Raise each node's intrusion level to the least level its observation allows."""
    analyzed = topology.index(intervention.node) if intervention.kind is InterventionKind.ANALYZE else None
    nodes = []
    for i, node in enumerate(world.nodes):
        level = node.intrusion
        z = observation.activity[i]
        if i == analyzed:
            level = z
        elif z >= IntrusionLevel.S:
            level = max(level, z)
        if observation.service[i] == 0 and not node.offline:
            level = IntrusionLevel.R
        nodes.append(node if level is node.intrusion else replace(node, intrusion=level))
    return replace(world, nodes=tuple(nodes))


def reweight_resample(predicted: Sequence[WorldState], observation: Observation, env: CageEnvironment,
                      rng: np.random.Generator, intervention: Intervention = DO_NOTHING) -> ParticleBelief:
    """
    Weight predicted particles by P(o | particle), resample systematically and project
    the observed components onto every survivor.

    If every weight is zero the particle set is kept and a share of it is rewritten to
    agree with the alerts (particle deprivation).
    """
    likelihoods: Dict[WorldState, float] = {}
    weights = np.empty(len(predicted))
    for k, world in enumerate(predicted):
        if world not in likelihoods:
            likelihoods[world] = env.observation_likelihood(world, intervention, observation)
        weights[k] = likelihoods[world]

    if weights.sum() > 0:
        survivors = [predicted[k] for k in systematic_resample(weights, rng)]
    else:
        logger.warning(f"Particle deprivation: all {len(predicted)} particles inconsistent with observation")
        survivors = list(predicted)
        n_refresh = max(1, int(round(DEPRIVATION_REFRESH_SHARE * len(survivors))))
        for k in rng.choice(len(survivors), size=n_refresh, replace=False):
            survivors[k] = _consistent_with_alerts(survivors[k], observation, intervention, env.topology)

    return ParticleBelief([condition_on(world, observation) for world in survivors])


def particle_filter_step(belief: ParticleBelief, intervention: Intervention, observation: Observation,
                         env: CageEnvironment, rng: np.random.Generator) -> ParticleBelief:
    """
    One filter update b_{t-1} -> b_t: predict under do(intervention), then
    reweight/resample on the observation.

    Example:
        >>> b = ParticleBelief.from_prior(env, 1000, rng)
        >>> world, obs, r = env.step(true_world, DO_NOTHING, world_rng)
        >>> b = particle_filter_step(b, DO_NOTHING, obs, env, rng)
    """
    return reweight_resample(predict(belief.particles, intervention, env, rng), observation, env, rng,
                             intervention)


# ============================================================================
# EXACT FILTER
# ============================================================================

def exact_update(belief: ExactBelief, intervention: Intervention, observation: Observation,
                 env: CageEnvironment) -> ExactBelief:
    """
    Exact Bayes update over the enumerated support.

    Raises:
        ImpossibleObservationError: if the observation has probability zero
    """
    posterior: Dict[WorldState, float] = {}
    for world, p_world in belief.support.items():
        for p_next, successor in env.transition_distribution(world, intervention):
            likelihood = env.observation_likelihood(successor, intervention, observation)
            if likelihood <= 0.0:
                continue
            projected = condition_on(successor, observation)
            posterior[projected] = posterior.get(projected, 0.0) + p_world * p_next * likelihood
    if not posterior or sum(posterior.values()) <= 0.0:
        raise ImpossibleObservationError("observation has zero probability under the current belief")
    return ExactBelief(posterior)


def total_variation(p: Union[Belief, Mapping[WorldState, float]],
                    q: Union[Belief, Mapping[WorldState, float]]) -> float:
    """0.5 * sum |p(x) - q(x)| over the union of supports."""
    p_dist = p.distribution() if hasattr(p, 'distribution') else dict(p)
    q_dist = q.distribution() if hasattr(q, 'distribution') else dict(q)
    keys = set(p_dist) | set(q_dist)
    return 0.5 * sum(abs(p_dist.get(k, 0.0) - q_dist.get(k, 0.0)) for k in keys)


__all__ = [
    'ParticleBelief', 'ExactBelief', 'Belief', 'ImpossibleObservationError', 'systematic_resample',
    'predict', 'reweight_resample', 'particle_filter_step', 'exact_update', 'total_variation',
]
