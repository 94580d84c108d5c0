import numpy as np
import pytest

from belief import ExactBelief, ParticleBelief, exact_update
from cage2_model import (
    DO_NOTHING, N_DECOYS, IntrusionLevel, Intervention, InterventionKind,
)
from causal_graph import VariableId
from planner import C_POMCP, SearchConfig, exact_q_values, run_episode
from pruning import (
    CausalPruner, PrunedInterventionSet, PruneFactorDomainError, PruningConfig, PruningStats,
    candidate_interventions, prune_factor, pruned_intervention_set, reduction_curve, settled_nodes,
)

K, S, C, R = IntrusionLevel.K, IntrusionLevel.S, IntrusionLevel.C, IntrusionLevel.R
ZONE_1_KNOWN = {1: K, 2: K, 3: K, 4: K}


def _decoys(world):
    return [node.decoys for node in world.nodes]


def _kinds_on(pruned, node):
    return {i.kind for i in pruned if i.node == node}


# ============================================================================
# PRUNING RULES
# ============================================================================

def test_running_decoys_are_pruned(topology, make_world):
    world = make_world(topology, decoys={5: tuple(range(N_DECOYS))})
    pruned = pruned_intervention_set(_decoys(world), ParticleBelief.from_world(world, 10), topology)
    assert not [i for i in pruned if i.kind is InterventionKind.DECOY and i.node == 5]
    assert Intervention.start_decoy(6, 0) in pruned


def test_clean_belief_prunes_remove_and_restore(topology, make_world):
    world = make_world(topology)
    pruned = pruned_intervention_set(_decoys(world), ParticleBelief.from_world(world, 10), topology)
    assert not [i for i in pruned if i.kind in (InterventionKind.REMOVE, InterventionKind.RESTORE)]
    assert DO_NOTHING in pruned
    assert pruned.pruned_size == 1 + 12 * (1 + N_DECOYS)


def test_compromised_belief_prunes_analyze_and_decoys(topology, make_world):
    world = make_world(topology, {8: R})
    pruned = pruned_intervention_set(_decoys(world), ParticleBelief.from_world(world, 10), topology)
    assert _kinds_on(pruned, 8) == {InterventionKind.REMOVE, InterventionKind.RESTORE}
    assert Intervention.restore(8) in pruned


def test_thresholds_follow_config(topology, make_world):
    clean, hit = make_world(topology), make_world(topology, {5: C})
    belief = ParticleBelief([clean] * 7 + [hit] * 3)
    strict = pruned_intervention_set(_decoys(clean), belief, topology)
    loose = pruned_intervention_set(_decoys(clean), belief, topology, PruningConfig(tau_compromised=0.2))
    assert Intervention.remove(5) not in strict
    assert Intervention.remove(5) in loose
    assert Intervention.analyze(5) in loose


def test_disabled_pruning_keeps_everything(topology, make_world):
    world = make_world(topology, {8: R})
    pruned = pruned_intervention_set(_decoys(world), ParticleBelief.from_world(world, 10), topology,
                                     PruningConfig(enabled=False))
    assert pruned.admissible == candidate_interventions(topology)
    assert pruned.fraction == 0.0


def test_pruned_set_requires_do_nothing():
    with pytest.raises(ValueError):
        PrunedInterventionSet((Intervention.analyze(1),), 133)


def test_pruning_config_validation():
    with pytest.raises(ValueError):
        PruningConfig(determinism=1.5)


# ============================================================================
# SETTLED NODES AND THE GRAPH ROUTE
# ============================================================================

def test_discovery_step_settles_every_node(cage2_env, topology, make_world):
    belief = ParticleBelief.from_world(make_world(topology), 20)
    assert settled_nodes(belief, cage2_env) == frozenset(topology.node_ids)
    pruned = CausalPruner(cage2_env).admissible(belief, 0)
    assert pruned.admissible == (DO_NOTHING,)
    assert pruned.fraction == pytest.approx(132 / 133)


def test_exploit_target_is_not_settled(cage2_env, topology, make_world):
    world = make_world(topology, {**ZONE_1_KNOWN, 1: S})
    belief = ParticleBelief.from_world(world, 20)
    assert 1 not in settled_nodes(belief, cage2_env)
    pruned = CausalPruner(cage2_env).admissible(belief, 0)
    assert Intervention.analyze(1) in pruned
    assert Intervention.start_decoy(1, 0) in pruned
    assert Intervention.analyze(2) not in pruned


def test_analyze_is_pruned_at_last_decision(cage2_env, topology, make_world):
    world = make_world(topology, {**ZONE_1_KNOWN, 1: S})
    pruner = CausalPruner(cage2_env, horizon=5)
    last = pruner.admissible(ParticleBelief.from_world(world, 20), 4)
    assert Intervention.analyze(1) not in last
    assert Intervention.start_decoy(1, 0) in last


def test_reduced_graph_drops_settled_intrusion(cage2_env, topology, make_world):
    pruner = CausalPruner(cage2_env, horizon=3)
    settled = pruner.reduced_graph(ParticleBelief.from_world(make_world(topology), 10), 0)
    assert VariableId('I_5', 2) not in settled
    assert VariableId('J') in settled

    exploit = make_world(topology, {**ZONE_1_KNOWN, 1: S})
    reduced = pruner.reduced_graph(ParticleBelief.from_world(exploit, 10), 0)
    assert VariableId('I_1', 2) in reduced
    assert VariableId('D_1', 2) in reduced


@pytest.mark.parametrize('t', [0, 2])
def test_closed_form_matches_graph_route(cage2_env, topology, make_world, t):
    exploit = make_world(topology, {**ZONE_1_KNOWN, 1: S})
    escalate = make_world(topology, {**ZONE_1_KNOWN, 1: C})
    belief = ParticleBelief([exploit] * 6 + [escalate] * 4)
    fast = CausalPruner(cage2_env, horizon=3).admissible(belief, t)
    slow = CausalPruner(cage2_env, horizon=3, use_graph=True).admissible(belief, t)
    assert fast.admissible == slow.admissible


def _exact_beliefs(env, seed, steps):
    """Exact beliefs along one trajectory driven by uniformly random interventions."""
    rng = np.random.default_rng(seed)
    candidates = candidate_interventions(env.topology)
    world = env.sample_initial_world(rng)
    belief = ExactBelief.from_prior(env)
    beliefs = [belief]
    for _ in range(steps):
        intervention = candidates[int(rng.integers(len(candidates)))]
        world, observation, _ = env.step(world, intervention, rng)
        belief = exact_update(belief, intervention, observation, env)
        beliefs.append(belief)
    return beliefs


@pytest.mark.parametrize('seed', [0, 1, 2])
def test_route_pruned_interventions_never_beat_kept_ones(micro_env, seed):
    env = micro_env(3, horizon=30)
    config = PruningConfig(tau_compromised=0.0, tau_decoy=1.0, determinism=1.0)
    candidates = candidate_interventions(env.topology)
    dropped = 0
    for t, belief in enumerate(_exact_beliefs(env, seed, 6)):
        pruner = CausalPruner(env, config, horizon=t + 1)
        pooled = ParticleBelief.from_counts({w: max(1, round(p * 10_000)) for w, p in belief.support.items()})
        admissible = pruner.admissible(pooled, t)
        q = exact_q_values(env, belief, t=t, horizon=t + 1)
        best_kept = max(q[x] for x in admissible)
        for intervention in candidates:
            if intervention in admissible:
                continue
            dropped += 1
            assert q[intervention] <= best_kept + 1e-9
            assert q[intervention] == pytest.approx(q[DO_NOTHING])
    assert dropped > 0


# ============================================================================
# REDUCTION ACCOUNTING
# ============================================================================

@pytest.mark.parametrize('ratio, horizon, expected', [
    (0.9, 10, 0.6513),
    (0.99, 100, 0.6340),
    (1.0, 50, 0.0),
])
def test_prune_factor_values(ratio, horizon, expected):
    assert prune_factor(ratio, horizon) == pytest.approx(expected, abs=1e-4)


def test_prune_factor_per_step_sequence():
    assert prune_factor([0.5, 0.5]) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        prune_factor([0.5, 0.5], T=3)


@pytest.mark.parametrize('ratio', [0.0, -0.1, 1.5])
def test_prune_factor_domain(ratio):
    with pytest.raises(PruneFactorDomainError):
        prune_factor(ratio, 3)


def test_reduction_curve_grows_with_horizon():
    curve = reduction_curve(ratios=(0.95,), horizons=range(1, 30))[0.95]
    factors = [factor for _, factor in curve]
    assert all(a < b for a, b in zip(factors, factors[1:]))


def test_pruning_stats():
    stats = PruningStats()
    stats.record(0, PrunedInterventionSet((DO_NOTHING,), 4))
    stats.record(1, PrunedInterventionSet((DO_NOTHING, Intervention.analyze(1)), 4))
    assert stats.mean_fraction == pytest.approx(0.625)
    assert stats.ratios() == [0.25, 0.5]


@pytest.mark.slow
def test_pruned_fraction_on_default_scenario(cage2_env):
    config = SearchConfig(budget_sims=200, particles_m=200)
    fractions = [run_episode(cage2_env, config, seed, C_POMCP, horizon=30).mean_pruned_fraction
                 for seed in range(10)]
    assert 0.88 <= np.mean(fractions) <= 0.96
