"""Shared fixtures: the default CAGE-2 scenario, micro scenarios and hand-built worlds."""

from dataclasses import replace

import pytest

from cage2_model import B_LINE, IntrusionLevel, WorldState, initial_world
from scenario_config import default_scenario, micro_scenario


@pytest.fixture(scope='session')
def cage2_scenario():
    return default_scenario(1)


@pytest.fixture
def cage2_env(cage2_scenario):
    return cage2_scenario.environment()


@pytest.fixture
def topology(cage2_scenario):
    return cage2_scenario.topology


@pytest.fixture
def micro_env():
    """Factory: micro_env(n_nodes, **stochastic overrides)."""
    def make(n_nodes=2, attacker=B_LINE, horizon=10, **stochastic):
        scenario = micro_scenario(n_nodes, attacker=attacker, horizon=horizon)
        if stochastic:
            scenario = replace(scenario, stochastic=replace(scenario.stochastic, **stochastic))
        return scenario.environment()
    return make


@pytest.fixture
def make_world():
    """Factory: make_world(topology, {node_id: level}, attacker_tag, decoys={node_id: (j, ...)})."""
    def make(topology, levels=None, attacker_tag=B_LINE, decoys=None, client_count=0) -> WorldState:
        world = initial_world(topology, attacker_tag, client_count)
        nodes = list(world.nodes)
        for node_id, level in (levels or {}).items():
            i = topology.index(node_id)
            nodes[i] = replace(nodes[i], intrusion=IntrusionLevel(level))
        for node_id, running in (decoys or {}).items():
            i = topology.index(node_id)
            vector = [0] * len(nodes[i].decoys)
            for j in running:
                vector[j] = 1
            nodes[i] = replace(nodes[i], decoys=tuple(vector))
        return replace(world, nodes=tuple(nodes))
    return make
