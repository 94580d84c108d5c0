#!/usr/bin/env python3
"""
Scenario Configuration
Loads and validates JSON scenario files (topology, vulnerability catalog, noise and
reward parameters, attacker prior, horizon) and builds the four benchmark scenarios
plus small enumerable instances.

Usage:
    API: from scenario_config import load_scenario, default_scenario, micro_scenario
"""

import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
from dotenv import load_dotenv

from cage2_model import (
    ATTACKER_STRATEGIES, B_LINE, DECOY_SERVICES, MEANDER, CageEnvironment, NodeSpec, Privilege,
    RewardParams, StochasticParams, Topology, randomize_topology,
)

load_dotenv()

logger = logging.getLogger(__name__)

SCENARIO_DIR = os.getenv('CPOMCP_SCENARIO_DIR', 'scenarios')
DEFAULT_SCENARIO_FILE = 'cage2.json'

SCENARIO_NUMBERS = (1, 2, 3, 4)
RANDOMIZED_SCENARIO_HORIZON = 100


class ScenarioConfigError(ValueError):
    """Invalid scenario file; `field` names the offending key, `line` the JSON line if known."""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        location = []
        if field:
            location.append(f"field '{field}'")
        if line is not None:
            location.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(location)})" if location else message)


@dataclass(frozen=True)
class Scenario:
    """A fully validated scenario."""
    name: str
    topology: Topology
    stochastic: StochasticParams = field(default_factory=StochasticParams)
    rewards: RewardParams = field(default_factory=RewardParams)
    attacker_prior: Mapping[str, float] = field(default_factory=lambda: {B_LINE: 1.0})
    randomize_topology: bool = False
    number: Optional[int] = None
    source: Optional[str] = None

    @property
    def horizon(self) -> int:
        return self.rewards.horizon

    def with_horizon(self, horizon: int) -> 'Scenario':
        return replace(self, rewards=replace(self.rewards, horizon=horizon))

    def environment(self, topology: Optional[Topology] = None) -> CageEnvironment:
        return CageEnvironment(topology or self.topology, self.stochastic, self.rewards,
                               self.attacker_prior, name=self.name)

    def episode_environment(self, rng: np.random.Generator) -> CageEnvironment:
        """Environment for one episode; re-randomizes the topology when the scenario asks for it."""
        if not self.randomize_topology:
            return self.environment()
        return self.environment(randomize_topology(self.topology, rng))


# ============================================================================
# PARSING HELPERS
# ============================================================================

def _require(data: Mapping[str, Any], key: str, path: str) -> Any:
    if key not in data:
        raise ScenarioConfigError("missing required key", field=f"{path}{key}")
    return data[key]


def _service_index(value: Any, path: str) -> int:
    if isinstance(value, int) and 0 <= value < len(DECOY_SERVICES):
        return value
    if isinstance(value, str) and value in DECOY_SERVICES:
        return DECOY_SERVICES.index(value)
    raise ScenarioConfigError(f"unknown service {value!r}; expected one of {DECOY_SERVICES}", field=path)


def _privilege(value: Any, path: str) -> Privilege:
    try:
        return Privilege(str(value).lower())
    except ValueError:
        raise ScenarioConfigError(f"privilege must be 'user' or 'root', got {value!r}", field=path) from None


def _zone_map(raw: Mapping[str, Any], path: str) -> Dict[int, float]:
    try:
        return {int(zone): float(value) for zone, value in raw.items()}
    except (TypeError, ValueError, AttributeError):
        raise ScenarioConfigError("expected a mapping zone -> number", field=path) from None


def _parse_nodes(raw: List[Mapping[str, Any]]) -> Tuple[NodeSpec, ...]:
    if not isinstance(raw, list) or not raw:
        raise ScenarioConfigError("expected a non-empty list", field='topology.nodes')
    nodes = []
    for k, item in enumerate(raw):
        path = f'topology.nodes[{k}].'
        vulns = []
        for j, pair in enumerate(_require(item, 'vulnerabilities', path)):
            vpath = f'{path}vulnerabilities[{j}]'
            if not isinstance(pair, (list, tuple)) or len(pair) != 2:
                raise ScenarioConfigError("expected [service, privilege]", field=vpath)
            vulns.append((_service_index(pair[0], vpath), _privilege(pair[1], vpath)))
        nodes.append(NodeSpec(
            node_id=int(_require(item, 'id', path)),
            zone=int(_require(item, 'zone', path)),
            hostname=str(item.get('hostname', '')),
            vulnerabilities=tuple(vulns),
        ))
    return tuple(nodes)


def _parse_edges(raw: Any, path: str) -> Tuple[Tuple[int, int], ...]:
    try:
        return tuple((int(a), int(b)) for a, b in raw)
    except (TypeError, ValueError):
        raise ScenarioConfigError("expected a list of [a, b] pairs", field=path) from None


def parse_scenario(data: Mapping[str, Any], source: Optional[str] = None) -> Scenario:
    """Validate a decoded scenario document."""
    if not isinstance(data, Mapping):
        raise ScenarioConfigError("scenario document must be a JSON object")

    decoys = data.get('decoys', list(DECOY_SERVICES))
    if list(decoys) != list(DECOY_SERVICES):
        raise ScenarioConfigError(f"decoy catalog must be {list(DECOY_SERVICES)}", field='decoys')

    topo_raw = _require(data, 'topology', '')
    try:
        topology = Topology(
            nodes=_parse_nodes(_require(topo_raw, 'nodes', 'topology.')),
            system_edges=_parse_edges(_require(topo_raw, 'system_edges', 'topology.'), 'topology.system_edges'),
            workflow_edges=_parse_edges(_require(topo_raw, 'workflow_edges', 'topology.'), 'topology.workflow_edges'),
            attacker_host=int(topo_raw.get('attacker_host', 13)),
            target=int(_require(topo_raw, 'target', 'topology.')),
            defender_host=topo_raw.get('defender_host'),
        )
    except ScenarioConfigError:
        raise
    except ValueError as e:
        raise ScenarioConfigError(str(e), field='topology') from e

    stoch_raw = dict(data.get('stochastic', {}))
    if 'exploit_success_by_service' in stoch_raw:
        stoch_raw['exploit_success_by_service'] = {
            _service_index(k if not str(k).isdigit() else int(k), f'stochastic.exploit_success_by_service.{k}'): float(v)
            for k, v in stoch_raw['exploit_success_by_service'].items()
        }
    try:
        stochastic = StochasticParams(**stoch_raw)
    except TypeError as e:
        raise ScenarioConfigError(f"unknown stochastic parameter: {e}", field='stochastic') from e
    except ValueError as e:
        raise ScenarioConfigError(str(e), field='stochastic') from e

    reward_raw = dict(data.get('rewards', {}))
    for key in ('psi', 'beta_root'):
        if key in reward_raw:
            reward_raw[key] = _zone_map(reward_raw[key], f'rewards.{key}')
    if 'horizon' in data:
        reward_raw['horizon'] = data['horizon']
    try:
        rewards = RewardParams(**reward_raw)
    except TypeError as e:
        raise ScenarioConfigError(f"unknown reward parameter: {e}", field='rewards') from e
    except ValueError as e:
        raise ScenarioConfigError(str(e), field='rewards') from e

    attacker = data.get('attacker', {B_LINE: 1.0})
    if isinstance(attacker, str):
        attacker = {attacker: 1.0}
    unknown = [tag for tag in attacker if tag not in ATTACKER_STRATEGIES]
    if unknown:
        raise ScenarioConfigError(f"unknown attacker strategy {unknown[0]!r}", field='attacker')
    if sum(attacker.values()) <= 0 or any(p < 0 for p in attacker.values()):
        raise ScenarioConfigError("attacker prior must be a non-negative distribution", field='attacker')

    return Scenario(
        name=str(data.get('name', 'scenario')),
        topology=topology,
        stochastic=stochastic,
        rewards=rewards,
        attacker_prior={tag: float(p) for tag, p in attacker.items()},
        randomize_topology=bool(data.get('randomize_topology', False)),
        number=data.get('number'),
        source=source,
    )


# ============================================================================
# LOADING
# ============================================================================

def load_scenario(path: Union[str, Path]) -> Scenario:
    """
    Load and validate a scenario file.

    Raises:
        ScenarioConfigError: unreadable file, malformed JSON (with line) or schema violation
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ScenarioConfigError(f"cannot read scenario file {path}: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioConfigError(f"malformed JSON: {e.msg}", line=e.lineno) from e
    scenario = parse_scenario(data, source=str(path))
    logger.debug(f"Loaded scenario {scenario.name} from {path}")
    return scenario


def _scenario_dir() -> Path:
    configured = Path(SCENARIO_DIR)
    if configured.is_absolute() or configured.exists():
        return configured
    return Path(__file__).resolve().parent / SCENARIO_DIR


def default_scenario(number: int = 1) -> Scenario:
    """
    Benchmark scenarios over the default topology:
    1 b-line, 2 meander, 3 either attacker with probability 0.5 drawn per episode,
    4 b-line with user/enterprise connectivity re-randomized per episode.
    """
    if number not in SCENARIO_NUMBERS:
        raise ScenarioConfigError(f"scenario must be one of {SCENARIO_NUMBERS}, got {number}", field='scenario')
    base = load_scenario(_scenario_dir() / DEFAULT_SCENARIO_FILE)
    prior = {
        1: {B_LINE: 1.0},
        2: {MEANDER: 1.0},
        3: {B_LINE: 0.5, MEANDER: 0.5},
        4: {B_LINE: 1.0},
    }[number]
    scenario = replace(base, name=f'scenario{number}', attacker_prior=prior,
                       randomize_topology=number == 4, number=number)
    if number == 4:
        scenario = scenario.with_horizon(RANDOMIZED_SCENARIO_HORIZON)
    return scenario


def micro_scenario(n_nodes: int = 3, attacker: str = B_LINE, horizon: int = 10) -> Scenario:
    """
    Enumerable 1-3 node chain (zones 1..3, sshd/user on every node, target last) with a
    constant client count, for exact-filter and planner oracles.
    """
    if n_nodes not in (1, 2, 3):
        raise ValueError(f"micro scenarios have 1-3 nodes, got {n_nodes}")
    zones = {1: (1,), 2: (1, 3), 3: (1, 2, 3)}[n_nodes]
    sshd = DECOY_SERVICES.index('sshd')
    nodes = tuple(NodeSpec(i + 1, zone, f'micro-{i + 1}', ((sshd, Privilege.USER),))
                  for i, zone in enumerate(zones))
    attacker_host = n_nodes + 1
    chain = [(i, i + 1) for i in range(1, n_nodes)]
    topology = Topology(
        nodes=nodes,
        system_edges=tuple([(attacker_host, 1)] + chain),
        workflow_edges=tuple(chain),
        attacker_host=attacker_host,
        target=n_nodes,
        defender_host=None,
    )
    stochastic = StochasticParams(arrival_rate=0.0, departure_prob=0.0, initial_clients=10)
    return Scenario(
        name=f'micro{n_nodes}',
        topology=topology,
        stochastic=stochastic,
        rewards=RewardParams(horizon=horizon),
        attacker_prior={attacker: 1.0},
    )


__all__ = [
    'Scenario', 'ScenarioConfigError', 'load_scenario', 'parse_scenario', 'default_scenario',
    'micro_scenario', 'SCENARIO_NUMBERS',
]
