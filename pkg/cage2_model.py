#!/usr/bin/env python3
"""
CAGE-2 Causal Model
Executable structural causal model of the CAGE-2 scenario: target-system topology,
scripted attackers, defender interventions, client/observation noise and rewards,
stepped as a seeded discrete-time process.

Usage:
    API: from cage2_model import CageEnvironment, Intervention, initial_world, env_step
"""

import logging
import zlib
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from causal_graph import LATENT, MANIPULATIVE, NON_MANIPULATIVE, OBSERVED, TARGET, CausalGraph, VariableId

logger = logging.getLogger(__name__)

# ============================================================================
# CONSTANTS
# ============================================================================

# Decoy services, indexed as the decoy vector D_i
DECOY_SERVICES = ('apache', 'femitter', 'smtp', 'smss', 'sshd', 'svchost', 'tomcat', 'vsftpd')
N_DECOYS = len(DECOY_SERVICES)

USER_ZONE = 1
ENTERPRISE_ZONE = 2
OPERATIONAL_ZONE = 3
ZONES = (USER_ZONE, ENTERPRISE_ZONE, OPERATIONAL_ZONE)

B_LINE = 'b-line'
MEANDER = 'meander'
ATTACKER_STRATEGIES = (B_LINE, MEANDER)


class UnknownStrategyError(ValueError):
    """Raised for an attacker strategy tag that is not implemented."""


def spawn_rng(seed: int, *names) -> np.random.Generator:
    """
    Named, splittable generator: the same (seed, names) always yields the same stream
    and distinct names yield independent streams.

    Example:
        >>> a = spawn_rng(0, 'world')
        >>> b = spawn_rng(0, 'filter')
    """
    key = tuple(zlib.crc32(str(name).encode('utf-8')) for name in names)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


# ============================================================================
# DOMAIN TYPES
# ============================================================================

class IntrusionLevel(IntEnum):
    U = 0  # unknown to the attacker
    K = 1  # known
    S = 2  # scanned
    C = 3  # compromised
    R = 4  # root

    def __str__(self) -> str:
        return self.name


COMPROMISED = (IntrusionLevel.C, IntrusionLevel.R)


class Privilege(Enum):
    USER = 'user'
    ROOT = 'root'


class AttackKind(Enum):
    SCAN = 'scan'
    EXPLOIT = 'exploit'
    PRIVESC = 'privesc'
    IMPACT = 'impact'
    DISCOVER = 'discover'


@dataclass(frozen=True)
class AttackerAction:
    """A_t = (kind, vulnerability, privilege, target). Discover targets a zone id."""
    kind: AttackKind
    target: int
    vulnerability: Optional[int] = None
    privilege: Optional[Privilege] = None

    def __post_init__(self):
        if (self.vulnerability is not None) != (self.kind is AttackKind.EXPLOIT):
            raise ValueError("vulnerability must be given exactly for Exploit actions")
        if self.vulnerability is not None and not 0 <= self.vulnerability < N_DECOYS:
            raise ValueError(f"vulnerability index out of range: {self.vulnerability}")

    def touches(self, node: int) -> bool:
        return self.kind is not AttackKind.DISCOVER and self.target == node

    def __str__(self) -> str:
        if self.kind is AttackKind.EXPLOIT:
            return f"exploit({DECOY_SERVICES[self.vulnerability]},{self.privilege.value})@{self.target}"
        if self.kind is AttackKind.DISCOVER:
            return f"discover@zone{self.target}"
        return f"{self.kind.value}@{self.target}"


class InterventionKind(Enum):
    NONE = 'none'
    ANALYZE = 'analyze'
    DECOY = 'decoy'
    REMOVE = 'remove'
    RESTORE = 'restore'


_KIND_RANK = {
    InterventionKind.NONE: 0,
    InterventionKind.ANALYZE: 1,
    InterventionKind.DECOY: 2,
    InterventionKind.REMOVE: 3,
    InterventionKind.RESTORE: 4,
}


@dataclass(frozen=True)
class Intervention:
    """A defender intervention on a single node; NONE is do(∅)."""
    kind: InterventionKind
    node: Optional[int] = None
    decoy: Optional[int] = None

    def __post_init__(self):
        if self.kind is InterventionKind.NONE:
            if self.node is not None or self.decoy is not None:
                raise ValueError("do-nothing intervention takes no node or decoy")
            return
        if self.node is None:
            raise ValueError(f"{self.kind.value} intervention requires a node")
        if self.kind is InterventionKind.DECOY:
            if self.decoy is None or not 0 <= self.decoy < N_DECOYS:
                raise ValueError(f"decoy index must be in [0, {N_DECOYS}), got {self.decoy}")
        elif self.decoy is not None:
            raise ValueError("only decoy interventions carry a decoy index")

    @classmethod
    def none(cls) -> 'Intervention':
        return cls(InterventionKind.NONE)

    @classmethod
    def analyze(cls, node: int) -> 'Intervention':
        return cls(InterventionKind.ANALYZE, node)

    @classmethod
    def start_decoy(cls, node: int, decoy: int) -> 'Intervention':
        return cls(InterventionKind.DECOY, node, decoy)

    @classmethod
    def remove(cls, node: int) -> 'Intervention':
        return cls(InterventionKind.REMOVE, node)

    @classmethod
    def restore(cls, node: int) -> 'Intervention':
        return cls(InterventionKind.RESTORE, node)

    def sort_key(self) -> Tuple[int, int, int]:
        """Canonical order: none < analyze < decoy(0..7) < remove < restore, then node."""
        return (_KIND_RANK[self.kind], -1 if self.decoy is None else self.decoy,
                0 if self.node is None else self.node)

    def __lt__(self, other: 'Intervention') -> bool:
        return self.sort_key() < other.sort_key()

    def __str__(self) -> str:
        if self.kind is InterventionKind.NONE:
            return 'none'
        if self.kind is InterventionKind.DECOY:
            return f"decoy-{DECOY_SERVICES[self.decoy]}@{self.node}"
        return f"{self.kind.value}@{self.node}"

    @classmethod
    def parse(cls, text: str) -> 'Intervention':
        """Inverse of str()."""
        text = text.strip()
        if text == 'none':
            return cls.none()
        head, _, node = text.partition('@')
        if head.startswith('decoy-'):
            return cls.start_decoy(int(node), DECOY_SERVICES.index(head[len('decoy-'):]))
        return cls(InterventionKind(head), int(node))


DO_NOTHING = Intervention.none()


@dataclass(frozen=True)
class NodeState:
    """
    Per-node state (I, S, D). `offline` marks the step a restore takes the node down;
    `downtime` counts steps since an Impact while the service is down.
    """
    intrusion: IntrusionLevel = IntrusionLevel.U
    service: int = 1
    decoys: Tuple[int, ...] = (0,) * N_DECOYS
    offline: bool = False
    downtime: int = 0

    @property
    def reported_service(self) -> int:
        return 0 if self.offline else self.service


@dataclass(frozen=True)
class WorldState:
    """
    The Markov state: intrusion/service/decoy state of every defended node, client
    count, the last attacker action, the attacker strategy tag, the previous service
    vector, and the latest activity vector Z (observed, carried for f_Z).
    """
    nodes: Tuple[NodeState, ...]
    client_count: int = 0
    last_attacker_action: Optional[AttackerAction] = None
    attacker_tag: str = B_LINE
    prev_service: Tuple[int, ...] = ()
    activity: Tuple[IntrusionLevel, ...] = ()

    def __post_init__(self):
        if self.client_count < 0:
            raise ValueError(f"client_count must be >= 0, got {self.client_count}")

    def intrusion(self, index: int) -> IntrusionLevel:
        return self.nodes[index].intrusion

    @property
    def intrusions(self) -> Tuple[IntrusionLevel, ...]:
        return tuple(n.intrusion for n in self.nodes)


@dataclass(frozen=True)
class Observation:
    """o_t = {D_i, S_i, Z_i, C}: decoys, reported service, activity and client count."""
    decoys: Tuple[Tuple[int, ...], ...]
    service: Tuple[int, ...]
    activity: Tuple[IntrusionLevel, ...]
    client_count: int


# ============================================================================
# TOPOLOGY
# ============================================================================

@dataclass(frozen=True)
class NodeSpec:
    """A defended node: zone plus the (decoy-service index, privilege) pairs it exposes."""
    node_id: int
    zone: int
    hostname: str = ''
    vulnerabilities: Tuple[Tuple[int, Privilege], ...] = ()

    def exploitable(self) -> Dict[int, Privilege]:
        catalog: Dict[int, Privilege] = {}
        for service, privilege in self.vulnerabilities:
            if catalog.get(service) is not Privilege.ROOT:
                catalog[service] = privilege
        return catalog


@dataclass(frozen=True)
class Topology:
    """
    System graph G_S (undirected, includes the attacker host) and workflow graph G_W
    over the defended nodes. An edge i -> j in G_W means j uses the service of i.
    """
    nodes: Tuple[NodeSpec, ...]
    system_edges: Tuple[Tuple[int, int], ...]
    workflow_edges: Tuple[Tuple[int, int], ...]
    attacker_host: int = 13
    target: int = 8
    defender_host: Optional[int] = 12

    _index: Dict[int, int] = field(default=None, init=False, repr=False, compare=False)
    _system: nx.Graph = field(default=None, init=False, repr=False, compare=False)
    _workflow: nx.DiGraph = field(default=None, init=False, repr=False, compare=False)
    _paths: Dict[int, Tuple[int, ...]] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate node ids: {ids}")
        if not ids:
            raise ValueError("topology has no defended nodes")
        if self.attacker_host in ids:
            raise ValueError(f"attacker host {self.attacker_host} cannot be a defended node")
        for spec in self.nodes:
            if spec.zone not in ZONES:
                raise ValueError(f"node {spec.node_id}: zone must be one of {ZONES}, got {spec.zone}")
            if not spec.vulnerabilities:
                raise ValueError(f"node {spec.node_id} exposes no vulnerability")
            for service, _ in spec.vulnerabilities:
                if not 0 <= service < N_DECOYS:
                    raise ValueError(f"node {spec.node_id}: service index {service} out of range")
        if self.target not in ids:
            raise ValueError(f"target {self.target} is not a defended node")
        if self.defender_host is not None and self.defender_host not in ids:
            raise ValueError(f"defender host {self.defender_host} is not a defended node")

        system = nx.Graph()
        system.add_nodes_from(ids + [self.attacker_host])
        for a, b in self.system_edges:
            if a not in system or b not in system:
                raise ValueError(f"system edge ({a}, {b}) has an unknown endpoint")
            system.add_edge(a, b)
        workflow = nx.DiGraph()
        workflow.add_nodes_from(ids)
        for a, b in self.workflow_edges:
            if a not in ids or b not in ids:
                raise ValueError(f"workflow edge ({a}, {b}) has an unknown endpoint")
            workflow.add_edge(a, b)
        if not nx.is_directed_acyclic_graph(workflow):
            raise ValueError("workflow graph has a cycle")
        if not nx.has_path(system, self.attacker_host, self.target):
            raise ValueError(f"target {self.target} is unreachable from the attacker host")

        object.__setattr__(self, '_index', {node_id: i for i, node_id in enumerate(ids)})
        object.__setattr__(self, '_system', system)
        object.__setattr__(self, '_workflow', workflow)
        object.__setattr__(self, '_paths', {})

    @property
    def node_ids(self) -> Tuple[int, ...]:
        return tuple(n.node_id for n in self.nodes)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def index(self, node: int) -> int:
        return self._index[node]

    def spec(self, node: int) -> NodeSpec:
        return self.nodes[self._index[node]]

    def zone_of(self, node: int) -> int:
        return self.spec(node).zone

    @property
    def zone_ids(self) -> Tuple[int, ...]:
        return tuple(sorted({n.zone for n in self.nodes}))

    def nodes_in_zone(self, zone: int) -> Tuple[int, ...]:
        return tuple(sorted(n.node_id for n in self.nodes if n.zone == zone))

    def workflow_parents(self, node: int) -> FrozenSet[int]:
        return frozenset(self._workflow.predecessors(node))

    def workflow_children(self, node: int) -> FrozenSet[int]:
        return frozenset(self._workflow.successors(node))

    def neighbours(self, node: int) -> List[int]:
        return sorted(self._system.neighbors(node))

    def exploitable(self, node: int) -> Dict[int, Privilege]:
        return self.spec(node).exploitable()

    @property
    def footholds(self) -> List[int]:
        """Defended nodes adjacent to the attacker host."""
        return [n for n in self.neighbours(self.attacker_host) if n in self._index]

    def attack_path(self, start: int) -> Tuple[int, ...]:
        """Shortest path start -> target avoiding the attacker host (BFS, sorted neighbours)."""
        if start not in self._paths:
            parent = {start: None}
            queue = deque([start])
            while queue:
                current = queue.popleft()
                if current == self.target:
                    break
                for nxt in self.neighbours(current):
                    if nxt != self.attacker_host and nxt not in parent:
                        parent[nxt] = current
                        queue.append(nxt)
            if self.target not in parent:
                raise ValueError(f"no path from {start} to target {self.target}")
            path = []
            node = self.target
            while node is not None:
                path.append(node)
                node = parent[node]
            self._paths[start] = tuple(reversed(path))
        return self._paths[start]

    def with_system_edges(self, edges: Iterable[Tuple[int, int]]) -> 'Topology':
        return replace(self, system_edges=tuple(tuple(e) for e in edges))


# ============================================================================
# PARAMETERS
# ============================================================================

@dataclass(frozen=True)
class StochasticParams:
    """Exogenous noise: exploit success E_t, clients (arrivals/departures), activity noise W_i."""
    p_exploit_success: float = 0.8
    exploit_success_by_service: Mapping[int, float] = field(default_factory=dict)
    arrival_rate: float = 2.0
    departure_prob: float = 0.2
    p_detect_scan: float = 1.0
    p_detect_exploit: float = 0.95
    false_positive_rate: float = 0.02
    client_reference: int = 20
    initial_clients: int = 0
    impact_self_recovery_steps: int = 0  # 0 = an impacted service stays down until restored

    def __post_init__(self):
        probabilities = {
            'p_exploit_success': self.p_exploit_success,
            'departure_prob': self.departure_prob,
            'p_detect_scan': self.p_detect_scan,
            'p_detect_exploit': self.p_detect_exploit,
            'false_positive_rate': self.false_positive_rate,
        }
        for service, p in self.exploit_success_by_service.items():
            probabilities[f'exploit_success_by_service[{service}]'] = p
        for name, p in probabilities.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.arrival_rate < 0:
            raise ValueError(f"arrival_rate must be >= 0, got {self.arrival_rate}")
        if self.client_reference <= 0:
            raise ValueError(f"client_reference must be > 0, got {self.client_reference}")
        if self.initial_clients < 0 or self.impact_self_recovery_steps < 0:
            raise ValueError("initial_clients and impact_self_recovery_steps must be >= 0")

    def exploit_probability(self, service: int) -> float:
        return self.exploit_success_by_service.get(service, self.p_exploit_success)

    def false_positive(self, client_count: int) -> float:
        return self.false_positive_rate * min(1.0, client_count / self.client_reference)


@dataclass(frozen=True)
class RewardParams:
    """Costs of f_R plus the discount and horizon of J."""
    q_restore: float = 1.0
    psi: Mapping[int, float] = field(default_factory=lambda: {1: 0.0, 2: 0.0, 3: 10.0})
    beta_root: Mapping[int, float] = field(default_factory=lambda: {1: 0.1, 2: 1.0, 3: 1.0})
    beta_levels: Mapping[IntrusionLevel, Mapping[int, float]] = field(default_factory=dict)
    gamma: float = 0.99
    horizon: int = 30

    def __post_init__(self):
        costs = [self.q_restore, *self.psi.values(), *self.beta_root.values()]
        for per_zone in self.beta_levels.values():
            costs.extend(per_zone.values())
        if any(c < 0 for c in costs):
            raise ValueError("all reward costs must be >= 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")

    def beta(self, level: IntrusionLevel, zone: int) -> float:
        if level is IntrusionLevel.R:
            return self.beta_root.get(zone, 0.0)
        return self.beta_levels.get(level, {}).get(zone, 0.0)


# ============================================================================
# CAUSAL FUNCTIONS
# ============================================================================

def step_intrusion(state: NodeState, node: int, action: Optional[AttackerAction],
                   exploit_success: bool, topology: Topology) -> IntrusionLevel:
    """
    f_I for one node. Cases are checked in order; an attacker action never lowers the
    intrusion level (U -> K -> S -> C/R -> R).

    Example:
        >>> step_intrusion(NodeState(IntrusionLevel.S), 1,
        ...                AttackerAction(AttackKind.EXPLOIT, 1, 4, Privilege.ROOT), True, topo)
        <IntrusionLevel.R: 4>
    """
    prev = state.intrusion
    if action is None:
        return prev
    kind = action.kind
    new = prev
    if kind is AttackKind.DISCOVER and action.target == topology.zone_of(node):
        new = IntrusionLevel.K
    elif kind is AttackKind.PRIVESC and action.target in topology.workflow_parents(node):
        new = IntrusionLevel.K
    elif action.target == node:
        if kind is AttackKind.SCAN:
            new = IntrusionLevel.S
        elif kind is AttackKind.EXPLOIT:
            if exploit_success and not state.decoys[action.vulnerability]:
                new = IntrusionLevel.C if action.privilege is Privilege.USER else IntrusionLevel.R
        elif kind is AttackKind.PRIVESC:
            new = IntrusionLevel.R
    return max(prev, new)


def step_service(service: int, action: Optional[AttackerAction], node: int) -> int:
    """f_S: an Impact on the node takes its service down."""
    if action is not None and action.kind is AttackKind.IMPACT and action.target == node:
        return 0
    return service


def step_clients(count: int, arrivals: int, departures: int) -> int:
    """f_C = max(0, C_{t-1} + arrivals - departures)."""
    return max(0, count + arrivals - departures)


def activity_distribution(state: NodeState, node: int, prev_observation: IntrusionLevel,
                          action: Optional[AttackerAction], client_count: int,
                          noise: StochasticParams) -> List[Tuple[float, IntrusionLevel]]:
    """
    Closed-form f_Z: [(p_alert, alert_level), (1 - p_alert, previous level)].

    Scans alert with Z=S, successful exploits with Z=C, privilege escalation and Impact
    are silent, and quiet nodes raise a false Z=S at a rate that grows with client load.
    """
    if action is not None and action.target == node and action.kind is AttackKind.SCAN:
        p, alert = noise.p_detect_scan, IntrusionLevel.S
    elif (action is not None and action.target == node and action.kind is AttackKind.EXPLOIT
          and state.intrusion >= IntrusionLevel.C):
        p, alert = noise.p_detect_exploit, IntrusionLevel.C
    else:
        p, alert = noise.false_positive(client_count), IntrusionLevel.S
    return [(p, alert), (1.0 - p, prev_observation)]


def observe_node(state: NodeState, node: int, prev_observation: IntrusionLevel,
                 action: Optional[AttackerAction], client_count: int,
                 noise: StochasticParams, rng: np.random.Generator) -> IntrusionLevel:
    """Sample Z_{i,t} from activity_distribution."""
    (p, alert), (_, quiet) = activity_distribution(state, node, prev_observation, action,
                                                   client_count, noise)
    return alert if rng.random() < p else quiet


def apply_intervention(world: WorldState, intervention: Intervention,
                       topology: Topology) -> WorldState:
    """
    Apply do(X) to the node it targets; guarded interventions whose condition fails are
    no-ops. Restore always takes the service offline for the current step.
    """
    kind = intervention.kind
    if kind is InterventionKind.NONE:
        return world
    i = topology.index(intervention.node)
    node = world.nodes[i]

    if kind is InterventionKind.ANALYZE:
        activity = list(world.activity) if world.activity else [IntrusionLevel.U] * len(world.nodes)
        activity[i] = node.intrusion
        return replace(world, activity=tuple(activity))

    if kind is InterventionKind.DECOY:
        decoys = list(node.decoys)
        decoys[intervention.decoy] = 1
        new_node = replace(node, decoys=tuple(decoys))
    elif kind is InterventionKind.REMOVE:
        if node.intrusion is not IntrusionLevel.C:
            return world
        new_node = replace(node, intrusion=IntrusionLevel.S)
    else:
        if node.intrusion in COMPROMISED:
            new_node = NodeState(IntrusionLevel.S, 1, (0,) * N_DECOYS, offline=True)
        else:
            new_node = replace(node, offline=True)

    nodes = list(world.nodes)
    nodes[i] = new_node
    return replace(world, nodes=tuple(nodes))


def reward(world: WorldState, intervention: Intervention, params: RewardParams,
           topology: Topology) -> float:
    """R_t = -q_t + sum_i psi_z (S_i - 1) - sum_i beta_{z, I_i}, with S as reported."""
    total = -params.q_restore if intervention.kind is InterventionKind.RESTORE else 0.0
    for spec, node in zip(topology.nodes, world.nodes):
        total += params.psi.get(spec.zone, 0.0) * (node.reported_service - 1)
        total -= params.beta(node.intrusion, spec.zone)
    return total


# ============================================================================
# ATTACKER STRATEGIES
# ============================================================================

def _kill_chain_step(node: int, level: IntrusionLevel, topology: Topology) -> Tuple[AttackKind, int]:
    if level is IntrusionLevel.U:
        return AttackKind.DISCOVER, topology.zone_of(node)
    if level is IntrusionLevel.K:
        return AttackKind.SCAN, node
    if level is IntrusionLevel.S:
        return AttackKind.EXPLOIT, node
    return AttackKind.PRIVESC, node


def _plan_b_line(world: WorldState, topology: Topology) -> Tuple[AttackKind, int]:
    footholds = topology.footholds
    if not footholds:
        raise ValueError("attacker host has no defended neighbour")
    level = {n: world.nodes[topology.index(n)].intrusion for n in topology.node_ids}
    foothold = max(footholds, key=lambda n: (level[n], -n))
    for node in topology.attack_path(foothold):
        if level[node] < IntrusionLevel.R:
            return _kill_chain_step(node, level[node], topology)
    return AttackKind.IMPACT, topology.target


def _plan_meander(world: WorldState, topology: Topology) -> Tuple[AttackKind, int]:
    for zone in topology.zone_ids:
        unrooted = [n for n in topology.nodes_in_zone(zone)
                    if world.nodes[topology.index(n)].intrusion < IntrusionLevel.R]
        if not unrooted:
            continue
        for node in unrooted:
            level = world.nodes[topology.index(node)].intrusion
            if level >= IntrusionLevel.K:
                return _kill_chain_step(node, level, topology)
        return AttackKind.DISCOVER, zone
    return AttackKind.IMPACT, topology.target


_PLANNERS: Dict[str, Callable[[WorldState, Topology], Tuple[AttackKind, int]]] = {
    B_LINE: _plan_b_line,
    MEANDER: _plan_meander,
}


def plan_attack(world: WorldState, topology: Topology, strategy: str) -> Tuple[AttackKind, int]:
    """Deterministic part of f_A: the (kind, target) the strategy picks from {I_i}."""
    try:
        planner = _PLANNERS[strategy]
    except KeyError:
        raise UnknownStrategyError(f"unknown attacker strategy {strategy!r}; "
                                   f"expected one of {ATTACKER_STRATEGIES}") from None
    return planner(world, topology)


def exploit_options(world: WorldState, node: int, topology: Topology) -> List[Tuple[int, Privilege]]:
    """Services an exploit may target: the node's real vulnerabilities plus running decoys."""
    catalog = topology.exploitable(node)
    decoys = world.nodes[topology.index(node)].decoys
    services = sorted(set(catalog) | {j for j, active in enumerate(decoys) if active})
    return [(j, catalog.get(j, Privilege.USER)) for j in services]


def attacker_action_distribution(world: WorldState, topology: Topology,
                                 strategy: str) -> List[Tuple[float, AttackerAction]]:
    kind, target = plan_attack(world, topology, strategy)
    if kind is not AttackKind.EXPLOIT:
        return [(1.0, AttackerAction(kind, target))]
    options = exploit_options(world, target, topology)
    p = 1.0 / len(options)
    return [(p, AttackerAction(kind, target, j, privilege)) for j, privilege in options]


def attacker_next_action(world: WorldState, strategy: str, rng: np.random.Generator,
                         topology: Topology) -> AttackerAction:
    """f_A: the strategy's next action; the exploited service is drawn uniformly."""
    kind, target = plan_attack(world, topology, strategy)
    if kind is not AttackKind.EXPLOIT:
        return AttackerAction(kind, target)
    options = exploit_options(world, target, topology)
    j, privilege = options[int(rng.integers(len(options)))]
    return AttackerAction(kind, target, j, privilege)


# ============================================================================
# ENVIRONMENT
# ============================================================================

def initial_world(topology: Topology, attacker_tag: str = B_LINE, initial_clients: int = 0) -> WorldState:
    """I=U, S=1, D=0 on every node; Z=U; no attacker action yet."""
    if attacker_tag not in ATTACKER_STRATEGIES:
        raise UnknownStrategyError(f"unknown attacker strategy {attacker_tag!r}")
    n = topology.n_nodes
    return WorldState(
        nodes=tuple(NodeState() for _ in range(n)),
        client_count=initial_clients,
        last_attacker_action=None,
        attacker_tag=attacker_tag,
        prev_service=(1,) * n,
        activity=(IntrusionLevel.U,) * n,
    )


def observe(world: WorldState) -> Observation:
    return Observation(
        decoys=tuple(n.decoys for n in world.nodes),
        service=tuple(n.reported_service for n in world.nodes),
        activity=tuple(world.activity),
        client_count=world.client_count,
    )


def condition_on(world: WorldState, observation: Observation) -> WorldState:
    """Overwrite the observed components (D, S, Z, C) with the observation."""
    nodes = []
    for node, decoys, service in zip(world.nodes, observation.decoys, observation.service):
        if node.decoys != decoys or (not node.offline and node.service != service):
            node = replace(node, decoys=decoys, service=node.service if node.offline else service)
        nodes.append(node)
    return replace(world, nodes=tuple(nodes), activity=observation.activity,
                   client_count=observation.client_count)


class CageEnvironment:
    """
    The SCM bundled with its parameters: samples transitions and observations, and
    exposes the exact kernel and observation likelihood used by the filters.
    """

    def __init__(self,
                 topology: Topology,
                 stochastic: Optional[StochasticParams] = None,
                 rewards: Optional[RewardParams] = None,
                 attacker_prior: Optional[Mapping[str, float]] = None,
                 name: str = 'cage2'):
        self.topology = topology
        self.stochastic = stochastic or StochasticParams()
        self.rewards = rewards or RewardParams()
        self.name = name
        prior = dict(attacker_prior or {B_LINE: 1.0})
        for tag in prior:
            if tag not in ATTACKER_STRATEGIES:
                raise UnknownStrategyError(f"unknown attacker strategy {tag!r}")
        total = sum(prior.values())
        if total <= 0 or any(p < 0 for p in prior.values()):
            raise ValueError(f"attacker prior must be a non-negative distribution, got {prior}")
        self.attacker_prior = {tag: prior[tag] / total for tag in sorted(prior)}

    @property
    def horizon(self) -> int:
        return self.rewards.horizon

    @property
    def gamma(self) -> float:
        return self.rewards.gamma

    # ------------------------------------------------------------------------
    # Initial state
    # ------------------------------------------------------------------------

    def initial_world(self, attacker_tag: str) -> WorldState:
        return initial_world(self.topology, attacker_tag, self.stochastic.initial_clients)

    def initial_support(self) -> List[Tuple[float, WorldState]]:
        return [(p, self.initial_world(tag)) for tag, p in self.attacker_prior.items() if p > 0]

    def sample_initial_world(self, rng: np.random.Generator) -> WorldState:
        tags = list(self.attacker_prior)
        probs = np.array([self.attacker_prior[t] for t in tags])
        return self.initial_world(tags[int(rng.choice(len(tags), p=probs))])

    # ------------------------------------------------------------------------
    # Sampling
    # ------------------------------------------------------------------------

    def _successor(self, world: WorldState, action: AttackerAction, exploit_success: bool,
                   client_count: int) -> WorldState:
        topology = self.topology
        recovery = self.stochastic.impact_self_recovery_steps
        nodes = []
        for spec, node in zip(topology.nodes, world.nodes):
            i_next = step_intrusion(node, spec.node_id, action, exploit_success, topology)
            s_next = step_service(node.service, action, spec.node_id)
            downtime = 0
            if s_next == 0:
                if node.service == 0 and not (action.kind is AttackKind.IMPACT and action.target == spec.node_id):
                    downtime = node.downtime + 1
                if recovery and downtime >= recovery:
                    s_next, downtime = 1, 0
            if i_next is node.intrusion and s_next == node.service and downtime == node.downtime:
                nodes.append(node)
            else:
                nodes.append(NodeState(i_next, s_next, node.decoys, node.offline, downtime))
        return WorldState(
            nodes=tuple(nodes),
            client_count=client_count,
            last_attacker_action=action,
            attacker_tag=world.attacker_tag,
            prev_service=world.prev_service,
            activity=world.activity,
        )

    def prepare(self, world: WorldState, intervention: Intervention) -> WorldState:
        """Clear last step's restore downtime, record S_{t-1}, then apply the intervention."""
        prev_service = tuple(n.reported_service for n in world.nodes)
        nodes = tuple(replace(n, offline=False) if n.offline else n for n in world.nodes)
        cleared = replace(world, nodes=nodes, prev_service=prev_service)
        return apply_intervention(cleared, intervention, self.topology)

    def advance(self, world: WorldState, intervention: Intervention,
                rng: np.random.Generator) -> WorldState:
        """
        One transition without sampling the activity vector: intervention, attacker
        action, exploit success, client arrivals/departures, then f_I, f_S and f_C.
        """
        current = self.prepare(world, intervention)
        action = attacker_next_action(current, current.attacker_tag, rng, self.topology)
        u = rng.random()
        success = (action.kind is AttackKind.EXPLOIT
                   and u < self.stochastic.exploit_probability(action.vulnerability))
        arrivals = int(rng.poisson(self.stochastic.arrival_rate))
        departures = int(rng.binomial(current.client_count, self.stochastic.departure_prob))
        clients = step_clients(current.client_count, arrivals, departures)
        return self._successor(current, action, success, clients)

    def sample_activity(self, world: WorldState, intervention: Intervention,
                        rng: np.random.Generator) -> WorldState:
        prev = world.activity
        action = world.last_attacker_action
        activity = [
            observe_node(node, spec.node_id, prev[i], action, world.client_count, self.stochastic, rng)
            for i, (spec, node) in enumerate(zip(self.topology.nodes, world.nodes))
        ]
        if intervention.kind is InterventionKind.ANALYZE:
            i = self.topology.index(intervention.node)
            activity[i] = world.nodes[i].intrusion
        return replace(world, activity=tuple(activity))

    def step(self, world: WorldState, intervention: Intervention,
             rng: np.random.Generator) -> Tuple[WorldState, Observation, float]:
        """env_step: (successor, observation, reward)."""
        after = self.sample_activity(self.advance(world, intervention, rng), intervention, rng)
        return after, observe(after), self.reward(after, intervention)

    def reward(self, world: WorldState, intervention: Intervention) -> float:
        return reward(world, intervention, self.rewards, self.topology)

    # ------------------------------------------------------------------------
    # Exact kernel and likelihood
    # ------------------------------------------------------------------------

    def transition_distribution(self, world: WorldState,
                                intervention: Intervention) -> List[Tuple[float, WorldState]]:
        """
        Exact P(sigma' | sigma, do(x)) with the client count held at its current value
        (clients are observed and the filters condition on them). Activity is not sampled.
        """
        current = self.prepare(world, intervention)
        outcomes: Dict[WorldState, float] = {}
        for p_action, action in attacker_action_distribution(current, self.topology, current.attacker_tag):
            if action.kind is AttackKind.EXPLOIT:
                p_success = self.stochastic.exploit_probability(action.vulnerability)
                branches = [(p_success, True), (1.0 - p_success, False)]
            else:
                branches = [(1.0, False)]
            for p_branch, success in branches:
                p = p_action * p_branch
                if p <= 0.0:
                    continue
                successor = self._successor(current, action, success, current.client_count)
                outcomes[successor] = outcomes.get(successor, 0.0) + p
        return [(p, w) for w, p in outcomes.items()]

    def _node_activity(self, world: WorldState, intervention: Intervention,
                       client_count: int) -> List[List[Tuple[float, IntrusionLevel]]]:
        analyzed = (self.topology.index(intervention.node)
                    if intervention.kind is InterventionKind.ANALYZE else None)
        per_node = []
        for i, (spec, node) in enumerate(zip(self.topology.nodes, world.nodes)):
            if i == analyzed:
                per_node.append([(1.0, node.intrusion)])
            else:
                per_node.append(activity_distribution(node, spec.node_id, world.activity[i],
                                                      world.last_attacker_action, client_count,
                                                      self.stochastic))
        return per_node

    def observation_likelihood(self, world: WorldState, intervention: Intervention,
                               observation: Observation) -> float:
        """
        P(o | sigma') for a successor produced by advance/transition_distribution (whose
        activity is still the previous step's). The client factor is common to all
        states and is left out.
        """
        for node, decoys, service in zip(world.nodes, observation.decoys, observation.service):
            if node.decoys != decoys or node.reported_service != service:
                return 0.0
        likelihood = 1.0
        per_node = self._node_activity(world, intervention, observation.client_count)
        for outcomes, z in zip(per_node, observation.activity):
            likelihood *= sum(p for p, level in outcomes if level == z)
            if likelihood == 0.0:
                return 0.0
        return likelihood

    def observation_distribution(self, world: WorldState,
                                 intervention: Intervention) -> List[Tuple[float, Observation]]:
        """All observations of a successor with their probabilities (small instances only)."""
        per_node = self._node_activity(world, intervention, world.client_count)
        combos: Dict[Tuple[IntrusionLevel, ...], float] = {(): 1.0}
        for outcomes in per_node:
            extended: Dict[Tuple[IntrusionLevel, ...], float] = {}
            for prefix, p_prefix in combos.items():
                for p, level in outcomes:
                    if p > 0.0:
                        key = prefix + (level,)
                        extended[key] = extended.get(key, 0.0) + p_prefix * p
            combos = extended
        decoys = tuple(n.decoys for n in world.nodes)
        service = tuple(n.reported_service for n in world.nodes)
        return [(p, Observation(decoys, service, activity, world.client_count))
                for activity, p in combos.items()]


def env_step(world: WorldState, intervention: Intervention, env: CageEnvironment,
             rng: np.random.Generator) -> Tuple[WorldState, Observation, float]:
    """One full time step; see CageEnvironment.step."""
    return env.step(world, intervention, rng)


# ============================================================================
# UNROLLED CAUSAL GRAPH
# ============================================================================

def node_variable(name: str, node: int, time_index: int) -> VariableId:
    return VariableId(f"{name}_{node}", time_index)


def causal_graph_of(topology: Topology, horizon: int) -> CausalGraph:
    """
    Unroll the CAGE-2 model over `horizon` decisions: slices 1..horizon+1, with decision node X@s
    acting on slice s+1 and J collecting every R@s.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    node_ids = topology.node_ids
    slices = range(1, horizon + 2)
    nodes: List[VariableId] = []
    edges: List[Tuple[VariableId, VariableId]] = []
    classes: Dict[VariableId, str] = {}

    pi_a = VariableId('piA')
    target = VariableId('J')
    nodes += [pi_a, target]
    classes[pi_a] = LATENT
    classes[target] = TARGET

    for s in slices:
        clients, r = VariableId('C', s), VariableId('R', s)
        nodes += [clients, r]
        classes[clients] = OBSERVED
        classes[r] = TARGET
        edges.append((r, target))
        for i in node_ids:
            intrusion, service = node_variable('I', i, s), node_variable('S', i, s)
            decoys, activity = node_variable('D', i, s), node_variable('Z', i, s)
            nodes += [intrusion, service, decoys, activity]
            classes[intrusion] = MANIPULATIVE
            classes[decoys] = MANIPULATIVE
            classes[activity] = MANIPULATIVE
            classes[service] = OBSERVED
            edges += [(intrusion, r), (service, r), (clients, activity), (intrusion, activity)]

        if s < horizon + 1:
            action, decision = VariableId('A', s), VariableId('X', s)
            nodes += [action, decision]
            classes[action] = NON_MANIPULATIVE
            classes[decision] = NON_MANIPULATIVE
            edges.append((pi_a, action))
            for i in node_ids:
                edges.append((node_variable('I', i, s), action))
                edges.append((node_variable('Z', i, s), decision))

        if s > 1:
            prev = s - 1
            action, decision = VariableId('A', prev), VariableId('X', prev)
            exploit, arrivals, departures = VariableId('E', s), VariableId('Arrivals', s), VariableId('Departures', s)
            nodes += [exploit, arrivals, departures]
            for u in (exploit, arrivals, departures):
                classes[u] = LATENT
            edges += [(VariableId('C', prev), VariableId('C', s)),
                      (arrivals, VariableId('C', s)), (departures, VariableId('C', s)),
                      (decision, VariableId('R', s))]
            for i in node_ids:
                intrusion, service = node_variable('I', i, s), node_variable('S', i, s)
                decoys, activity = node_variable('D', i, s), node_variable('Z', i, s)
                noise = node_variable('W', i, s)
                nodes.append(noise)
                classes[noise] = LATENT
                edges += [
                    (node_variable('I', i, prev), intrusion), (action, intrusion),
                    (decoys, intrusion), (exploit, intrusion),
                    (node_variable('S', i, prev), service), (action, service),
                    (node_variable('D', i, prev), decoys),
                    (node_variable('Z', i, prev), activity), (action, activity), (noise, activity),
                    (decision, intrusion), (decision, decoys), (decision, activity), (decision, service),
                ]

    latent = [v for v, tag in classes.items() if tag == LATENT]
    return CausalGraph(nodes, edges, latent=latent, classes=classes)


# ============================================================================
# TOPOLOGY RANDOMIZATION
# ============================================================================

def randomize_topology(topology: Topology, rng: np.random.Generator,
                       zones: Sequence[int] = (USER_ZONE, ENTERPRISE_ZONE)) -> Topology:
    """
    Resample intra-zone connectivity of the given zones as uniform random spanning
    trees (the user zone includes the attacker host). Inter-zone links, untouched
    zones, node counts and the workflow graph are kept.
    """
    members: Dict[int, List[int]] = {z: list(topology.nodes_in_zone(z)) for z in zones}
    if USER_ZONE in members:
        members[USER_ZONE].append(topology.attacker_host)
    zone_of = {n.node_id: n.zone for n in topology.nodes}
    zone_of[topology.attacker_host] = USER_ZONE

    kept = [(a, b) for a, b in topology.system_edges
            if not (zone_of[a] == zone_of[b] and zone_of[a] in members)]
    edges = list(kept)
    for zone in zones:
        group = sorted(members[zone])
        if len(group) < 2:
            continue
        tree = nx.random_spanning_tree(nx.complete_graph(group), seed=int(rng.integers(2 ** 31)))
        edges += sorted(tuple(sorted(e)) for e in tree.edges)
    randomized = topology.with_system_edges(edges)
    logger.debug(f"Randomized topology edges: {randomized.system_edges}")
    return randomized


# ============================================================================
# NON-IDENTIFIABILITY
# ============================================================================

@dataclass(frozen=True)
class TwoStepModel:
    """
    One node, two steps: the attacker always roots the node and the service stays up.
    Only f_R differs between the members of the counterexample pair.
    """
    name: str
    reward_fn: Callable[[IntrusionLevel, int], float]

    def run(self, do_intrusion: Optional[IntrusionLevel] = None) -> Tuple[Observation, float]:
        intrusion = IntrusionLevel.R if do_intrusion is None else do_intrusion
        service = 1
        observation = Observation(((0,) * N_DECOYS,), (service,), (IntrusionLevel.U,), 0)
        return observation, self.reward_fn(intrusion, service)


def nonidentifiable_counterexample() -> Tuple[TwoStepModel, TwoStepModel]:
    """Two models with the same observational distribution but different effects of do(I=S)."""
    root_indicator = TwoStepModel('root-indicator', lambda i, s: float(i is IntrusionLevel.R))
    service_reward = TwoStepModel('service', lambda i, s: float(s))
    return root_indicator, service_reward


__all__ = [
    'IntrusionLevel', 'Privilege', 'AttackKind', 'AttackerAction', 'InterventionKind',
    'Intervention', 'DO_NOTHING', 'NodeState', 'WorldState', 'Observation', 'NodeSpec',
    'Topology', 'StochasticParams', 'RewardParams', 'UnknownStrategyError', 'CageEnvironment',
    'step_intrusion', 'step_service', 'step_clients', 'observe_node', 'activity_distribution',
    'apply_intervention', 'reward', 'plan_attack', 'attacker_next_action',
    'attacker_action_distribution', 'initial_world', 'observe', 'condition_on', 'env_step',
    'causal_graph_of', 'randomize_topology', 'nonidentifiable_counterexample', 'spawn_rng',
    'DECOY_SERVICES', 'N_DECOYS', 'B_LINE', 'MEANDER', 'ZONES',
]
