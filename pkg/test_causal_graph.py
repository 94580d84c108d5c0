import itertools
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import chi2, chi2_contingency

from cage2_model import causal_graph_of
from causal_graph import (
    CausalGraph, CyclicGraphError, PreconditionError, UnknownVariableError, VariableId,
    d_separated, has_causal_effect, pomis_markovian,
)

FIXTURES = Path(__file__).parent / 'fixtures'


def _v(text):
    return VariableId.parse(text)


# ============================================================================
# CONSTRUCTION
# ============================================================================

def test_variable_id_parses_time_index():
    v = VariableId.parse('I_5@3')
    assert v.name == 'I_5'
    assert v.time_index == 3
    assert VariableId.parse('J').is_static
    assert str(v) == 'I_5@3'


def test_time_index_must_be_positive():
    with pytest.raises(ValueError):
        VariableId('I_1', 0)


def test_edge_backwards_in_time_rejected():
    with pytest.raises(ValueError, match='backwards'):
        CausalGraph(['A@2', 'B@1'], [('A@2', 'B@1')])


def test_unknown_endpoint_raises_key_error():
    with pytest.raises(UnknownVariableError):
        CausalGraph(['A'], [('A', 'B')])
    assert issubclass(UnknownVariableError, KeyError)


def test_unknown_variable_lookup():
    g = CausalGraph(['A', 'B'], [('A', 'B')])
    with pytest.raises(UnknownVariableError):
        g.parents('C')


def test_cycle_detected_by_topological_order():
    g = CausalGraph(['A', 'B'], [('A', 'B'), ('B', 'A')])
    assert not g.is_acyclic()
    with pytest.raises(CyclicGraphError):
        g.topological_order()


def test_topological_order_respects_edges():
    g = CausalGraph(['C', 'B', 'A'], [('A', 'B'), ('B', 'C')])
    assert [str(v) for v in g.topological_order()] == ['A', 'B', 'C']


def test_edge_list_parse_error_reports_line():
    with pytest.raises(ValueError, match='line 2'):
        CausalGraph.from_edge_list('X -> Z\nnot an edge\n')


def test_edge_list_fixture_loads_latents():
    g = CausalGraph.load(FIXTURES / 'confounded_sbwxzj.txt')
    assert {str(v) for v in g.latent} == {'U_SJ', 'U_ZJ'}
    assert {str(v) for v in g.parents('X')} == {'B', 'Z'}


def test_edge_list_serialization_is_readable_back():
    g = CausalGraph.load(FIXTURES / 'confounded_sbwxzj.txt')
    again = CausalGraph.from_edge_list(g.to_edge_list())
    assert again.edges == g.edges
    assert again.latent == g.latent


# ============================================================================
# D-SEPARATION
# ============================================================================

@pytest.mark.parametrize('edges, given, expected', [
    ([('A', 'B'), ('B', 'C')], [], False),          # chain, open
    ([('A', 'B'), ('B', 'C')], ['B'], True),        # chain, blocked
    ([('B', 'A'), ('B', 'C')], [], False),          # fork, open
    ([('B', 'A'), ('B', 'C')], ['B'], True),        # fork, blocked
    ([('A', 'B'), ('C', 'B')], [], True),           # collider, blocked
    ([('A', 'B'), ('C', 'B')], ['B'], False),       # collider, opened
    ([('A', 'B'), ('C', 'B'), ('B', 'D')], ['D'], False),  # descendant opens collider
])
def test_d_separation_truth_table(edges, given, expected):
    g = CausalGraph(['A', 'B', 'C', 'D'], edges)
    assert d_separated(g, ['A'], ['C'], given) is expected


def test_d_separation_requires_disjoint_sets():
    g = CausalGraph(['A', 'B'], [('A', 'B')])
    with pytest.raises(ValueError):
        d_separated(g, ['A'], ['A'])


def test_d_separation_on_confounded_fixture():
    g = CausalGraph.load(FIXTURES / 'confounded_sbwxzj.txt')
    assert d_separated(g, ['S'], ['Z'])
    assert not d_separated(g, ['S'], ['Z'], ['J'])
    assert not d_separated(g, ['S'], ['Z'], ['X'])


def test_causal_effect_differs_from_dependence():
    g = CausalGraph(['U', 'X', 'J'], [('U', 'X'), ('U', 'J')], latent=['U'])
    assert not d_separated(g, ['X'], ['J'])
    assert not has_causal_effect(g, ['X'], ['J'])


def test_do_removes_incoming_edges_only():
    g = CausalGraph(['A', 'X', 'J'], [('A', 'X'), ('X', 'J')])
    cut = g.do(['X'])
    assert cut.parents('X') == set()
    assert cut.parents('J') == {_v('X')}


# ============================================================================
# SAMPLED INDEPENDENCE
# ============================================================================

def _sample_binary_scm(graph, n, rng):
    """Logistic binary mechanisms with strong random weights, drawn in topological order."""
    data = {}
    for v in graph.topological_order():
        logit = np.full(n, rng.uniform(-0.5, 0.5))
        for parent in sorted(graph.parents(v), key=lambda p: p.sort_key()):
            logit += rng.choice([-2.5, 2.5]) * (2 * data[parent] - 1)
        data[v] = (rng.random(n) < 1.0 / (1.0 + np.exp(-logit))).astype(int)
    return data


def _independence_p_value(x, y, given):
    """Stratified chi-square test of x independent of y within each joint value of `given`."""
    strata = np.zeros(len(x), dtype=int)
    for k, column in enumerate(given):
        strata += column << k
    statistic, dof = 0.0, 0
    for stratum in np.unique(strata):
        mask = strata == stratum
        table = np.zeros((2, 2))
        np.add.at(table, (x[mask], y[mask]), 1)
        table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
        if table.shape != (2, 2):
            continue
        stat, _, df, _ = chi2_contingency(table, correction=False)
        statistic += stat
        dof += df
    return 1.0 if dof == 0 else float(chi2.sf(statistic, dof))


@pytest.mark.parametrize('fixture', ['chain_xzj.txt', 'confounded_sbwxzj.txt'])
def test_separated_pairs_are_independent_in_samples(fixture):
    g = CausalGraph.load(FIXTURES / fixture)
    data = _sample_binary_scm(g, 20_000, np.random.default_rng(7))
    observed = sorted(g.nodes - g.latent, key=lambda v: v.sort_key())
    tested = 0
    for a, b in itertools.combinations(observed, 2):
        for given in [()] + [(c,) for c in observed if c not in (a, b)]:
            if not d_separated(g, [a], [b], given):
                continue
            p_value = _independence_p_value(data[a], data[b], [data[c] for c in given])
            assert p_value > 1e-4, f"{a} and {b} given {[str(c) for c in given]}"
            tested += 1
    assert tested >= 1


def test_connected_pair_is_dependent_in_samples():
    g = CausalGraph.load(FIXTURES / 'chain_xzj.txt')
    data = _sample_binary_scm(g, 20_000, np.random.default_rng(7))
    assert not d_separated(g, ['X'], ['J'])
    assert _independence_p_value(data[_v('X')], data[_v('J')], []) < 1e-4


# ============================================================================
# POMIS
# ============================================================================

def test_pomis_markovian_chain_fixture():
    g = CausalGraph.load(FIXTURES / 'chain_xzj.txt')
    assert pomis_markovian(g, 'J') == frozenset({frozenset({_v('Z')})})


def test_pomis_markovian_rejects_latent_graph():
    g = CausalGraph.load(FIXTURES / 'confounded_sbwxzj.txt')
    with pytest.raises(PreconditionError):
        pomis_markovian(g, 'J')


# ============================================================================
# UNROLLED CAGE-2 GRAPH
# ============================================================================

def test_unrolled_graph_is_acyclic_with_expected_parents(topology):
    g = causal_graph_of(topology, horizon=2)
    assert g.is_acyclic()
    assert g.parents('I_5@2') == {_v('I_5@1'), _v('A@1'), _v('D_5@2'), _v('E@2'), _v('X@1')}
    assert _v('R@3') in g.parents('J')
    assert _v('X@3') not in g


def test_unrolled_graph_activity_has_no_effect_without_next_decision(topology):
    g = causal_graph_of(topology, horizon=2)
    assert not has_causal_effect(g, ['Z_5@3'], ['J'])
    assert has_causal_effect(g, ['Z_5@2'], ['J'])
