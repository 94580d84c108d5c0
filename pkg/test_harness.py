import numpy as np
import pytest

from cage2_model import B_LINE, DO_NOTHING, MEANDER
from harness import (
    BUDGET_SECONDS, EXIT_CONFIG_ERROR, EXIT_OK, BenchmarkConfig, main, regret, regret_curve, run_benchmark,
    run_cell, search_for_budget, summarize,
)
from planner import NOOP, POMCP, C_POMCP, EpisodeRecord, SearchConfig, SearchStatistics, StepRecord
from results_storage import get_storage
from scenario_config import ScenarioConfigError, default_scenario

SMALL_SEARCH = SearchConfig(budget_sims=20, particles_m=20)


def _record(method, seed, rewards, scenario='scenario1', budget=None):
    """EpisodeRecord with undiscounted cumulative rewards."""
    record = EpisodeRecord(seed=seed, method=method, scenario=scenario, attacker=B_LINE, budget=budget)
    total = 0.0
    for t, r in enumerate(rewards):
        total += r
        record.steps.append(StepRecord(t, DO_NOTHING, None, r, total, SearchStatistics(pruned_fraction=0.5)))
    return record


# ============================================================================
# METRICS
# ============================================================================

def test_regret_examples():
    assert regret([-4.0, -4.0], j_star=-3.0) == pytest.approx(2.0)
    assert regret([-4.0, -2.0, -9.0], j_star=-3.0, n=2) == pytest.approx(0.0)
    assert regret([], j_star=-3.0) == 0.0
    with pytest.raises(ValueError):
        regret([-1.0], j_star=0.0, n=2)


def test_regret_curve():
    assert regret_curve([-4.0, -2.0, -5.0], j_star=-3.0) == pytest.approx([1.0, 0.0, 2.0])


def test_summarize_cells():
    records = [
        _record(C_POMCP, 0, [-1.0, -1.0]),
        _record(C_POMCP, 1, [-1.0, -3.0]),
        _record(NOOP, 0, [-5.0, -5.0]),
        _record(NOOP, 1, [-5.0, -7.0]),
    ]
    summary = summarize(records)['scenario1']
    assert summary[C_POMCP]['return_mean'] == pytest.approx(-3.0)
    assert summary[C_POMCP]['return_std'] == pytest.approx(np.sqrt(2.0))
    assert summary[C_POMCP]['return_sem'] == pytest.approx(1.0)
    assert summary[C_POMCP]['j_star'] == pytest.approx(-3.0)
    assert summary[C_POMCP]['regret'] == pytest.approx(0.0)
    assert summary[NOOP]['regret'] == pytest.approx(8.0)
    assert summary[NOOP]['regret_curve'] == pytest.approx([8.0])
    assert summary[NOOP]['budgets'] == [None]
    assert summary[NOOP]['seeds'] == [0, 1]
    assert summary[NOOP]['pruned_fraction_mean'] == pytest.approx(0.5)



def test_regret_runs_over_the_budget_sweep():
    records = [
        _record(C_POMCP, 0, [-4.0], budget=10),
        _record(C_POMCP, 1, [-6.0], budget=10),
        _record(C_POMCP, 0, [-2.0], budget=100),
        _record(C_POMCP, 1, [-2.0], budget=100),
        _record(POMCP, 0, [-6.0], budget=10),
        _record(POMCP, 1, [-6.0], budget=10),
        _record(POMCP, 0, [-3.0], budget=100),
        _record(POMCP, 1, [-5.0], budget=100),
    ]
    summary = summarize(records)['scenario1']
    assert summary[C_POMCP]['budgets'] == [10, 100]
    assert summary[C_POMCP]['budget_returns'] == pytest.approx([-5.0, -2.0])
    assert summary[C_POMCP]['j_star'] == pytest.approx(-2.0)
    assert summary[C_POMCP]['regret_curve'] == pytest.approx([3.0, 3.0])
    assert summary[POMCP]['regret_curve'] == pytest.approx([4.0, 6.0])
    assert summary[POMCP]['regret'] == pytest.approx(6.0)
    assert summary[POMCP]['return_mean'] == pytest.approx(-4.0)
    assert summary[POMCP]['by_budget']['10']['return_mean'] == pytest.approx(-6.0)


def test_search_for_budget_units():
    assert search_for_budget(SMALL_SEARCH, None) is SMALL_SEARCH
    sims = search_for_budget(SMALL_SEARCH, 50.0)
    assert (sims.budget_sims, sims.budget_seconds) == (50, None)
    seconds = search_for_budget(SMALL_SEARCH, 0.25, BUDGET_SECONDS)
    assert (seconds.budget_sims, seconds.budget_seconds) == (None, 0.25)



# ============================================================================
# RUNS
# ============================================================================

def test_doing_nothing_loses_reward(tmp_path):
    config = BenchmarkConfig(scenario=1, methods=(NOOP,), seeds=(0,), horizon=15, out_dir=str(tmp_path))
    run = run_benchmark(config)
    assert run.records[0].discounted_return < 0.0
    assert run.summary['scenario1'][NOOP]['episodes'] == 1


def test_mixed_scenario_attacker_is_seeded():
    scenario = default_scenario(3).with_horizon(2)
    attackers = [run_cell(scenario, NOOP, seed, SMALL_SEARCH).attacker for seed in range(20)]
    again = [run_cell(scenario, NOOP, seed, SMALL_SEARCH).attacker for seed in range(20)]
    assert attackers == again
    assert set(attackers) == {B_LINE, MEANDER}


def test_summary_matches_step_log(tmp_path):
    config = BenchmarkConfig(scenario=1, methods=(C_POMCP, POMCP), seeds=(0, 1), horizon=3,
                             search=SMALL_SEARCH, out_dir=str(tmp_path))
    run = run_benchmark(config)
    rows = get_storage(tmp_path).read_steps()
    assert len(rows) == 2 * 2 * 3
    for method in (C_POMCP, POMCP):
        finals = [row['cumulative_discounted_reward'] for row in rows
                  if row['method'] == method and row['t'] == 2]
        assert abs(np.mean(finals) - run.summary['scenario1'][method]['return_mean']) < 1e-9
    assert get_storage(tmp_path).read_summary() == run.summary


def test_parallel_workers_match_serial(tmp_path):
    kwargs = dict(scenario=2, methods=(NOOP,), seeds=(0, 1, 2), horizon=5)
    serial = run_benchmark(BenchmarkConfig(out_dir=str(tmp_path / 'serial'), **kwargs))
    parallel = run_benchmark(BenchmarkConfig(out_dir=str(tmp_path / 'parallel'), workers=2, **kwargs))
    assert serial.summary == parallel.summary


def test_config_rejects_unknown_method():
    with pytest.raises(ScenarioConfigError) as info:
        BenchmarkConfig(methods=('greedy',))
    assert info.value.field == 'method'



def test_budget_sweep_writes_curve(tmp_path):
    config = BenchmarkConfig(scenario=1, methods=(C_POMCP, NOOP), seeds=(0, 1), horizon=2,
                             search=SMALL_SEARCH, out_dir=str(tmp_path), budgets=(5, 20))
    run = run_benchmark(config)
    assert len(run.records) == 2 * 2 * 2
    storage = get_storage(tmp_path)
    rows = storage.read_budgets()
    assert [(row['method'], row['budget']) for row in rows] == [
        (C_POMCP, 5.0), (C_POMCP, 20.0), (NOOP, 5.0), (NOOP, 20.0)]
    cell = run.summary['scenario1'][C_POMCP]
    assert [row['cumulative_regret'] for row in rows[:2]] == pytest.approx(cell['regret_curve'])
    assert len(get_storage(tmp_path / 'budget-5').read_steps()) == 2 * 2 * 2
    assert not storage.steps_path.exists()
    search_sizes = {r.budget: r.steps[0].stats.simulations for r in run.records if r.method == C_POMCP}
    assert search_sizes == {5: 5, 20: 20}


def test_config_rejects_bad_budgets():
    with pytest.raises(ScenarioConfigError) as info:
        BenchmarkConfig(budgets=(10, 0))
    assert info.value.field == 'budgets'
    with pytest.raises(ScenarioConfigError):
        BenchmarkConfig(budgets=(10, 10))



# ============================================================================
# CLI
# ============================================================================

def test_cli_reports_malformed_scenario_file(tmp_path, capsys):
    bad = tmp_path / 'bad.json'
    bad.write_text('{\n  "name": "broken",\n  "horizon": \n}\n')
    code = main(['--config', str(bad), '--method', NOOP, '--out', str(tmp_path / 'out')])
    assert code == EXIT_CONFIG_ERROR
    assert 'line 4' in capsys.readouterr().err


def test_cli_prune_curve(capsys):
    assert main(['--prune-curve']) == EXIT_OK
    out = capsys.readouterr().out
    assert '0.6513' in out
    assert '0.6340' in out


def test_cli_runs_a_small_benchmark(tmp_path, capsys):
    code = main(['--scenario', '2', '--method', NOOP, '--horizon', '3', '--seeds', '0,1',
                 '--out', str(tmp_path)])
    assert code == EXIT_OK
    assert (tmp_path / 'steps.csv').exists()
    assert (tmp_path / 'summary.json').exists()
    assert 'scenario2' in capsys.readouterr().out


def test_cli_budget_sweep(tmp_path, capsys):
    code = main(['--scenario', '1', '--method', NOOP, '--horizon', '2', '--budgets', '5', '10',
                 '--out', str(tmp_path)])
    assert code == EXIT_OK
    assert (tmp_path / 'budgets.csv').exists()
    assert (tmp_path / 'budget-10' / 'steps.csv').exists()
    assert 'cumulative regret' in capsys.readouterr().out
