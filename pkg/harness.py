#!/usr/bin/env python3
"""
C-POMCP Benchmark Harness
Runs (method, seed) episodes on the CAGE-2 scenarios, optionally over a sweep of search
budgets, records per-step results and summarizes returns, pruning fraction and search
time per cell, with cumulative regret over the budget sequence.

Usage:
    CLI: python harness.py --scenario 1 --method c-pomcp pomcp --seeds 0,1,2 [options]
         python harness.py -s 1 -m c-pomcp pomcp --budgets 100 300 1000
    API: from harness import BenchmarkConfig, run_benchmark, summarize, regret
"""

import argparse
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from dotenv import load_dotenv
from scipy import stats

from cage2_model import spawn_rng
from planner import C_POMCP, METHODS, EpisodeRecord, SearchConfig, run_episode
from pruning import reduction_curve
from results_storage import RESULTS_DIR, budget_key, get_storage
from scenario_config import SCENARIO_NUMBERS, Scenario, ScenarioConfigError, default_scenario, load_scenario

load_dotenv()

logger = logging.getLogger(__name__)

SEED_OVERRIDE = os.getenv('CPOMCP_SEED')
LOG_LEVEL = os.getenv('CPOMCP_LOG_LEVEL', 'INFO')
WORKERS = int(os.getenv('CPOMCP_WORKERS', '1'))

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG_ERROR = 2

BUDGET_SIMS = 'sims'
BUDGET_SECONDS = 'seconds'


# ============================================================================
# CONFIGURATION
# ============================================================================

@dataclass(frozen=True)
class BenchmarkConfig:
    scenario: int = 1
    methods: Tuple[str, ...] = (C_POMCP,)
    seeds: Tuple[int, ...] = (0,)
    horizon: Optional[int] = None
    search: SearchConfig = field(default_factory=SearchConfig)
    scenario_file: Optional[str] = None
    out_dir: str = RESULTS_DIR
    workers: int = 1
    budgets: Tuple[float, ...] = ()
    budget_unit: str = BUDGET_SIMS

    def __post_init__(self):
        if self.scenario not in SCENARIO_NUMBERS:
            raise ScenarioConfigError(f"scenario must be one of {SCENARIO_NUMBERS}", field='scenario')
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ScenarioConfigError(f"unknown method {unknown[0]!r}", field='method')
        if not self.seeds:
            raise ScenarioConfigError("at least one seed is required", field='seeds')
        if self.horizon is not None and self.horizon < 1:
            raise ScenarioConfigError("horizon must be >= 1", field='horizon')
        if self.workers < 1:
            raise ScenarioConfigError("workers must be >= 1", field='workers')
        if any(b <= 0 for b in self.budgets):
            raise ScenarioConfigError("budgets must be > 0", field='budgets')
        if len(set(self.budgets)) != len(self.budgets):
            raise ScenarioConfigError("budgets must be distinct", field='budgets')
        if self.budget_unit not in (BUDGET_SIMS, BUDGET_SECONDS):
            raise ScenarioConfigError(f"budget unit must be {BUDGET_SIMS!r} or {BUDGET_SECONDS!r}",
                                      field='budget_unit')

    def load_scenario(self) -> Scenario:
        scenario = load_scenario(self.scenario_file) if self.scenario_file else default_scenario(self.scenario)
        return scenario.with_horizon(self.horizon) if self.horizon else scenario


@dataclass
class BenchmarkRun:
    config: BenchmarkConfig
    records: List[EpisodeRecord]
    summary: Dict[str, Any]
    out_dir: Path


# ============================================================================
# METRICS
# ============================================================================

def regret(budget_returns: Sequence[float], j_star: float, n: Optional[int] = None) -> float:
    """
    n * j_star - sum of the first n returns (one mean return per budget of a sweep).

    Example:
        >>> regret([-4.0, -4.0], j_star=-3.0)
        2.0
    """
    n = len(budget_returns) if n is None else n
    if n > len(budget_returns):
        raise ValueError(f"need at least {n} returns, got {len(budget_returns)}")
    return n * j_star - float(sum(budget_returns[:n]))


def regret_curve(budget_returns: Sequence[float], j_star: float) -> List[float]:
    """Cumulative regret after the first 1, 2, ... budgets."""
    return [regret(budget_returns, j_star, n) for n in range(1, len(budget_returns) + 1)]


def _mean_std(values: Sequence[float]) -> Tuple[float, float]:
    array = np.asarray(values, dtype=float)
    std = float(np.std(array, ddof=1)) if len(array) > 1 else 0.0
    return float(np.mean(array)), std


def _cell_statistics(group: Sequence[EpisodeRecord]) -> Dict[str, Any]:
    group = sorted(group, key=lambda r: r.seed)
    returns = [r.discounted_return for r in group]
    mean, std = _mean_std(returns)
    return {
        'episodes': len(group),
        'seeds': [r.seed for r in group],
        'return_mean': mean,
        'return_std': std,
        'return_sem': float(stats.sem(returns)) if len(returns) > 1 else 0.0,
        'total_reward_mean': _mean_std([r.total_reward for r in group])[0],
        'pruned_fraction_mean': _mean_std([r.mean_pruned_fraction for r in group])[0],
        'search_ms_mean': _mean_std([r.mean_search_ms for r in group])[0],
        'attackers': [r.attacker for r in group],
    }


def _budget_order(budget: Optional[float]) -> float:
    return -math.inf if budget is None else budget


def summarize(records: Sequence[EpisodeRecord]) -> Dict[str, Any]:
    """
    Per (scenario, method) cell: episode-return mean/std/sem, pruning fraction and search
    time at the largest budget, the mean return J_l at every budget of the sweep, and the
    cumulative regret over that budget sequence against J*, the best mean return of any
    method at any budget of the scenario. A run without a sweep has a single budget.
    """
    cells: Dict[Tuple[str, str], Dict[Optional[float], List[EpisodeRecord]]] = {}
    for record in records:
        cells.setdefault((record.scenario, record.method), {}).setdefault(record.budget, []).append(record)

    summary: Dict[str, Any] = {}
    for (scenario, method), by_budget in sorted(cells.items()):
        budgets = sorted(by_budget, key=_budget_order)
        per_budget = {budget_key(b): _cell_statistics(by_budget[b]) for b in budgets}
        cell = dict(per_budget[budget_key(budgets[-1])])
        cell['budgets'] = budgets
        cell['budget_returns'] = [per_budget[budget_key(b)]['return_mean'] for b in budgets]
        cell['by_budget'] = per_budget
        summary.setdefault(scenario, {})[method] = cell

    for scenario, methods in summary.items():
        j_star = max(max(cell['budget_returns']) for cell in methods.values())
        for cell in methods.values():
            cell['j_star'] = j_star
            cell['regret'] = regret(cell['budget_returns'], j_star)
            cell['regret_curve'] = regret_curve(cell['budget_returns'], j_star)
    return summary


# ============================================================================
# RUNNING
# ============================================================================

def search_for_budget(search: SearchConfig, budget: Optional[float], unit: str = BUDGET_SIMS) -> SearchConfig:
    """The search configuration with its budget replaced by one point of a sweep."""
    if budget is None:
        return search
    if unit == BUDGET_SECONDS:
        return replace(search, budget_sims=None, budget_seconds=float(budget))
    return replace(search, budget_sims=int(budget), budget_seconds=None)


def run_cell(scenario: Scenario, method: str, seed: int, search: SearchConfig,
             budget: Optional[float] = None) -> EpisodeRecord:
    """One episode; module-level so it can run in a worker process."""
    env = scenario.episode_environment(spawn_rng(seed, 'topology'))
    record = run_episode(env, search, seed, method, scenario.horizon)
    record.budget = budget
    return record


def run_benchmark(config: BenchmarkConfig) -> BenchmarkRun:
    """
    Run every (budget, method, seed) cell, persist steps/pruning CSVs and the summary JSON.
    A budget sweep writes each budget's episodes under budget-<b>/ and the per-budget
    returns and regret to budgets.csv.

    Raises:
        ScenarioConfigError: invalid scenario file or configuration
    """
    scenario = config.load_scenario()
    budgets: Tuple[Optional[float], ...] = config.budgets or (None,)
    cells = [(budget, method, seed) for budget in budgets for method in config.methods for seed in config.seeds]
    logger.info(f"Benchmark {scenario.name}: {len(cells)} episodes, T={scenario.horizon}, "
                f"budgets={list(config.budgets) or 'default'}, workers={config.workers}")

    def search(budget):
        return search_for_budget(config.search, budget, config.budget_unit)

    records: List[EpisodeRecord] = []
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as executor:
            futures = {
                executor.submit(run_cell, scenario, method, seed, search(budget), budget): (budget, method, seed)
                for budget, method, seed in cells
            }
            for future in as_completed(futures):
                budget, method, seed = futures[future]
                records.append(future.result())
                logger.info(f"Finished {method} seed={seed} budget={budget_key(budget)}")
    else:
        for budget, method, seed in cells:
            records.append(run_cell(scenario, method, seed, search(budget), budget))

    order = {cell: i for i, cell in enumerate(cells)}
    records.sort(key=lambda r: order[(r.budget, r.method, r.seed)])

    storage = get_storage(config.out_dir)
    for record in records:
        target = storage.for_budget(record.budget) if config.budgets else storage
        target.write_episode(record)
    summary = summarize(records)
    storage.write_summary(summary)
    if config.budgets:
        storage.write_budget_curve(summary)
    return BenchmarkRun(config, records, summary, storage.out_dir)


# ============================================================================
# CLI
# ============================================================================

def print_summary(summary: Dict[str, Any]) -> None:
    """Print one line per (scenario, method) cell."""
    print()
    print("=" * 72)
    for scenario, methods in summary.items():
        for method, cell in methods.items():
            print(f"{scenario:<12} {method:<8} J = {cell['return_mean']:8.3f} ± {cell['return_std']:.3f}"
                  f"   pruned {cell['pruned_fraction_mean']:.3f}   regret {cell['regret']:.3f}"
                  f"   {cell['search_ms_mean']:.1f} ms/step")
            if len(cell['budgets']) > 1:
                for budget, j, r in zip(cell['budgets'], cell['budget_returns'], cell['regret_curve']):
                    print(f"{'':<21} budget {budget_key(budget):>8}   J = {j:8.3f}   cumulative regret {r:.3f}")
    print("=" * 72)


def print_prune_curve() -> None:
    curve = reduction_curve()
    horizons = [10, 25, 50, 75, 100]
    print("ratio  " + "  ".join(f"T={T:<4}" for T in horizons))
    for ratio, points in curve.items():
        values = dict(points)
        print(f"{ratio:<6} " + "  ".join(f"{values[T]:.4f}" for T in horizons))


def _parse_seeds(text: str) -> List[int]:
    try:
        return [int(s) for s in text.replace(',', ' ').split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be integers, got {text!r}") from None


def _configure_logging(level: str, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(out_dir / 'benchmark.log'),
            logging.StreamHandler()
        ]
    )


def config_from_args(args: argparse.Namespace) -> BenchmarkConfig:
    seeds = args.seeds
    if SEED_OVERRIDE is not None:
        seeds = [int(SEED_OVERRIDE)]
    try:
        search = SearchConfig(
            budget_sims=None if args.budget_seconds else args.budget_sims,
            budget_seconds=args.budget_seconds,
            particles_m=args.particles,
        )
    except ValueError as e:
        raise ScenarioConfigError(str(e), field='search') from e
    return BenchmarkConfig(
        scenario=args.scenario,
        methods=tuple(args.method),
        seeds=tuple(seeds),
        horizon=args.horizon,
        search=search,
        scenario_file=args.config,
        out_dir=args.out,
        workers=args.workers,
        budgets=tuple(args.budgets or ()),
        budget_unit=args.budget_unit,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main CLI entry point."""
    args = _parse_command_line_args(argv)

    if args.prune_curve:
        print_prune_curve()
        return EXIT_OK

    _configure_logging(args.log_level, Path(args.out))
    try:
        run = run_benchmark(config_from_args(args))
    except ScenarioConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except Exception as e:
        logger.error(f"Benchmark failed: {e}", exc_info=True)
        return EXIT_FAILURE

    print_summary(run.summary)
    print(f"Results written to {run.out_dir}")
    return EXIT_OK


def _parse_command_line_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse command line arguments."""
    parser = argparse.ArgumentParser(
        description='Benchmark C-POMCP against POMCP and baseline defenders on CAGE-2 scenarios.',
        epilog='Example: python harness.py --scenario 3 --method c-pomcp pomcp --seeds 0,1,2'
    )
    parser.add_argument(
        '--scenario', '-s',
        type=int,
        choices=SCENARIO_NUMBERS,
        default=1,
        help='Scenario: 1 b-line, 2 meander, 3 mixed attacker, 4 randomized topology (default: 1)'
    )
    parser.add_argument(
        '--method', '-m',
        nargs='+',
        choices=METHODS,
        default=[C_POMCP],
        help='Defender method(s) (default: c-pomcp)'
    )
    parser.add_argument(
        '--horizon', '-T',
        type=int,
        default=None,
        help='Episode length (default: from the scenario)'
    )
    budget = parser.add_mutually_exclusive_group()
    budget.add_argument(
        '--budget-sims',
        type=int,
        default=1000,
        help='Simulations per search (default: 1000)'
    )
    budget.add_argument(
        '--budget-seconds',
        type=float,
        default=None,
        help='Wall-clock seconds per search instead of a simulation count'
    )
    parser.add_argument(
        '--budgets',
        type=float,
        nargs='+',
        default=None,
        help='Sweep these search budgets (ascending); writes budgets.csv with J and cumulative regret'
    )
    parser.add_argument(
        '--budget-unit',
        choices=[BUDGET_SIMS, BUDGET_SECONDS],
        default=BUDGET_SIMS,
        help='Unit of --budgets: simulations or wall-clock seconds per search (default: sims)'
    )
    parser.add_argument(
        '--particles',
        type=int,
        default=1000,
        help='Particle filter size M (default: 1000)'
    )
    parser.add_argument(
        '--seeds',
        type=_parse_seeds,
        default=[0],
        help='Comma-separated seeds (default: 0; CPOMCP_SEED overrides)'
    )
    parser.add_argument(
        '--config', '-c',
        default=None,
        help='Scenario JSON file (overrides the built-in scenario)'
    )
    parser.add_argument(
        '--out', '-o',
        default=RESULTS_DIR,
        help=f'Output directory (default: {RESULTS_DIR})'
    )
    parser.add_argument(
        '--workers', '-w',
        type=int,
        default=WORKERS,
        help='Parallel episode workers (default: CPOMCP_WORKERS or 1)'
    )
    parser.add_argument(
        '--log-level',
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
        default=LOG_LEVEL.upper(),
        help='Logging level (default: CPOMCP_LOG_LEVEL or INFO)'
    )
    parser.add_argument(
        '--prune-curve',
        action='store_true',
        help='Print the pruning reduction factor over horizons and exit'
    )
    return parser.parse_args(argv)


__all__ = [
    'BenchmarkConfig', 'BenchmarkRun', 'run_benchmark', 'run_cell', 'search_for_budget', 'summarize', 'regret',
    'regret_curve', 'main',
]


if __name__ == "__main__":
    sys.exit(main())
