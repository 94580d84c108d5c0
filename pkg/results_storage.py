#!/usr/bin/env python3
"""
Results Storage
Persists benchmark output: per-step records (steps.csv), per-step pruning statistics
(pruning.csv), the per-cell summary (summary.json) and, for budget sweeps, the return
and cumulative regret per budget (budgets.csv, one budget-<b>/ directory per budget).
"""

import csv
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

from dotenv import load_dotenv

from planner import EpisodeRecord

load_dotenv()

logger = logging.getLogger(__name__)

RESULTS_DIR = os.getenv('CPOMCP_RESULTS_DIR', 'results')

STEPS_FILE = 'steps.csv'
PRUNING_FILE = 'pruning.csv'
SUMMARY_FILE = 'summary.json'
BUDGETS_FILE = 'budgets.csv'

STEP_COLUMNS = (
    'seed', 'scenario', 'method', 't', 'intervention', 'reward',
    'cumulative_discounted_reward', 'search_ms', 'tree_nodes', 'pruned_fraction',
)
PRUNING_COLUMNS = ('seed', 'scenario', 'method', 'step', 'full_size', 'pruned_size', 'fraction')
BUDGET_COLUMNS = ('scenario', 'method', 'budget', 'episodes', 'return_mean', 'return_sem', 'cumulative_regret')


def budget_key(budget: Optional[float]) -> str:
    """Name of a sweep budget in summaries and directory names ('default' outside a sweep)."""
    return 'default' if budget is None else f'{budget:g}'


class ResultsStorage:
    """
    File-backed storage for one benchmark run.

    Rows are appended, so several episodes (or runs) can share a directory; the header
    is written only when a file is created.
    """

    def __init__(self, out_dir: Union[str, Path] = None):
        """
        Args:
            out_dir: output directory (defaults to CPOMCP_RESULTS_DIR or 'results')
        """
        self.out_dir = Path(out_dir or RESULTS_DIR)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    @property
    def steps_path(self) -> Path:
        return self.out_dir / STEPS_FILE

    @property
    def pruning_path(self) -> Path:
        return self.out_dir / PRUNING_FILE

    @property
    def summary_path(self) -> Path:
        return self.out_dir / SUMMARY_FILE

    @property
    def budgets_path(self) -> Path:
        return self.out_dir / BUDGETS_FILE

    def for_budget(self, budget: float) -> 'ResultsStorage':
        """Storage for the episodes of one budget of a sweep."""
        return ResultsStorage(self.out_dir / f'budget-{budget_key(budget)}')

    # ========================================================================
    # WRITING
    # ========================================================================

    @staticmethod
    def step_rows(record: EpisodeRecord) -> List[Dict[str, Any]]:
        return [
            {
                'seed': record.seed,
                'scenario': record.scenario,
                'method': record.method,
                't': step.t,
                'intervention': str(step.intervention),
                'reward': step.reward,
                'cumulative_discounted_reward': step.cumulative_discounted_reward,
                'search_ms': round(step.stats.search_ms, 3),
                'tree_nodes': step.stats.tree_nodes,
                'pruned_fraction': step.stats.pruned_fraction,
            }
            for step in record.steps
        ]

    @staticmethod
    def pruning_rows(record: EpisodeRecord) -> List[Dict[str, Any]]:
        return [
            {
                'seed': record.seed,
                'scenario': record.scenario,
                'method': record.method,
                'step': step.t,
                'full_size': step.stats.full_size,
                'pruned_size': step.stats.pruned_size,
                'fraction': step.stats.pruned_fraction,
            }
            for step in record.steps
        ]

    def _append(self, path: Path, columns: Iterable[str], rows: List[Dict[str, Any]]):
        new_file = not path.exists()
        with path.open('a', newline='') as handle:
            writer = csv.DictWriter(handle, fieldnames=list(columns))
            if new_file:
                writer.writeheader()
            writer.writerows(rows)

    def write_episode(self, record: EpisodeRecord):
        """Append the episode's step and pruning rows."""
        self._append(self.steps_path, STEP_COLUMNS, self.step_rows(record))
        self._append(self.pruning_path, PRUNING_COLUMNS, self.pruning_rows(record))
        logger.debug(f"Stored {len(record.steps)} steps of {record.scenario}/{record.method}/seed={record.seed}")

    def write_summary(self, summary: Dict[str, Any]):
        self.summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True))
        logger.info(f"Summary written to {self.summary_path}")

    @staticmethod
    def budget_rows(summary: Dict[str, Any]) -> List[Dict[str, Any]]:
        """One row per (scenario, method, budget), budgets in sweep order."""
        rows = []
        for scenario, methods in summary.items():
            for method, cell in methods.items():
                for budget, regret in zip(cell['budgets'], cell['regret_curve']):
                    stats = cell['by_budget'][budget_key(budget)]
                    rows.append({
                        'scenario': scenario,
                        'method': method,
                        'budget': '' if budget is None else budget,
                        'episodes': stats['episodes'],
                        'return_mean': stats['return_mean'],
                        'return_sem': stats['return_sem'],
                        'cumulative_regret': regret,
                    })
        return rows

    def write_budget_curve(self, summary: Dict[str, Any]):
        """Rewrite budgets.csv from a summary."""
        with self.budgets_path.open('w', newline='') as handle:
            writer = csv.DictWriter(handle, fieldnames=list(BUDGET_COLUMNS))
            writer.writeheader()
            writer.writerows(self.budget_rows(summary))

    # ========================================================================
    # READING
    # ========================================================================

    def read_steps(self) -> List[Dict[str, Any]]:
        """steps.csv rows with numeric columns converted back."""
        if not self.steps_path.exists():
            return []
        with self.steps_path.open(newline='') as handle:
            rows = list(csv.DictReader(handle))
        for row in rows:
            for key in ('seed', 't', 'tree_nodes'):
                row[key] = int(row[key])
            for key in ('reward', 'cumulative_discounted_reward', 'search_ms', 'pruned_fraction'):
                row[key] = float(row[key])
        return rows

    def read_budgets(self) -> List[Dict[str, Any]]:
        """budgets.csv rows with numeric columns converted back."""
        if not self.budgets_path.exists():
            return []
        with self.budgets_path.open(newline='') as handle:
            rows = list(csv.DictReader(handle))
        for row in rows:
            row['budget'] = float(row['budget']) if row['budget'] else None
            row['episodes'] = int(row['episodes'])
            for key in ('return_mean', 'return_sem', 'cumulative_regret'):
                row[key] = float(row[key])
        return rows

    def read_summary(self) -> Dict[str, Any]:
        return json.loads(self.summary_path.read_text())


# Convenience function for quick access
def get_storage(out_dir: Union[str, Path] = None) -> ResultsStorage:
    """
    Get a ResultsStorage for a directory.

    Example:
        >>> storage = get_storage('results/run-1')
        >>> storage.write_episode(record)
    """
    return ResultsStorage(out_dir)


__all__ = ['ResultsStorage', 'get_storage', 'STEP_COLUMNS', 'PRUNING_COLUMNS', 'BUDGET_COLUMNS', 'budget_key']
