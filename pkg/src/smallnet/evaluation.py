"""Chronological cross-validation and mental-task combination ranking."""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .dataset import Dataset
from .network import Architecture, TrainConfig, accuracy, init, train

log = logging.getLogger(__name__)

CHUNK_SECONDS = 1.2
ALPHA = 0.01


def chronological_folds(dataset: Dataset | int, k: int = 5, purge_s: float = 0.0
                        ) -> list[tuple[np.ndarray, np.ndarray]]:
    """Contiguous test blocks with the remainder spread over the earliest folds.

    Training indices exclude every example whose timestamp lies within
    ``purge_s`` of the test block, so overlapping windows never straddle
    the split.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    n = dataset if isinstance(dataset, int) else len(dataset)
    if n < k:
        raise ValueError(f"need at least {k} examples, got {n}")
    sizes = np.full(k, n // k)
    sizes[: n % k] += 1
    bounds = np.concatenate(([0], np.cumsum(sizes)))
    times = None if isinstance(dataset, int) else dataset.timestamps
    folds = []
    for f in range(k):
        test = np.arange(bounds[f], bounds[f + 1])
        keep = np.ones(n, dtype=bool)
        keep[test] = False
        if purge_s > 0 and times is not None:
            lo, hi = times[test[0]], times[test[-1]]
            keep &= ~((times > lo - purge_s) & (times < hi + purge_s))
        folds.append((np.flatnonzero(keep), test))
    return folds


@dataclass
class CvResult:
    fold_accuracies: np.ndarray
    warnings: list[str] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.fold_accuracies))

    @property
    def samples(self) -> np.ndarray:
        return self.fold_accuracies.ravel()


def cross_validate(dataset: Dataset, arch: Architecture = Architecture(), train_config: TrainConfig = TrainConfig(),
                   n_seeds: int = 5, k: int = 5, seed: int = 0, purge_s: float = CHUNK_SECONDS) -> CvResult:
    """Train one model per fold and seed; report the k x n_seeds test accuracies."""
    n_classes = arch.n_classes
    present = set(np.unique(dataset.labels).tolist())
    if not present <= set(range(n_classes)):
        raise ValueError(f"labels {sorted(present)} outside 0..{n_classes - 1}")
    warnings = []
    if len(present) < n_classes:
        warnings.append(f"dataset covers only classes {sorted(present)}")
    acc = np.zeros((k, n_seeds))
    for f, (tr, te) in enumerate(chronological_folds(dataset, k, purge_s)):
        test_classes = set(np.unique(dataset.labels[te]).tolist())
        if len(test_classes) < n_classes:
            warnings.append(f"fold {f} test split lacks classes {sorted(set(range(n_classes)) - test_classes)}")
        train_set, test_set = dataset.subset(tr), dataset.subset(te)
        for s in range(n_seeds):
            run_seed = seed + 1000 * f + s
            params, _ = train(init(arch, run_seed), train_set, replace(train_config, shuffle_seed=run_seed))
            acc[f, s] = accuracy(params, test_set)
    for w in warnings:
        log.warning(w)
    return CvResult(acc, warnings)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def kruskal_wallis(groups: Sequence[Sequence[float]]) -> tuple[float, float]:
    """Tie-corrected Kruskal-Wallis H with its chi-squared p-value.

    Data that are tied throughout give H = 0, p = 1.
    """
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    arrays = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if any(a.size == 0 for a in arrays):
        raise ValueError("every group must be non-empty")
    pooled = np.concatenate(arrays)
    n = pooled.size
    ranks = _average_ranks(pooled)
    _, counts = np.unique(pooled, return_counts=True)
    correction = 1.0 - np.sum(counts ** 3 - counts) / (n ** 3 - n)
    if correction <= 0:
        return 0.0, 1.0
    h, pos = 0.0, 0
    for a in arrays:
        r = ranks[pos:pos + a.size]
        h += r.sum() ** 2 / a.size
        pos += a.size
    # one division keeps integer-rank fixtures exact
    h = (12.0 * h - 3.0 * n * (n + 1) ** 2) / (n * (n + 1)) / correction
    h = max(h, 0.0)
    return float(h), float(stats.chi2.sf(h, len(arrays) - 1))


@dataclass
class ComboRow:
    tasks: tuple[str, ...]
    mean_ta: float
    samples: np.ndarray
    n_sig_diff: int = 0


@dataclass
class ComboRanking:
    rows: list[ComboRow]
    alpha: float = ALPHA
    n_tests: int = 0

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "task1", "task2", "task3", "task4", "mean_ta", "n_sig_diff"])
            for i, row in enumerate(self.rows, 1):
                w.writerow([i, *row.tasks, f"{row.mean_ta:.6f}", row.n_sig_diff])


def count_significant(rows: list[ComboRow], alpha: float = ALPHA) -> int:
    """Fill ``n_sig_diff`` from Bonferroni-corrected pairwise tests; returns the test count."""
    pairs = list(itertools.combinations(range(len(rows)), 2))
    n_tests = len(pairs)
    for row in rows:
        row.n_sig_diff = 0
    for a, b in pairs:
        ra, rb = rows[a], rows[b]
        _, p = kruskal_wallis([ra.samples, rb.samples])
        if min(1.0, p * n_tests) >= alpha or ra.mean_ta == rb.mean_ta:
            continue
        winner = ra if ra.mean_ta > rb.mean_ta else rb
        winner.n_sig_diff += 1
    return n_tests


def rank_combinations(pool: Dataset, arch: Architecture = Architecture(), train_config: TrainConfig = TrainConfig(),
                      n_seeds: int = 5, k: int = 5, seed: int = 0, purge_s: float = 0.0,
                      alpha: float = ALPHA, subset_size: int = 4) -> ComboRanking:
    """Cross-validate every 4-task subset of ``pool`` and count pairwise wins."""
    n_tasks = len(pool.task_names)
    if n_tasks < subset_size:
        raise ValueError(f"pool has {n_tasks} tasks; need at least {subset_size}")
    rows = []
    for combo in itertools.combinations(range(n_tasks), subset_size):
        mask = np.isin(pool.labels, combo)
        remap = np.full(n_tasks, -1)
        remap[list(combo)] = np.arange(subset_size)
        sub = pool.subset(mask)
        sub = sub.relabel(remap[sub.labels], [pool.task_names[c] for c in combo])
        cv = cross_validate(sub, replace(arch, n_classes=subset_size), train_config, n_seeds, k, seed, purge_s)
        rows.append(ComboRow(sub.task_names, cv.mean, cv.samples))
        log.info("combo %s: %.3f", "-".join(sub.task_names), cv.mean)
    n_tests = count_significant(rows, alpha)
    rows.sort(key=lambda r: (-r.mean_ta, r.tasks))
    return ComboRanking(rows, alpha, n_tests)
