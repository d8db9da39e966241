"""Seed derivation and replica sharding.

Every replica of every experiment draws from its own generator seeded by
``derive_seed(root, name, index)``.  Shards are contiguous index ranges and
results are concatenated in index order, so the output does not depend on
how many workers ran.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable

import numpy as np

from .._seeding import MASK64, fnv1a64, mix, splitmix64


def derive_seed(root_seed: int, experiment_name: str, replica_index: int) -> int:
    """splitmix64 chain over (root, FNV-1a(name), index).  Stable across
    versions: changing this function changes every stored result."""
    if replica_index < 0:
        raise ValueError(f"replica_index must be non-negative, got {replica_index}")
    return mix(int(root_seed) & MASK64, fnv1a64(experiment_name), replica_index)


def replica_rng(root_seed: int, experiment_name: str, replica_index: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root_seed, experiment_name, replica_index))


def _run_shard(job: Callable, root_seed: int, name: str, lo: int, hi: int, args: tuple) -> list:
    out = []
    for i in range(lo, hi):
        try:
            out.append(job(replica_rng(root_seed, name, i), *args))
        except Exception as exc:
            raise RuntimeError(f"{name}: replica {i} failed: {exc!r}") from exc
    return out


def run_replicas(
    job: Callable,
    root_seed: int,
    name: str,
    count: int,
    args: tuple = (),
    workers: int = 1,
) -> np.ndarray:
    """``job(rng, *args)`` for replicas 0..count-1, stacked in index order.
    ``job`` must be a module-level function when workers > 1."""
    if count < 1:
        raise ValueError("count must be positive")
    if workers <= 1:
        return np.asarray(_run_shard(job, root_seed, name, 0, count, args), dtype=float)
    bounds = np.linspace(0, count, workers + 1).astype(int)
    with ProcessPoolExecutor(workers) as pool:
        futs = [pool.submit(_run_shard, job, root_seed, name, int(lo), int(hi), args)
                for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
        parts = [f.result() for f in futs]
    return np.asarray([r for part in parts for r in part], dtype=float)


__all__ = ["derive_seed", "replica_rng", "run_replicas", "splitmix64"]
