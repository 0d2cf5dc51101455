"""Concrete Phase II sampling strategies.

Four ways to pick the audit sample: simple random sampling over the whole
Phase I cohort, case-control on the error-prone outcome, balanced sampling
across all strata, and the variance-optimal allocation found by grid
search.  All randomized strategies are deterministic given a seed; the
balanced allocator is fully deterministic.
"""

from __future__ import annotations

import numpy as np

from .errors import CapacityExceeded, InvalidInput
from .information import Design
from .model import ModelSpec, ParamVector, StratumTable
from .search import GridSchedule, SearchTrace, adaptive_grid_search

STRATEGIES = ("srs", "ccstar", "bccstar", "optmle")


def srs_design(strata: StratumTable, n: int, rng_seed: int) -> Design:
    """Uniform without-replacement sample of n records, tabulated by stratum."""
    if n > strata.total:
        raise InvalidInput(f"n = {n} exceeds the Phase I size {strata.total}")
    rng = np.random.default_rng(rng_seed)
    alloc = rng.multivariate_hypergeometric(strata.counts_array(), n)
    return Design(allocation=tuple(int(a) for a in alloc), strata=strata)


def cc_star_design(strata: StratumTable, n: int, rng_seed: int) -> Design:
    """Equal-sized random samples within the two error-prone outcome groups.

    A short group hands its unmet quota to the other one.
    """
    if n > strata.total:
        raise InvalidInput(f"n = {n} exceeds the Phase I size {strata.total}")
    rng = np.random.default_rng(rng_seed)
    groups = {0: [], 1: []}
    for k, (ystar, _, _) in enumerate(strata.keys):
        groups[ystar].append(k)
    capacities = [sum(strata.counts[k] for k in groups[g]) for g in (0, 1)]
    targets = _waterfill(n, capacities, [(c, g) for g, c in enumerate(capacities)])
    alloc = np.zeros(strata.n_strata, dtype=int)
    for g in (0, 1):
        idx = groups[g]
        counts = np.array([strata.counts[k] for k in idx])
        if targets[g] > 0:
            draw = rng.multivariate_hypergeometric(counts, targets[g])
            alloc[idx] = draw
    return Design(allocation=tuple(int(a) for a in alloc), strata=strata)


def bcc_star_design(strata: StratumTable, n: int) -> Design:
    """Deterministic balanced allocation across all strata.

    Every stratum gets an equal quota; quota overflow at small strata is
    re-spread equally over the rest, iterating until the budget is placed.
    Units that cannot be split evenly go one at a time to the non-exhausted
    strata, cycling in ascending-capacity order starting from the
    second-tightest stratum (ties broken by key order).
    """
    if n > strata.total:
        raise InvalidInput(f"n = {n} exceeds the Phase I size {strata.total}")
    order_keys = [(c, key) for c, key in zip(strata.counts, strata.keys)]
    alloc = _waterfill(n, list(strata.counts), order_keys)
    return Design(allocation=tuple(alloc), strata=strata)


def _waterfill(n: int, capacities: list[int], order_keys) -> list[int]:
    """Equal-quota waterfill of ``n`` units into capped bins.

    ``order_keys`` supplies the (capacity, key) sort basis for the
    remainder pass.
    """
    K = len(capacities)
    alloc = [0] * K
    remaining = n
    while remaining > 0:
        active = [k for k in range(K) if alloc[k] < capacities[k]]
        if not active:
            break
        quota = remaining // len(active)
        if quota == 0:
            break
        for k in active:
            give = min(quota, capacities[k] - alloc[k])
            alloc[k] += give
            remaining -= give
    if remaining > 0:
        active = [k for k in range(K) if alloc[k] < capacities[k]]
        active.sort(key=lambda k: (capacities[k], order_keys[k][1]))
        if len(active) > 1:
            active = active[1:] + active[:1]
        i = 0
        while remaining > 0 and active:
            k = active[i % len(active)]
            if alloc[k] < capacities[k]:
                alloc[k] += 1
                remaining -= 1
            else:
                active.remove(k)
                continue
            i += 1
    return alloc


def opt_mle_design(
    theta: ParamVector,
    spec: ModelSpec,
    strata: StratumTable,
    n: int,
    schedule: GridSchedule,
    weighting: str = "observed",
    floors=None,
    progress=None,
) -> tuple[Design, SearchTrace]:
    """Variance-minimizing allocation for known (or assumed) parameters."""
    trace = adaptive_grid_search(theta, spec, strata, n, schedule, weighting,
                                 floors=floors, progress=progress)
    return trace.design, trace


def sample_records(design: Design, strata_index: dict, already_validated=(), rng_seed: int = 0) -> set:
    """Draw the records realizing a design's incremental allocation.

    ``strata_index`` maps each stratum key to its Phase I record indices.
    The draw is uniform without replacement within each stratum, excludes
    ``already_validated`` indices, and is deterministic given the seed.
    """
    rng = np.random.default_rng(rng_seed)
    already = set(already_validated)
    chosen: set[int] = set()
    for key, want in zip(design.strata.keys, design.allocation):
        pool = sorted(set(strata_index.get(key, ())) - already)
        if want > len(pool):
            raise CapacityExceeded(
                f"stratum {key} has {len(pool)} unvalidated records, {want} requested"
            )
        if want > 0:
            picks = rng.choice(len(pool), size=want, replace=False)
            chosen.update(pool[i] for i in picks)
    return chosen


def build_strata_index(ystar, xstar, z) -> dict:
    """Group record indices by their (y*, x*, z) stratum key."""
    index: dict[tuple, list[int]] = {}
    for i, key in enumerate(zip(np.asarray(ystar).tolist(),
                                np.asarray(xstar).tolist(),
                                np.asarray(z).tolist())):
        index.setdefault(tuple(int(v) for v in key), []).append(i)
    return index


def tabulate_strata(ystar, xstar, z, n_levels: int) -> StratumTable:
    """Phase I stratum table from raw surrogate arrays (canonical key order)."""
    index = build_strata_index(ystar, xstar, z)
    counts = [len(index.get((ys, xs, lv), ()))
              for lv in range(n_levels) for ys in (0, 1) for xs in (0, 1)]
    return StratumTable.for_z_levels(n_levels, counts)
