"""Adaptive grid search for the variance-minimizing audit allocation.

The search walks a shrinking sequence of lattices.  The first grid spreads
the whole budget (after a per-stratum minimum ``m``) on a coarse step;
every later grid is confined to the window of width one-previous-step
around the incumbent best design, on a finer step, until step size 1.

Grid sizes are known in closed form ("stars and bars" with upper-bound
corrections), which drives the automatic step-size schedule: among a chain
of steps sharing common factors, take the finest one whose grid still fits
the configured row budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InfeasibleBudget,
    InvalidInput,
    NoFeasibleDesign,
    NonDivisibleStep,
)
from .information import Design, InformationKernel
from .model import ModelSpec, ParamVector, StratumTable

MAX_ROWS_DEFAULT = 10_000
UI_POINTS_LIMIT = 5_000
TOP_DESIGNS = 10


# ---------------------------------------------------------------------------
# Counting
# ---------------------------------------------------------------------------

def first_grid_row_count(n: int, K: int, m: int, s: int) -> int:
    """Rows of the first grid: compositions of the post-minimum budget.

    Assumes no stratum cap binds; the count is exact in that regime.
    """
    if K < 1 or m < 0 or n < K * m:
        raise InvalidInput(f"need K >= 1 and n >= K*m, got n={n}, K={K}, m={m}")
    budget = n - K * m
    if s <= 0 or budget % s != 0:
        raise NonDivisibleStep(f"step {s} does not divide budget {budget}")
    return math.comb(budget // s + K - 1, K - 1)


def _capped_composition_count(total: int, caps) -> int:
    """Compositions of ``total`` into len(caps) parts with 0 <= part_k <= cap_k.

    Inclusion-exclusion over cap violations; caps at or above ``total``
    cannot be violated and drop out, which keeps the recursion shallow.
    """
    K = len(caps)
    if total < 0 or any(c < 0 for c in caps):
        return 0
    tight = sorted(c for c in caps if c < total)
    count = 0

    def visit(start, sign, rem):
        nonlocal count
        count += sign * math.comb(rem + K - 1, K - 1)
        for j in range(start, len(tight)):
            rem2 = rem - (tight[j] + 1)
            if rem2 < 0:
                break  # ascending caps: all later subsets overshoot too
            visit(j + 1, -sign, rem2)

    visit(0, 1, total)
    return count


def count_lattice_allocations(lower, upper, s: int, n: int) -> int:
    """Allocations on the s-lattice anchored at the lower bounds, within the
    box, summing to ``n``.  Returns 0 for infeasible or off-lattice sums."""
    lower = [int(v) for v in lower]
    upper = [int(v) for v in upper]
    slack = n - sum(lower)
    if slack < 0 or s <= 0 or slack % s != 0:
        return 0
    caps = [(u - l) // s if u >= l else -1 for l, u in zip(lower, upper)]
    return _capped_composition_count(slack // s, caps)


def neighborhood_row_count(prev_best, s_prev: int, s: int, m: int,
                           strata: StratumTable, n: int) -> int:
    """Rows of the window grid around a previous best design."""
    if s <= 0 or s_prev % s != 0:
        raise NonDivisibleStep(f"step {s} does not divide previous step {s_prev}")
    lower, upper = _window_bounds(prev_best, s_prev, m, strata)
    return count_lattice_allocations(lower, upper, s, n)


def _stratum_minimums(m: int, strata: StratumTable):
    return [min(m, c) for c in strata.counts]


def _window_bounds(prev_best, s_prev, m, strata: StratumTable):
    mins = _stratum_minimums(m, strata)
    lower = [max(int(b) - s_prev, mk) for b, mk in zip(prev_best, mins)]
    upper = [min(int(b) + s_prev, c) for b, c in zip(prev_best, strata.counts)]
    return lower, upper


def _first_bounds(n, m, strata: StratumTable, floors=None):
    mins = _stratum_minimums(m, strata)
    lower = list(mins) if floors is None else [max(int(f), mk) for f, mk in zip(floors, mins)]
    for lb, c in zip(lower, strata.counts):
        if lb > c:
            raise InvalidInput("a per-stratum floor exceeds the stratum size")
    total_floor = sum(lower)
    upper = [min(n - (total_floor - lb), c) for lb, c in zip(lower, strata.counts)]
    return lower, upper


# ---------------------------------------------------------------------------
# Step schedule
# ---------------------------------------------------------------------------

def candidate_steps(budget: int) -> tuple[int, ...]:
    """Descending chain of steps sharing common factors, ending at 1.

    Built by repeatedly dividing the budget by its smallest prime factor,
    so each step divides the one before it.
    """
    if budget <= 1:
        return (1,)
    chain = []
    q = budget
    while q > 1:
        p = _smallest_prime_factor(q)
        q //= p
        chain.append(q)
    if chain[-1] != 1:
        chain.append(1)
    return tuple(chain)


def _smallest_prime_factor(v: int) -> int:
    if v % 2 == 0:
        return 2
    f = 3
    while f * f <= v:
        if v % f == 0:
            return f
        f += 2
    return v


@dataclass(frozen=True)
class GridSchedule:
    """Step-size plan for the search.

    With ``steps`` given, the exact descending schedule is used (steps that
    fail to divide the running budget are dropped; 1 is always kept).  With
    ``steps`` absent, each step is derived on the fly: the finest candidate
    whose grid stays at or under ``max_rows``.
    """

    m: int
    max_rows: int = MAX_ROWS_DEFAULT
    steps: tuple[int, ...] | None = None
    early_stop_rel_change: float | None = None

    def __post_init__(self):
        if self.m < 1:
            raise InvalidInput("minimum per-stratum size m must be >= 1")
        if self.max_rows < 1:
            raise InvalidInput("max_rows must be >= 1")
        if self.steps is not None:
            steps = tuple(int(s) for s in self.steps)
            object.__setattr__(self, "steps", steps)
            if steps[-1] != 1:
                raise InvalidInput("an explicit schedule must end at step 1")
            for a, b in zip(steps, steps[1:]):
                if b >= a or a % b != 0:
                    raise InvalidInput("steps must strictly decrease and divide their predecessor")

    # -- automatic selection ------------------------------------------------

    def first_step(self, n: int, strata: StratumTable, floors=None) -> int:
        lower, upper = _first_bounds(n, self.m, strata, floors)
        budget = n - sum(lower)
        if self.steps is not None:
            for s in self.steps:
                if budget % s == 0 and count_lattice_allocations(lower, upper, s, n) >= 1:
                    return s
            raise InfeasibleBudget("no step of the explicit schedule yields a feasible grid")
        chain = candidate_steps(budget)
        usable = []
        for s in reversed(chain):  # ascending: finest first
            rows = count_lattice_allocations(lower, upper, s, n)
            if rows >= 1:
                usable.append((s, rows))
                if rows <= self.max_rows:
                    return s
        if not usable:
            raise NoFeasibleDesign("no allocation satisfies the first-grid constraints")
        raise InfeasibleBudget(
            f"coarsest feasible grid has {min(r for _, r in usable)} rows, above max_rows={self.max_rows}"
        )

    def next_step(self, s_prev: int, prev_best, n: int, strata: StratumTable) -> int:
        if s_prev <= 1:
            raise InvalidInput("no step follows 1")
        if self.steps is not None:
            pos = self.steps.index(s_prev)
            return self.steps[pos + 1]
        lower, upper = _window_bounds(prev_best, s_prev, self.m, strata)
        candidates = [s for s in candidate_steps(s_prev) if s < s_prev]
        usable = []
        for s in sorted(candidates):  # ascending: finest first
            rows = count_lattice_allocations(lower, upper, s, n)
            if rows >= 1:
                usable.append((s, rows))
                if rows <= self.max_rows:
                    return s
        if usable:
            return min(usable, key=lambda t: t[1])[0]  # all too big: coarsest wins
        return 1


def choose_step_schedule(n: int, K: int, m: int, max_rows: int = MAX_ROWS_DEFAULT,
                         strata: StratumTable | None = None) -> GridSchedule:
    """Build an automatic schedule, checking the first grid is affordable."""
    if K * m > n:
        raise InvalidInput(f"minimum allocation K*m = {K * m} exceeds n = {n}")
    schedule = GridSchedule(m=m, max_rows=max_rows)
    if strata is not None:
        schedule.first_step(n, strata)  # raises InfeasibleBudget when hopeless
    return schedule


# ---------------------------------------------------------------------------
# Enumeration
# ---------------------------------------------------------------------------

def enumerate_grid(bounds, s: int, n: int) -> np.ndarray:
    """All allocations on the s-lattice anchored at the lower bounds, within
    bounds, summing to ``n``; rows in lexicographic order, shape (rows, K)."""
    lower = [int(lb) for lb, _ in bounds]
    upper = [int(ub) for _, ub in bounds]
    K = len(bounds)
    values = []
    for lb, ub in zip(lower, upper):
        if ub < lb:
            return np.empty((0, K), dtype=int)
        values.append(list(range(lb, ub + 1, s)))
    min_suffix = [0] * (K + 1)
    max_suffix = [0] * (K + 1)
    for k in range(K - 1, -1, -1):
        min_suffix[k] = min_suffix[k + 1] + values[k][0]
        max_suffix[k] = max_suffix[k + 1] + values[k][-1]

    rows = []
    stack = [0] * K

    def descend(k, remaining):
        if k == K:
            if remaining == 0:
                rows.append(stack.copy())
            return
        for v in values[k]:
            rest = remaining - v
            if rest < min_suffix[k + 1] or rest > max_suffix[k + 1]:
                continue
            stack[k] = v
            descend(k + 1, rest)

    descend(0, n)
    return np.asarray(rows, dtype=int).reshape(len(rows), K)


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------

@dataclass
class SearchIteration:
    step: int
    rows: int
    best_allocation: tuple[int, ...]
    best_variance: float
    skipped: int = 0
    variances: list[float] = field(default_factory=list)
    top_designs: list[dict] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "step": self.step,
            "rows": self.rows,
            "best_allocation": list(self.best_allocation),
            "best_variance": self.best_variance if math.isfinite(self.best_variance) else None,
            "skipped": self.skipped,
            "variances": self.variances,
            "top_designs": self.top_designs,
        }


@dataclass
class SearchTrace:
    iterations: list[SearchIteration]
    design: Design
    variance: float

    def to_json_dict(self) -> dict:
        return {
            "iterations": [it.to_json_dict() for it in self.iterations],
            "design": self.design.to_json_dict(),
            "variance": self.variance if math.isfinite(self.variance) else None,
        }


def _downsample(sorted_values, limit=UI_POINTS_LIMIT):
    if len(sorted_values) <= limit:
        return [float(v) for v in sorted_values]
    idx = np.unique(np.linspace(0, len(sorted_values) - 1, limit).round().astype(int))
    return [float(sorted_values[i]) for i in idx]


def adaptive_grid_search(
    theta: ParamVector,
    spec: ModelSpec,
    strata: StratumTable,
    n: int,
    schedule: GridSchedule,
    weighting: str = "observed",
    floors=None,
    progress=None,
) -> SearchTrace:
    """Locate the allocation minimizing the variance of the target estimate.

    ``floors`` (optional, per stratum) raises the lower bounds above the
    schedule minimum; multi-wave plans use it to lock in already-validated
    counts.  Ties in variance break to the lexicographically smallest
    allocation, and degenerate candidates are skipped (all-degenerate grids
    raise ``NoFeasibleDesign``).
    """
    K = strata.n_strata
    mins = _stratum_minimums(schedule.m, strata)
    if floors is not None and len(floors) != K:
        raise InvalidInput("floors length does not match stratum table")
    lower, upper = _first_bounds(n, schedule.m, strata, floors)
    if sum(lower) > n:
        raise InvalidInput(f"minimum allocation {sum(lower)} exceeds n = {n}")
    if sum(upper) < n:
        raise NoFeasibleDesign(f"stratum capacities cannot absorb n = {n}")
    if n > strata.total:
        raise InvalidInput(f"n = {n} exceeds the Phase I size {strata.total}")

    kernel = InformationKernel(theta, spec, strata, weighting)
    iterations: list[SearchIteration] = []
    best_alloc = None
    best_var = np.inf
    s = schedule.first_step(n, strata, floors)

    while True:
        t = len(iterations) + 1
        if t > 1:
            lower, upper = _window_bounds(best_alloc, s_prev, schedule.m, strata)
            if floors is not None:
                lower = [max(lb, int(f)) for lb, f in zip(lower, floors)]
        grid = enumerate_grid(list(zip(lower, upper)), s, n)
        if best_alloc is not None and not (grid == np.asarray(best_alloc)).all(axis=1).any():
            grid = np.vstack([grid, np.asarray(best_alloc, dtype=int)[None, :]])
        if grid.shape[0] == 0:
            raise NoFeasibleDesign("empty candidate grid")
        if best_alloc is not None:
            assert (grid == np.asarray(best_alloc)).all(axis=1).any(), "incumbent lost from grid"

        if progress is not None:
            progress(iteration=t, step=s, rows_done=0, rows_total=int(grid.shape[0]))
        variances = kernel.var_beta_batch(grid)
        finite = np.isfinite(variances)
        skipped = int((~finite).sum())
        if finite.any():
            best_idx = min(
                np.flatnonzero(finite),
                key=lambda i: (variances[i], tuple(grid[i])),
            )
        elif grid.shape[0] == 1:
            best_idx = 0  # forced allocation: no choice to optimize
        else:
            raise NoFeasibleDesign("every candidate design had a degenerate information matrix")
        it_best_var = float(variances[best_idx])
        it_best_alloc = tuple(int(v) for v in grid[best_idx])
        assert it_best_var <= best_var + 1e-300, "best variance increased across iterations"
        best_alloc, best_var = it_best_alloc, it_best_var

        fin_sorted = np.sort(variances[finite])
        top_idx = sorted((i for i in range(grid.shape[0]) if finite[i]),
                         key=lambda i: (variances[i], tuple(grid[i])))[:TOP_DESIGNS]
        iterations.append(SearchIteration(
            step=s,
            rows=int(grid.shape[0]),
            best_allocation=it_best_alloc,
            best_variance=it_best_var,
            skipped=skipped,
            variances=_downsample(fin_sorted),
            top_designs=[{"allocation": [int(v) for v in grid[i]],
                          "variance": float(variances[i])} for i in top_idx],
        ))
        if progress is not None:
            progress(iteration=t, step=s, rows_done=int(grid.shape[0]),
                     rows_total=int(grid.shape[0]))

        if s == 1:
            break
        if (schedule.early_stop_rel_change is not None and len(iterations) >= 2):
            prev = iterations[-2].best_variance
            if prev > 0 and (prev - best_var) / prev < schedule.early_stop_rel_change:
                break
        s_prev = s
        s = schedule.next_step(s_prev, best_alloc, n, strata)

    design = Design(allocation=best_alloc, strata=strata)
    return SearchTrace(iterations=iterations, design=design, variance=best_var)
