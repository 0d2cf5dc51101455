"""Multi-wave approximations to the optimal audit design.

The optimal allocation needs the model parameters, which are unknown when
an audit starts.  The multi-wave workaround: spend part of the budget on a
first wave (balanced sampling, or a grid search under parameters carried
over from a historic audit), fit the model on Phase I plus the validated
records so far, then let the grid search place the remaining budget — and
repeat for three-wave plans.  Later waves optimize the TOTAL allocation
with the already-validated counts as per-stratum lower bounds, since the
estimator's variance depends on cumulative sampling probabilities.

If an interim fit fails (separation or a singular information matrix, as
happens when validated cross-tabulation cells come up empty), the plan
falls back to balanced sampling for the remaining waves and flags it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AuditOptError,
    InvalidInput,
    MaxIterations,
    NoFeasibleDesign,
    SeparationDetected,
    SingularInformation,
    WaveFitFailed,
)
from .information import Design
from .likelihood import Dataset, FitResult, fit_mle
from .model import ModelSpec, ParamVector, StratumTable
from .search import GridSchedule, SearchTrace, adaptive_grid_search
from .strategies import bcc_star_design, build_strata_index, sample_records

_FIT_FAILURES = (SeparationDetected, SingularInformation, MaxIterations, NoFeasibleDesign)


class ArrayCohortProvider:
    """Serves a fully known cohort: Phase I columns up front, truth on demand."""

    def __init__(self, ystar, xstar, y, x, z):
        self.ystar = np.asarray(ystar, dtype=np.int8)
        self.xstar = np.asarray(xstar, dtype=np.int8)
        self._y = np.asarray(y, dtype=np.int8)
        self._x = np.asarray(x, dtype=np.int8)
        self.z = np.asarray(z, dtype=np.int64)

    def __len__(self):
        return self.ystar.shape[0]

    def phase1(self):
        return self.ystar, self.xstar, self.z

    def validate(self, indices):
        idx = np.asarray(sorted(indices), dtype=int)
        return idx, self._y[idx], self._x[idx]


@dataclass
class Wave:
    strategy: str
    size: int
    incremental: tuple[int, ...]
    cumulative: tuple[int, ...]
    theta_after: ParamVector | None = None
    trace: SearchTrace | None = None

    def to_json_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "size": self.size,
            "incremental": list(self.incremental),
            "cumulative": list(self.cumulative),
            "theta_after": None if self.theta_after is None else self.theta_after.to_json_dict(),
            "trace": None if self.trace is None else self.trace.to_json_dict(),
        }


@dataclass
class WavePlan:
    strata: StratumTable
    n: int
    waves: list[Wave] = field(default_factory=list)
    fallback: bool = False
    fallback_reason: str | None = None

    def cumulative_allocation(self) -> tuple[int, ...]:
        if not self.waves:
            return tuple(0 for _ in self.strata.keys)
        return self.waves[-1].cumulative

    def validate(self):
        total = sum(w.size for w in self.waves)
        if total != self.n:
            raise InvalidInput(f"wave sizes sum to {total}, expected {self.n}")
        prev = np.zeros(self.strata.n_strata, dtype=int)
        for w in self.waves:
            cum = np.asarray(w.cumulative)
            if np.any(cum < prev):
                raise InvalidInput("cumulative allocation decreased across waves")
            if np.any(cum > self.strata.counts_array()):
                raise InvalidInput("cumulative allocation exceeds stratum capacity")
            prev = cum
        return self

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            **self.strata.to_json_dict(),
            "waves": [w.to_json_dict() for w in self.waves],
            "fallback": self.fallback,
            "fallback_reason": self.fallback_reason,
        }


def wave_sizes(n: int, waves: int) -> list[int]:
    """Budget split across waves: half up front, the rest evenly."""
    if waves < 1:
        raise InvalidInput("need at least one wave")
    if waves == 1:
        return [n]
    first = n // 2
    rest = waves - 1
    tail = [(n - first) // rest] * rest
    tail[-1] += (n - first) - sum(tail)
    return [first] + tail


def multiwave_optimal(
    provider,
    spec: ModelSpec,
    strata: StratumTable,
    n: int,
    waves: int = 2,
    init: str = "bcc_star",
    schedule: GridSchedule | None = None,
    rng_seed: int = 0,
    prior: ParamVector | None = None,
    weighting: str = "observed",
    historic_data: Dataset | None = None,
    fit_options: dict | None = None,
) -> tuple[WavePlan, FitResult]:
    """Run a multi-wave audit end to end against a cohort provider.

    ``init`` picks the first wave: ``"bcc_star"`` for balanced sampling or
    ``"prior"`` for a grid search under ``prior`` parameters.  Interim fits
    can pool ``historic_data`` with the accumulating validated records.
    Returns the executed plan and the final fit on all validated data.
    """
    if init not in ("bcc_star", "prior"):
        raise InvalidInput(f"unknown init strategy {init!r}")
    if init == "prior" and prior is None:
        raise InvalidInput("init='prior' needs a prior parameter vector")
    if schedule is None:
        schedule = GridSchedule(m=1)
    sizes = wave_sizes(n, waves)
    ystar, xstar, z = provider.phase1()
    strata_index = build_strata_index(ystar, xstar, z)
    _check_strata_match(strata, strata_index)

    N = len(ystar)
    y_partial = np.full(N, -1, dtype=np.int8)
    x_partial = np.full(N, -1, dtype=np.int8)
    validated: set[int] = set()
    cumulative = np.zeros(strata.n_strata, dtype=int)
    plan = WavePlan(strata=strata, n=n)
    rng = np.random.default_rng(rng_seed)
    theta_current = prior

    for w, size in enumerate(sizes):
        target_total = sum(sizes[: w + 1])
        if w == 0:
            if init == "prior":
                trace = adaptive_grid_search(theta_current, spec, strata, size,
                                             schedule, weighting)
                design, strategy = trace.design, "optmle"
            else:
                design, trace, strategy = bcc_star_design(strata, size), None, "bccstar"
            incremental = np.asarray(design.allocation, dtype=int)
        else:
            try:
                theta_current = _interim_fit(provider, spec, validated, y_partial,
                                             x_partial, historic_data, fit_options).theta_hat
                floors = np.maximum(cumulative, 0)
                trace = adaptive_grid_search(theta_current, spec, strata, target_total,
                                             schedule, weighting, floors=floors)
                incremental = np.asarray(trace.design.allocation, dtype=int) - cumulative
                strategy = "optmle"
            except _FIT_FAILURES as exc:
                plan.fallback = True
                plan.fallback_reason = f"{type(exc).__name__}: {exc}"
                remaining = StratumTable(
                    keys=strata.keys,
                    counts=tuple(int(c - a) for c, a in
                                 zip(strata.counts, cumulative)),
                )
                design = bcc_star_design(remaining, size)
                incremental = np.asarray(design.allocation, dtype=int)
                trace, strategy = None, "bccstar-fallback"

        inc_design = Design(
            allocation=tuple(int(v) for v in incremental),
            strata=StratumTable(keys=strata.keys,
                                counts=tuple(int(c - a) for c, a in
                                             zip(strata.counts, cumulative))),
        )
        picked = sample_records(inc_design, strata_index, validated,
                                rng_seed=int(rng.integers(2 ** 63)))
        idx, yv, xv = provider.validate(picked)
        y_partial[idx] = yv
        x_partial[idx] = xv
        validated.update(int(i) for i in picked)
        cumulative = cumulative + incremental
        plan.waves.append(Wave(
            strategy=strategy,
            size=int(size),
            incremental=tuple(int(v) for v in incremental),
            cumulative=tuple(int(v) for v in cumulative),
            theta_after=theta_current,
            trace=trace,
        ))

    try:
        final = _interim_fit(provider, spec, validated, y_partial, x_partial, None, fit_options)
    except _FIT_FAILURES as exc:
        plan.validate()
        err = WaveFitFailed(f"final fit on all validated data failed: {exc}")
        err.plan = plan  # callers can still recover the executed allocation
        raise err from exc
    plan.waves[-1].theta_after = final.theta_hat
    plan.validate()
    return plan, final


def _check_strata_match(strata: StratumTable, strata_index: dict):
    for key, count in zip(strata.keys, strata.counts):
        have = len(strata_index.get(key, ()))
        if have != count:
            raise InvalidInput(
                f"stratum {key}: table says {count} records, cohort has {have}"
            )


def _interim_fit(provider, spec, validated, y_partial, x_partial,
                 historic_data: Dataset | None, fit_options: dict | None = None) -> FitResult:
    ystar, xstar, z = provider.phase1()
    v = np.zeros(len(ystar), dtype=np.int8)
    if validated:
        v[np.asarray(sorted(validated), dtype=int)] = 1
    data = Dataset.from_arrays(v, ystar, xstar, y_partial, x_partial, z, spec)
    if historic_data is not None:
        data = concat_datasets(historic_data, data)
    return fit_mle(data, **(fit_options or {}))


def concat_datasets(a: Dataset, b: Dataset) -> Dataset:
    if a.spec != b.spec:
        raise InvalidInput("datasets use different model specs")
    return Dataset.from_arrays(
        np.concatenate([a.v, b.v]),
        np.concatenate([a.ystar, b.ystar]),
        np.concatenate([a.xstar, b.xstar]),
        np.concatenate([a.y, b.y]),
        np.concatenate([a.x, b.x]),
        np.concatenate([a.z, b.z]),
        a.spec,
    )
