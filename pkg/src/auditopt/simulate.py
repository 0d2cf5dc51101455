"""Simulation harness: cohort generation, replicate loops, design metrics.

A scenario pins the cohort law (outcome prevalence, exposure prevalence,
error rates, optional error-free covariate) plus the audit budget, and the
harness races sampling strategies against each other over seeded
replicates.  Designs are scored by percent bias and empirical SE of the
target estimate, and by relative efficiency (variance ratio) and relative
IQR against a reference design, with degenerate replicates counted and
excluded per design.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AuditOptError,
    InvalidInput,
    MaxIterations,
    NoFeasibleDesign,
    NonFiniteLikelihood,
    SeparationDetected,
    SingularInformation,
    WaveFitFailed,
)
from .likelihood import Dataset, fit_mle
from .model import (
    ErrorRateSpec,
    ModelSpec,
    ParamVector,
    StratumTable,
    fpr_tpr_to_coefficients,
    prevalence_to_intercept,
)
from .multiwave import ArrayCohortProvider, multiwave_optimal
from .search import GridSchedule
from .strategies import (
    bcc_star_design,
    build_strata_index,
    cc_star_design,
    opt_mle_design,
    sample_records,
    srs_design,
    tabulate_strata,
)

_FAILURES = (SeparationDetected, SingularInformation, MaxIterations,
             NoFeasibleDesign, WaveFitFailed, NonFiniteLikelihood)

DESIGN_NAMES = ("optmle", "optmle2", "optmle3", "bccstar", "ccstar", "srs")

# cross-model coefficients of the generating mechanism
COEF_Y_IN_XSTAR = 0.45
COEF_XSTAR_IN_YSTAR = 0.275
COEF_X_IN_YSTAR = 0.275


@dataclass(frozen=True)
class CovariateConfig:
    """Optional error-free binary covariate in the generating mechanism."""

    p_z: float = 0.25
    beta_z: float = 0.0          # covariate effect in the outcome model
    lam: float = 0.0             # covariate effect in both misclassification models
    delta_xstar: float = 0.0     # x:z interaction in the exposure-surrogate model
    delta_ystar: float = 0.0     # x:z interaction in the outcome-surrogate model
    x_slope_z: float = 0.0       # covariate effect in the exposure model
    x_intercept: float | None = None  # exposure-model intercept; default logit(p_x)

    def __post_init__(self):
        if not 0.0 < self.p_z < 1.0:
            raise InvalidInput("p_z must lie strictly in (0, 1)")


@dataclass(frozen=True)
class SimScenario:
    """One simulation setting: cohort law, audit budget, designs to race."""

    N: int
    n: int
    m: int = 10
    p_y0: float = 0.3
    p_x: float = 0.1
    beta: float = 0.3
    outcome_rates: tuple[float, float] = (0.1, 0.9)
    exposure_rates: tuple[float, float] = (0.1, 0.9)
    covariate: CovariateConfig | None = None
    replicates: int = 1000
    seed: int = 0
    designs: tuple[str, ...] = ("optmle", "optmle2", "bccstar", "ccstar", "srs")
    reference: str = "optmle"
    max_rows: int = 10_000
    separation_bound: float = 30.0

    def __post_init__(self):
        if not 0 < self.n <= self.N:
            raise InvalidInput("need 0 < n <= N")
        for name, v in (("p_y0", self.p_y0), ("p_x", self.p_x)):
            if not 0.0 < v < 1.0:
                raise InvalidInput(f"{name} must lie strictly in (0, 1)")
        unknown = set(self.designs) - set(DESIGN_NAMES)
        if unknown:
            raise InvalidInput(f"unknown designs: {sorted(unknown)}")
        if self.reference not in self.designs:
            raise InvalidInput("the reference design must be among the designs")
        if self.replicates < 1:
            raise InvalidInput("need at least one replicate")

    # -- generating model ---------------------------------------------------

    def model(self) -> tuple[ModelSpec, ParamVector]:
        a0, a1 = fpr_tpr_to_coefficients(ErrorRateSpec(*self.outcome_rates, target="outcome"))
        g0, g1 = fpr_tpr_to_coefficients(ErrorRateSpec(*self.exposure_rates, target="exposure"))
        if self.covariate is None:
            spec = ModelSpec.main_effects(z_levels=((),))
            theta = ParamVector(
                beta=self.beta,
                eta_ystar=[a0, COEF_XSTAR_IN_YSTAR, a1, COEF_X_IN_YSTAR],
                eta_xstar=[g0, COEF_Y_IN_XSTAR, g1],
                eta_y=[prevalence_to_intercept(self.p_y0)],
                eta_x=[prevalence_to_intercept(self.p_x)],
                z_marginal=[1.0],
            )
            return spec, theta
        cov = self.covariate
        z_levels = ((0.0,), (1.0,))
        base = ModelSpec.main_effects(z_levels=z_levels)
        terms_ystar = base.terms_ystar + (("x:z1",) if cov.delta_ystar else ())
        terms_xstar = base.terms_xstar + (("x:z1",) if cov.delta_xstar else ())
        spec = ModelSpec(
            z_levels=z_levels,
            terms_ystar=terms_ystar,
            terms_xstar=terms_xstar,
            terms_y=base.terms_y,
            terms_x=base.terms_x,
        )
        eta_ystar = [a0, COEF_XSTAR_IN_YSTAR, a1, COEF_X_IN_YSTAR, cov.lam]
        if cov.delta_ystar:
            eta_ystar.append(cov.delta_ystar)
        eta_xstar = [g0, COEF_Y_IN_XSTAR, g1, cov.lam]
        if cov.delta_xstar:
            eta_xstar.append(cov.delta_xstar)
        x0 = cov.x_intercept if cov.x_intercept is not None else prevalence_to_intercept(self.p_x)
        theta = ParamVector(
            beta=self.beta,
            eta_ystar=eta_ystar,
            eta_xstar=eta_xstar,
            eta_y=[prevalence_to_intercept(self.p_y0), cov.beta_z],
            eta_x=[x0, cov.x_slope_z],
            z_marginal=[1.0 - cov.p_z, cov.p_z],
        )
        return spec, theta

    def to_json_dict(self) -> dict:
        doc = {
            "N": self.N, "n": self.n, "m": self.m,
            "p_y0": self.p_y0, "p_x": self.p_x, "beta": self.beta,
            "outcome_rates": list(self.outcome_rates),
            "exposure_rates": list(self.exposure_rates),
            "replicates": self.replicates, "seed": self.seed,
            "designs": list(self.designs), "reference": self.reference,
            "max_rows": self.max_rows,
            "separation_bound": self.separation_bound,
        }
        if self.covariate is not None:
            c = self.covariate
            doc["covariate"] = {
                "p_z": c.p_z, "beta_z": c.beta_z, "lam": c.lam,
                "delta_xstar": c.delta_xstar, "delta_ystar": c.delta_ystar,
                "x_slope_z": c.x_slope_z, "x_intercept": c.x_intercept,
            }
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SimScenario":
        try:
            cov = doc.get("covariate")
            return cls(
                N=doc["N"], n=doc["n"], m=doc.get("m", 10),
                p_y0=doc.get("p_y0", 0.3), p_x=doc.get("p_x", 0.1),
                beta=doc.get("beta", 0.3),
                outcome_rates=tuple(doc.get("outcome_rates", (0.1, 0.9))),
                exposure_rates=tuple(doc.get("exposure_rates", (0.1, 0.9))),
                covariate=None if cov is None else CovariateConfig(**cov),
                replicates=doc.get("replicates", 1000),
                seed=doc.get("seed", 0),
                designs=tuple(doc.get("designs", ("optmle", "optmle2", "bccstar", "ccstar", "srs"))),
                reference=doc.get("reference", "optmle"),
                max_rows=doc.get("max_rows", 10_000),
                separation_bound=doc.get("separation_bound", 30.0),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidInput(f"malformed scenario: {exc}") from exc


@dataclass
class MetricsRow:
    design: str
    pct_bias: float
    se: float
    re: float
    ri: float
    failures: int
    used: int

    def to_json_dict(self) -> dict:
        def safe(v):
            return v if math.isfinite(v) else None

        return {
            "design": self.design, "pct_bias": safe(self.pct_bias), "se": safe(self.se),
            "re": safe(self.re), "ri": safe(self.ri),
            "failures": self.failures, "used": self.used,
        }


def generate_cohort(scenario: SimScenario, seed: int) -> tuple[Dataset, StratumTable]:
    """Draw one fully validated Phase I cohort plus its stratum table."""
    spec, theta = scenario.model()
    rng = np.random.default_rng(seed)
    N = scenario.N
    z = rng.choice(spec.n_levels, size=N, p=theta.z_marginal)
    zeros = np.zeros(N, dtype=np.int8)

    def draw(name, ystar, xstar, y, x):
        T = spec.design_matrix(name, ystar, xstar, y, x, z)
        u = T @ theta.coefficients(name, spec)
        p = 1.0 / (1.0 + np.exp(-u))
        return (rng.random(N) < p).astype(np.int8)

    x = draw("x", zeros, zeros, zeros, zeros)
    y = draw("y", zeros, zeros, zeros, x)
    xstar = draw("xstar", zeros, zeros, y, x)
    ystar = draw("ystar", zeros, xstar, y, x)
    data = Dataset.from_arrays(np.ones(N, dtype=np.int8), ystar, xstar, y, x, z, spec)
    return data, tabulate_strata(ystar, xstar, z, spec.n_levels)


def _replicate_task(args):
    scenario, replicate = args
    return run_one_replicate(scenario, replicate)


@dataclass
class ReplicateResult:
    estimates: dict[str, float] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)


def _design_spec_for_fit(scenario: SimScenario) -> ModelSpec:
    spec, _ = scenario.model()
    return spec


def run_one_replicate(scenario: SimScenario, replicate: int) -> ReplicateResult:
    """Race every configured design on one seeded cohort."""
    spec, theta = scenario.model()
    root = np.random.SeedSequence((scenario.seed, replicate))
    cohort_seed, sample_seed, wave_seed = (int(s.generate_state(1)[0]) for s in root.spawn(3))
    truth, strata = generate_cohort(scenario, cohort_seed)
    index = build_strata_index(truth.ystar, truth.xstar, truth.z)
    schedule = GridSchedule(m=scenario.m, max_rows=scenario.max_rows)

    result = ReplicateResult()
    for name in scenario.designs:
        try:
            beta_hat = _run_design(name, scenario, spec, theta, truth, strata, index,
                                   schedule, sample_seed, wave_seed)
            result.estimates[name] = beta_hat
        except _FAILURES as exc:
            result.failures[name] = f"{type(exc).__name__}"
    return result


def _run_design(name, scenario, spec, theta, truth, strata, index,
                schedule, sample_seed, wave_seed) -> float:
    if name in ("optmle2", "optmle3"):
        provider = ArrayCohortProvider(truth.ystar, truth.xstar, truth.y, truth.x, truth.z)
        _, fit = multiwave_optimal(
            provider, spec, strata, scenario.n,
            waves=2 if name == "optmle2" else 3,
            schedule=schedule, rng_seed=wave_seed,
            fit_options={"separation_bound": scenario.separation_bound},
        )
        if not fit.converged:
            raise MaxIterations("final multi-wave fit did not converge")
        return fit.theta_hat.beta

    if name == "optmle":
        design, _ = opt_mle_design(theta, spec, strata, scenario.n, schedule)
    elif name == "bccstar":
        design = bcc_star_design(strata, scenario.n)
    elif name == "ccstar":
        design = cc_star_design(strata, scenario.n, sample_seed)
    elif name == "srs":
        design = srs_design(strata, scenario.n, sample_seed)
    else:
        raise InvalidInput(f"unknown design {name!r}")
    picked = sample_records(design, index, rng_seed=sample_seed)
    masked = truth.with_validation(picked)
    fit = fit_mle(masked, separation_bound=scenario.separation_bound)
    if not fit.converged:
        raise MaxIterations("fit did not converge")
    return fit.theta_hat.beta


def run_replicates(scenario: SimScenario, progress=None, n_jobs: int = 1):
    """All replicates, aggregated to one metrics row per design.

    Returns ``(rows, estimates)`` where ``estimates`` maps design name to
    the per-replicate target estimates (NaN where that replicate failed).
    Replicates run as independent tasks; seeds derive from the replicate
    index, so ``n_jobs`` changes wall time but never the numbers.
    """
    R = scenario.replicates
    est = {name: np.full(R, np.nan) for name in scenario.designs}
    fail = {name: 0 for name in scenario.designs}

    def collect(r, res):
        for name in scenario.designs:
            if name in res.estimates:
                est[name][r] = res.estimates[name]
            else:
                fail[name] += 1
        if progress is not None:
            progress(replicate=r + 1, total=R)

    if n_jobs == 1:
        for r in range(R):
            collect(r, run_one_replicate(scenario, r))
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            for r, res in enumerate(pool.map(_replicate_task,
                                             ((scenario, r) for r in range(R)),
                                             chunksize=4)):
                collect(r, res)

    ref = est[scenario.reference]
    ref_ok = ref[np.isfinite(ref)]
    ref_var = float(np.var(ref_ok, ddof=1)) if ref_ok.size >= 2 else math.nan
    ref_iqr = (float(np.quantile(ref_ok, 0.75) - np.quantile(ref_ok, 0.25))
               if ref_ok.size >= 2 else math.nan)
    rows = []
    for name in scenario.designs:
        ok = est[name][np.isfinite(est[name])]
        if ok.size < 2:
            rows.append(MetricsRow(name, math.nan, math.nan, math.nan, math.nan,
                                   fail[name], int(ok.size)))
            continue
        pct_bias = 100.0 * (float(ok.mean()) - scenario.beta) / scenario.beta
        se = float(ok.std(ddof=1))
        re = ref_var / float(np.var(ok, ddof=1))
        iqr = float(np.quantile(ok, 0.75) - np.quantile(ok, 0.25))
        ri = ref_iqr / iqr if iqr > 0 else math.nan
        rows.append(MetricsRow(name, pct_bias, se, re, ri, fail[name], int(ok.size)))
    return rows, est
