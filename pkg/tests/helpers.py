"""Shared builders for test fixtures.

The canonical generating configuration used across the suite: a rare
exposure, moderate outcome prevalence, and misclassification of both
variables driven by baseline false/true positive rates.  The cross-model
coefficients (0.45 of the true outcome in the surrogate-exposure model;
0.275 of the surrogate exposure and of the true exposure in the
surrogate-outcome model) mirror the package's cohort generator defaults.
"""

import numpy as np

from auditopt.model import (
    ErrorRateSpec,
    ModelSpec,
    ParamVector,
    StratumTable,
    fpr_tpr_to_coefficients,
    prevalence_to_intercept,
)


def binary_spec() -> ModelSpec:
    """Main-effects spec with a single (featureless) z level."""
    return ModelSpec.main_effects(z_levels=((),))


def binary_theta(
    p_y0=0.3,
    p_x=0.1,
    beta=0.3,
    outcome_rates=(0.1, 0.9),
    exposure_rates=(0.1, 0.9),
) -> ParamVector:
    """Parameters in the standard four-stratum configuration (no Z)."""
    a0, a1 = fpr_tpr_to_coefficients(ErrorRateSpec(*outcome_rates, target="outcome"))
    g0, g1 = fpr_tpr_to_coefficients(ErrorRateSpec(*exposure_rates, target="exposure"))
    return ParamVector(
        beta=beta,
        eta_ystar=[a0, 0.275, a1, 0.275],  # terms: 1, xstar, y, x
        eta_xstar=[g0, 0.45, g1],          # terms: 1, y, x
        eta_y=[prevalence_to_intercept(p_y0)],
        eta_x=[prevalence_to_intercept(p_x)],
        z_marginal=[1.0],
    )


def with_z_spec() -> ModelSpec:
    """Main-effects spec with one binary z feature."""
    return ModelSpec.main_effects(z_levels=((0.0,), (1.0,)))


def with_z_theta(p_z=0.25) -> ParamVector:
    """Parameters of the eight-stratum configuration with a binary covariate."""
    return ParamVector(
        beta=0.3,
        eta_ystar=[-1.1, 0.275, 2.2, 0.275, 1.0],  # 1, xstar, y, x, z1
        eta_xstar=[-1.1, 0.45, 2.2, 1.0],          # 1, y, x, z1
        eta_y=[-0.85, 0.25],                       # 1, z1 (x spliced separately)
        eta_x=[-2.2, 0.5],                         # 1, z1
        z_marginal=[1.0 - p_z, p_z],
    )


def four_strata(counts=(5297, 1130, 2655, 918)) -> StratumTable:
    return StratumTable.for_z_levels(1, counts)


def draw_arrays(theta: ParamVector, spec: ModelSpec, n: int, rng: np.random.Generator):
    """Sample (ystar, xstar, y, x, z) rows sequentially from the sub-models."""
    z = rng.choice(spec.n_levels, size=n, p=theta.z_marginal)
    zeros = np.zeros(n, dtype=np.int8)

    def draw(name, ystar, xstar, y, x):
        T = spec.design_matrix(name, ystar, xstar, y, x, z)
        p = 1.0 / (1.0 + np.exp(-(T @ theta.coefficients(name, spec))))
        return (rng.random(n) < p).astype(np.int8)

    x = draw("x", zeros, zeros, zeros, zeros)
    y = draw("y", zeros, zeros, zeros, x)
    xstar = draw("xstar", zeros, zeros, y, x)
    ystar = draw("ystar", zeros, xstar, y, x)
    return ystar, xstar, y, x, z


def enumerate_joint(theta: ParamVector, spec: ModelSpec) -> np.ndarray:
    """Brute-force joint table computed factor by factor, scalar math only.

    Independent of the vectorized table builder in the package: evaluates
    each sub-model probability with plain Python loops and multiplies.
    """
    import math

    L = spec.n_levels
    out = np.zeros((L, 2, 2, 2, 2))
    for z in range(L):
        for ys in (0, 1):
            for xs in (0, 1):
                for y in (0, 1):
                    for x in (0, 1):
                        p = float(theta.z_marginal[z])
                        for name, w in (("ystar", ys), ("xstar", xs), ("y", y), ("x", x)):
                            T = spec.design_matrix(name, [ys], [xs], [y], [x], [z])
                            u = float(T[0] @ theta.coefficients(name, spec))
                            pw = 1.0 / (1.0 + math.exp(-u))
                            p *= pw if w == 1 else (1.0 - pw)
                        out[z, ys, xs, y, x] = p
    return out
