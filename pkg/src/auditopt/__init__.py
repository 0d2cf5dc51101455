"""Optimal two-phase validation study designs for error-prone binary data."""

from .errors import (
    AuditOptError,
    CapacityExceeded,
    DegenerateRate,
    DegenerateStratum,
    IllegalTransition,
    InfeasibleBudget,
    InvalidInput,
    MaxIterations,
    NoFeasibleDesign,
    NonDivisibleStep,
    NonFiniteLikelihood,
    SeparationDetected,
    SingularInformation,
    WaveFitFailed,
)
from .model import (
    ErrorRateSpec,
    ModelSpec,
    ParamVector,
    StratumTable,
    fpr_tpr_to_coefficients,
    joint_probability,
    phase2_given_phase1,
    prevalence_to_intercept,
)
from .likelihood import Dataset, FitResult, Record, fit_mle, observed_loglik
from .information import Design, InformationMatrix, fisher_information, var_beta
from .search import (
    GridSchedule,
    SearchTrace,
    adaptive_grid_search,
    choose_step_schedule,
    enumerate_grid,
    first_grid_row_count,
    neighborhood_row_count,
)
from .strategies import (
    bcc_star_design,
    cc_star_design,
    opt_mle_design,
    sample_records,
    srs_design,
)
from .multiwave import ArrayCohortProvider, WavePlan, multiwave_optimal
from .simulate import CovariateConfig, SimScenario, generate_cohort, run_replicates

__version__ = "0.1.0"
