"""Command-line interface.

Exit codes: 0 on success, 2 for input/validation problems, 3 for numeric
failures (singular information, separation, infeasible searches).  Errors
are emitted as a machine-readable JSON object on stderr.
"""

from __future__ import annotations

import functools
import json
import sys

import click
import numpy as np

from . import io as aio
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
from .likelihood import fit_mle
from .model import ParamVector
from .search import GridSchedule
from .session import DirectorySessionStore, Session
from .simulate import run_replicates
from .strategies import STRATEGIES, bcc_star_design, cc_star_design, opt_mle_design, srs_design

VALIDATION_ERRORS = (InvalidInput, CapacityExceeded, IllegalTransition, NonDivisibleStep)
NUMERIC_ERRORS = (
    SingularInformation, SeparationDetected, MaxIterations, NoFeasibleDesign,
    InfeasibleBudget, DegenerateStratum, DegenerateRate, WaveFitFailed,
    NonFiniteLikelihood,
)


def _fail(exc: Exception, code: int):
    doc = {"error": {"type": type(exc).__name__, "message": str(exc)}}
    click.echo(json.dumps(doc, sort_keys=True), err=True)
    sys.exit(code)


def handles_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except VALIDATION_ERRORS as exc:
            _fail(exc, 2)
        except NUMERIC_ERRORS as exc:
            _fail(exc, 3)
        except AuditOptError as exc:
            _fail(exc, 3)
    return wrapper


@click.group()
def main():
    """Design and analyze two-phase validation (audit) studies."""


@main.command()
@click.option("--strata", "strata_file", required=True, type=click.Path())
@click.option("--params", "params_file", type=click.Path(), default=None,
              help="Model + parameter bundle (required for optmle).")
@click.option("--n", required=True, type=int, help="Phase II audit size.")
@click.option("--m", type=int, default=10, show_default=True,
              help="Minimum per-stratum size for optmle.")
@click.option("--max-rows", type=int, default=10_000, show_default=True)
@click.option("--strategy", type=click.Choice(STRATEGIES), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--weighting", type=click.Choice(["observed", "expected"]), default="observed",
              show_default=True)
@click.option("--steps", default=None, help="Comma-separated explicit step sizes, e.g. 15,5,1.")
@click.option("--out", "out_file", required=True, type=click.Path())
@handles_errors
def design(strata_file, params_file, n, m, max_rows, strategy, seed, weighting, steps, out_file):
    """Compute a Phase II design and write it (plus any search trace) as JSON."""
    strata = aio.load_strata(strata_file)
    doc = compute_design_document(strata, params_file, n, m, max_rows, strategy,
                                  seed, weighting, steps)
    aio.write_design_document(out_file, doc)
    click.echo(f"wrote {out_file}")


def compute_design_document(strata, params_file, n, m, max_rows, strategy, seed,
                            weighting, steps, progress=None) -> dict:
    """Shared design computation used by both the CLI and the HTTP service."""
    trace = None
    if strategy == "optmle":
        if params_file is None:
            raise InvalidInput("--strategy optmle requires --params")
        if isinstance(params_file, (str, bytes)):
            spec, theta = aio.load_params(params_file)
        else:
            spec, theta = params_file  # already-parsed (spec, theta) pair
        step_tuple = None
        if steps:
            step_tuple = tuple(int(s) for s in str(steps).split(","))
        schedule = GridSchedule(m=m, max_rows=max_rows, steps=step_tuple)
        if theta.z_marginal is None and weighting == "expected":
            theta = theta.with_z_marginal(strata.z_frequencies(spec.n_levels))
        dsg, trace = opt_mle_design(theta, spec, strata, n, schedule, weighting,
                                    progress=progress)
    elif strategy == "bccstar":
        dsg = bcc_star_design(strata, n)
    elif strategy == "ccstar":
        dsg = cc_star_design(strata, n, seed)
    elif strategy == "srs":
        dsg = srs_design(strata, n, seed)
    else:
        raise InvalidInput(f"unknown strategy {strategy!r}")
    return aio.design_document(dsg, trace, strategy, seed, n,
                               m if strategy == "optmle" else None)


@main.command()
@click.option("--data", "data_file", required=True, type=click.Path())
@click.option("--spec", "spec_file", required=True, type=click.Path(),
              help="Model spec JSON (optionally with a z level-code dictionary).")
@click.option("--out", "out_file", required=True, type=click.Path())
@handles_errors
def fit(data_file, spec_file, out_file):
    """Fit the observed-data MLE on a dataset CSV."""
    spec, level_codes = aio.load_spec(spec_file)
    data = aio.dataset_from_csv(data_file, spec, level_codes)
    result = fit_mle(data, compute_information=True)
    info = result.information_at_mle
    se = np.sqrt(np.diag(np.linalg.inv(info)))
    doc = {
        "theta": result.theta_hat.to_json_dict(),
        "loglik": result.loglik,
        "gradient_norm": result.gradient_norm,
        "converged": result.converged,
        "n_iter": result.n_iter,
        "se": {"beta": float(se[0])},
        "n_records": len(data),
        "n_validated": data.n_validated,
    }
    with open(out_file, "wb") as fh:
        fh.write(aio.canonical_json_bytes(doc))
    click.echo(f"wrote {out_file}")


@main.command()
@click.option("--scenario", "scenario_file", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--estimates/--no-estimates", default=True, show_default=True,
              help="Also write the per-replicate estimates CSV.")
@handles_errors
def simulate(scenario_file, out_dir, estimates):
    """Run a replicate study and write the metrics table as CSV."""
    from pathlib import Path

    scenario = aio.load_scenario(scenario_file)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, est = run_replicates(scenario)
    aio.metrics_to_csv(rows, out / "metrics.csv")
    if estimates:
        aio.estimates_to_csv(est, out / "estimates.csv")
    for r in rows:
        click.echo(f"{r.design}: pct_bias={r.pct_bias:.3f} se={r.se:.4f} "
                   f"re={r.re:.3f} ri={r.ri:.3f} failures={r.failures}")


@main.group()
def wave():
    """Resumable multi-wave audit sessions persisted to a directory."""


@wave.command("init")
@click.option("--session", "session_dir", required=True, type=click.Path())
@click.option("--strata", "strata_file", required=True, type=click.Path())
@click.option("--spec", "spec_file", required=True, type=click.Path())
@click.option("--n", required=True, type=int)
@click.option("--m", type=int, default=10, show_default=True)
@click.option("--waves", type=int, default=2, show_default=True)
@click.option("--prior", "prior_file", type=click.Path(), default=None,
              help="Optional params bundle used to plan the first wave.")
@click.option("--max-rows", type=int, default=10_000, show_default=True)
@handles_errors
def wave_init(session_dir, strata_file, spec_file, n, m, waves, prior_file, max_rows):
    """Create a session."""
    strata = aio.load_strata(strata_file)
    spec, _ = aio.load_spec(spec_file)
    prior = None
    if prior_file is not None:
        prior_spec, prior = aio.load_params(prior_file)
        if prior_spec != spec:
            raise InvalidInput("prior params bundle uses a different model spec")
    session = Session.create(strata, spec, n, m, waves=waves, prior_theta=prior,
                             max_rows=max_rows)
    DirectorySessionStore(session_dir).save(session)
    click.echo(f"session {session.id} created in {session_dir}")


def _with_session(session_dir, fn):
    store = DirectorySessionStore(session_dir)
    session = store.load()
    out = fn(session)
    store.save(session)
    return session, out


@wave.command("plan")
@click.option("--session", "session_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
@handles_errors
def wave_plan(session_dir, seed):
    """Plan the next wave's allocation."""
    session, plan = _with_session(session_dir, lambda s: s.plan_wave(seed=seed))
    click.echo(json.dumps({"wave": plan["wave"], "strategy": plan["strategy"],
                           "incremental": plan["incremental"]}, sort_keys=True))


@wave.command("ingest")
@click.option("--session", "session_dir", required=True, type=click.Path())
@click.option("--data", "data_file", required=True, type=click.Path())
@handles_errors
def wave_ingest(session_dir, data_file):
    """Ingest validated records (dataset CSV with v=1 rows)."""
    def act(session):
        data = aio.dataset_from_csv(data_file, session.spec)
        if data.n_validated != len(data):
            raise InvalidInput("ingest CSV must contain validated rows only (v=1)")
        records = [
            {"ystar": int(data.ystar[i]), "xstar": int(data.xstar[i]),
             "y": int(data.y[i]), "x": int(data.x[i]), "z": int(data.z[i])}
            for i in range(len(data))
        ]
        return session.ingest(records)

    _, result = _with_session(session_dir, act)
    click.echo(json.dumps(result, sort_keys=True))


@wave.command("refit")
@click.option("--session", "session_dir", required=True, type=click.Path())
@handles_errors
def wave_refit(session_dir):
    """Refit the model on Phase I plus everything validated so far."""
    _, result = _with_session(session_dir, lambda s: s.refit())
    click.echo(json.dumps({"converged": result["converged"],
                           "beta": result["theta"]["beta"]}, sort_keys=True))


@wave.command("finalize")
@click.option("--session", "session_dir", required=True, type=click.Path())
@handles_errors
def wave_finalize(session_dir):
    """Run the final fit and close the session."""
    _, result = _with_session(session_dir, lambda s: s.finalize())
    click.echo(json.dumps({"converged": result["converged"],
                           "beta": result["theta"]["beta"]}, sort_keys=True))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--db", "db_path", default="auditopt-sessions.sqlite", show_default=True)
@click.option("--ui", "frontend_dir", type=click.Path(), default=None,
              help="Serve a built web UI directory at the root path.")
def serve(host, port, db_path, frontend_dir):
    """Start the HTTP/JSON service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(db_path, frontend_dir=frontend_dir), host=host, port=port)


if __name__ == "__main__":
    main()
