"""Observed-data likelihood and maximum likelihood fitting.

Validated records (``v = 1``) contribute the four sub-model log
probabilities of their complete row; unvalidated records contribute the log
of the product summed over the four possible true ``(y, x)`` values.  The
validation indicator's own distribution drops out because sampling depends
only on Phase I data (missing at random by design).

Records are aggregated into distinct configurations before evaluation, so
likelihood and gradient cost scales with the support size rather than the
cohort size.  The fitter is a quasi-Newton (BFGS) ascent with the analytic
gradient and a backtracking line search.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from .errors import (
    DegenerateStratum,
    InvalidInput,
    MaxIterations,
    NonFiniteLikelihood,
    SeparationDetected,
    SingularInformation,
)
from .model import SUBMODELS, ModelSpec, ParamVector, log_bernoulli, logistic

SEPARATION_BOUND = 15.0
GRAD_TOL = 1e-8
RELF_TOL = 1e-12
MAX_ITER = 500


@dataclass(frozen=True)
class Record:
    """One subject: Phase I surrogates always, true values only if validated."""

    v: int
    ystar: int
    xstar: int
    z: int
    y: int | None = None
    x: int | None = None

    def __post_init__(self):
        if self.v not in (0, 1):
            raise InvalidInput(f"v must be 0 or 1, got {self.v!r}")
        if self.ystar not in (0, 1) or self.xstar not in (0, 1):
            raise InvalidInput("ystar and xstar must be 0 or 1")
        if self.v == 1:
            if self.y not in (0, 1) or self.x not in (0, 1):
                raise InvalidInput("validated records need binary y and x")
        else:
            if self.y is not None or self.x is not None:
                raise InvalidInput("unvalidated records must not carry y or x")


class Dataset:
    """A cohort of records bound to a model spec.

    Internally stored as parallel integer arrays (missing ``y``/``x`` coded
    as -1) with a cached aggregation into distinct configurations.
    """

    def __init__(self, records, spec: ModelSpec):
        self.spec = spec
        recs = list(records)
        self.v = np.array([r.v for r in recs], dtype=np.int8)
        self.ystar = np.array([r.ystar for r in recs], dtype=np.int8)
        self.xstar = np.array([r.xstar for r in recs], dtype=np.int8)
        self.y = np.array([-1 if r.y is None else r.y for r in recs], dtype=np.int8)
        self.x = np.array([-1 if r.x is None else r.x for r in recs], dtype=np.int8)
        self.z = np.array([r.z for r in recs], dtype=np.int64)
        self._check()

    @classmethod
    def from_arrays(cls, v, ystar, xstar, y, x, z, spec: ModelSpec) -> "Dataset":
        obj = cls.__new__(cls)
        obj.spec = spec
        obj.v = np.asarray(v, dtype=np.int8)
        obj.ystar = np.asarray(ystar, dtype=np.int8)
        obj.xstar = np.asarray(xstar, dtype=np.int8)
        obj.y = np.where(np.asarray(v) == 1, np.asarray(y), -1).astype(np.int8)
        obj.x = np.where(np.asarray(v) == 1, np.asarray(x), -1).astype(np.int8)
        obj.z = np.asarray(z, dtype=np.int64)
        obj._check()
        return obj

    def _check(self):
        n = self.v.shape[0]
        for name in ("ystar", "xstar", "y", "x", "z"):
            if getattr(self, name).shape[0] != n:
                raise InvalidInput("record arrays differ in length")
        if n == 0:
            raise InvalidInput("dataset is empty")
        if self.z.min(initial=0) < 0 or self.z.max(initial=0) >= self.spec.n_levels:
            raise InvalidInput("z index out of range for the model spec")
        val = self.v == 1
        if np.any((self.y[val] < 0) | (self.x[val] < 0)):
            raise InvalidInput("validated records need binary y and x")

    def __len__(self):
        return self.v.shape[0]

    @property
    def n_validated(self) -> int:
        return int((self.v == 1).sum())

    def records(self):
        for i in range(len(self)):
            if self.v[i] == 1:
                yield Record(1, int(self.ystar[i]), int(self.xstar[i]), int(self.z[i]),
                             int(self.y[i]), int(self.x[i]))
            else:
                yield Record(0, int(self.ystar[i]), int(self.xstar[i]), int(self.z[i]))

    def subset(self, idx) -> "Dataset":
        return Dataset.from_arrays(self.v[idx], self.ystar[idx], self.xstar[idx],
                                   self.y[idx], self.x[idx], self.z[idx], self.spec)

    def with_validation(self, validated_indices) -> "Dataset":
        """Mask true values outside the given validated index set."""
        mask = np.zeros(len(self), dtype=bool)
        mask[np.asarray(sorted(validated_indices), dtype=int)] = True
        v = mask.astype(np.int8)
        return Dataset.from_arrays(v, self.ystar, self.xstar, self.y, self.x, self.z, self.spec)

    def z_frequencies(self) -> np.ndarray:
        return np.bincount(self.z, minlength=self.spec.n_levels) / len(self)

    @cached_property
    def _aggregated(self):
        """Unique configurations with counts and a representative record index."""
        cols = np.column_stack([self.v, self.ystar, self.xstar, self.y, self.x, self.z])
        uniq, first, counts = _unique_rows(cols)
        return uniq, counts, first


def _unique_rows(cols):
    uniq, first, counts = np.unique(cols, axis=0, return_index=True, return_counts=True)
    return uniq, first, counts


@dataclass
class FitResult:
    """Outcome of a maximum likelihood fit."""

    theta_hat: ParamVector
    loglik: float
    gradient_norm: float
    converged: bool
    n_iter: int
    rel_change: float
    information_at_mle: np.ndarray | None = None


class _FlatMap:
    """Maps each sub-model's full coefficient vector into flat θ positions."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        pos = {}
        cursor = 1
        for name in SUBMODELS:
            p = len(spec.terms(name))
            idx = np.empty(p, dtype=int)
            for i in range(p):
                if name == "y" and i == spec.beta_term_index:
                    idx[i] = 0
                else:
                    idx[i] = cursor
                    cursor += 1
            pos[name] = idx
        assert cursor == spec.n_params
        self.positions = pos


def _config_design(spec, ystar, xstar, y, x, z):
    return {name: spec.design_matrix(name, ystar, xstar, y, x, z) for name in SUBMODELS}


class _LoglikWorkspace:
    """Precomputed design matrices for one dataset, reused across θ values."""

    def __init__(self, data: Dataset):
        self.spec = data.spec
        self.flatmap = _FlatMap(data.spec)
        uniq, counts, first = data._aggregated
        val = uniq[:, 0] == 1
        self.val_counts = counts[val].astype(float)
        self.val_first = first[val]
        vu = uniq[val]
        self.val_obs = {"ystar": vu[:, 1].astype(float), "xstar": vu[:, 2].astype(float),
                        "y": vu[:, 3].astype(float), "x": vu[:, 4].astype(float)}
        self.val_T = _config_design(self.spec, vu[:, 1], vu[:, 2], vu[:, 3], vu[:, 4], vu[:, 5])

        uv = uniq[~val]
        self.unv_counts = counts[~val].astype(float)
        self.unv_first = first[~val]
        C = uv.shape[0]
        # expand each unvalidated config over the four possible (y, x) values
        yy, xx = np.indices((2, 2)).reshape(2, -1)
        self.unv_expand = C
        ys_e = np.repeat(uv[:, 1], 4)
        xs_e = np.repeat(uv[:, 2], 4)
        y_e = np.tile(yy, C)
        x_e = np.tile(xx, C)
        z_e = np.repeat(uv[:, 5], 4)
        self.unv_obs = {"ystar": ys_e.astype(float), "xstar": xs_e.astype(float),
                        "y": y_e.astype(float), "x": x_e.astype(float)}
        self.unv_T = _config_design(self.spec, ys_e, xs_e, y_e, x_e, z_e)

    def loglik_and_grad(self, theta: ParamVector):
        spec, fm = self.spec, self.flatmap
        grad = np.zeros(spec.n_params)
        ll = 0.0

        if self.val_counts.shape[0]:
            lp = np.zeros(self.val_counts.shape[0])
            scores = {}
            for name in SUBMODELS:
                u = self.val_T[name] @ theta.coefficients(name, spec)
                w = self.val_obs[name]
                lp += log_bernoulli(w, u)
                scores[name] = (w - logistic(u))[:, None] * self.val_T[name]
            if not np.all(np.isfinite(lp)):
                bad = int(np.argmin(np.isfinite(lp)))
                raise NonFiniteLikelihood(int(self.val_first[bad]))
            ll += float(self.val_counts @ lp)
            for name in SUBMODELS:
                np.add.at(grad, fm.positions[name], self.val_counts @ scores[name])

        if self.unv_counts.shape[0]:
            C = self.unv_counts.shape[0]
            lp4 = np.zeros(4 * C)
            for name in SUBMODELS:
                u = self.unv_T[name] @ theta.coefficients(name, spec)
                lp4 += log_bernoulli(self.unv_obs[name], u)
            lp4 = lp4.reshape(C, 4)
            m = logsumexp(lp4, axis=1)
            if not np.all(np.isfinite(m)):
                bad = int(np.argmin(np.isfinite(m)))
                raise NonFiniteLikelihood(int(self.unv_first[bad]))
            ll += float(self.unv_counts @ m)
            w4 = np.exp(lp4 - m[:, None]).reshape(-1)  # posterior over (y, x)
            cw = np.repeat(self.unv_counts, 4) * w4
            for name in SUBMODELS:
                u = self.unv_T[name] @ theta.coefficients(name, spec)
                resid = self.unv_obs[name] - logistic(u)
                np.add.at(grad, fm.positions[name], cw @ (resid[:, None] * self.unv_T[name]))

        return ll, grad


def observed_loglik(theta: ParamVector, data: Dataset) -> float:
    """Observed-data log-likelihood of the whole cohort."""
    theta.validate(data.spec)
    ll, _ = _LoglikWorkspace(data).loglik_and_grad(theta)
    return ll


def loglik_gradient(theta: ParamVector, data: Dataset) -> np.ndarray:
    """Analytic gradient of the observed-data log-likelihood (flat layout)."""
    theta.validate(data.spec)
    _, g = _LoglikWorkspace(data).loglik_and_grad(theta)
    return g


def _single_record_dataset(record: Record, spec: ModelSpec) -> Dataset:
    return Dataset([record], spec)


def score_validated(theta: ParamVector, record: Record, spec: ModelSpec) -> np.ndarray:
    """Score vector of one validated record (flat θ layout, beta first)."""
    if record.v != 1:
        raise InvalidInput("record is not validated")
    return loglik_gradient(theta, _single_record_dataset(record, spec))


def score_unvalidated(theta: ParamVector, record: Record, spec: ModelSpec) -> np.ndarray:
    """Score vector of one unvalidated record: the posterior-weighted average
    of complete-data scores over the four possible (y, x) values."""
    if record.v != 0:
        raise InvalidInput("record is validated")
    cond_ok = _stratum_mass(theta, spec, record) > 0.0
    if not cond_ok:
        raise DegenerateStratum(
            f"stratum (y*={record.ystar}, x*={record.xstar}, z={record.z}) has zero model probability"
        )
    return loglik_gradient(theta, _single_record_dataset(record, spec))


def _stratum_mass(theta, spec, record) -> float:
    from .model import log_joint_table

    table = np.exp(log_joint_table(theta.with_z_marginal(np.full(spec.n_levels, 1.0 / spec.n_levels)),
                                   spec, include_z=False))
    return float(table[record.z, record.ystar, record.xstar].sum())


def default_init(data: Dataset) -> ParamVector:
    """Deterministic start: zero coefficients, intercepts from marginal rates."""
    spec = data.spec

    def smoothed_logit(values):
        k, n = float(np.sum(values)), float(len(values))
        p = (k + 0.5) / (n + 1.0)
        return float(np.log(p / (1.0 - p)))

    val = data.v == 1
    blocks = {}
    observed = {"ystar": data.ystar, "xstar": data.xstar,
                "y": data.y[val], "x": data.x[val]}
    for name in SUBMODELS:
        coefs = np.zeros(len(spec.terms(name)))
        coefs[spec.terms(name).index("1")] = smoothed_logit(observed[name])
        blocks[name] = coefs
    bx = spec.beta_term_index
    return ParamVector(
        beta=blocks["y"][bx],
        eta_ystar=blocks["ystar"],
        eta_xstar=blocks["xstar"],
        eta_y=np.delete(blocks["y"], bx),
        eta_x=blocks["x"],
        z_marginal=data.z_frequencies(),
    )


def fit_mle(
    data: Dataset,
    init: ParamVector | None = None,
    *,
    gtol: float = GRAD_TOL,
    rel_tol: float = RELF_TOL,
    max_iter: int = MAX_ITER,
    separation_bound: float = SEPARATION_BOUND,
    compute_information: bool = False,
) -> FitResult:
    """Maximize the observed-data log-likelihood by BFGS ascent.

    Converges when the gradient max-norm drops to ``gtol`` or the relative
    log-likelihood change drops to ``rel_tol``.  Raises ``SeparationDetected``
    if any coefficient leaves ``[-separation_bound, separation_bound]`` and
    ``MaxIterations`` past ``max_iter`` steps.
    """
    if data.n_validated == 0:
        raise InvalidInput("fitting needs at least one validated record")
    spec = data.spec
    z_marginal = data.z_frequencies()
    if init is None:
        init = default_init(data)
    init.validate(spec)

    ws = _LoglikWorkspace(data)

    def phi(vec):
        ll, g = ws.loglik_and_grad(ParamVector.from_flat(vec, spec))
        return -ll, -g

    x = init.to_flat()
    f, g = phi(x)
    H = np.eye(spec.n_params)
    converged = False
    rel_change = np.inf
    n_iter = 0

    while True:
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= gtol:
            converged = True
            break
        if n_iter >= max_iter:
            raise MaxIterations(f"no convergence in {max_iter} iterations (|g|={gnorm:.3g})")
        n_iter += 1

        d = -H @ g
        if d @ g >= 0.0:  # not a descent direction: reset curvature
            H = np.eye(spec.n_params)
            d = -g
        slope = float(d @ g)

        # cap the move on the logit scale so one early jump cannot trip
        # the separation guard while the optimum is still interior
        dmax = float(np.max(np.abs(d)))
        step, accepted = min(1.0, 2.0 / dmax) if dmax > 2.0 else 1.0, False
        while step > 2.0 ** -45:
            x_new = x + step * d
            try:
                f_new, g_new = phi(x_new)
            except NonFiniteLikelihood:
                step *= 0.5
                continue
            if f_new <= f + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break  # stalled; report non-convergence honestly

        if np.max(np.abs(x_new)) > separation_bound:
            worst = int(np.argmax(np.abs(x_new)))
            raise SeparationDetected(
                f"coefficient {spec.param_names()[worst]!r} exceeded ±{separation_bound:g}"
            )

        s = x_new - x
        yv = g_new - g
        sy = float(s @ yv)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(yv) + 1e-300):
            rho = 1.0 / sy
            I = np.eye(spec.n_params)
            H = (I - rho * np.outer(s, yv)) @ H @ (I - rho * np.outer(yv, s)) + rho * np.outer(s, s)

        rel_change = abs(f_new - f) / max(1.0, abs(f))
        x, f, g = x_new, f_new, g_new
        if rel_change <= rel_tol:
            converged = True
            break

    theta_hat = ParamVector.from_flat(x, spec, z_marginal=z_marginal)
    info = None
    if compute_information:
        info = observed_information(theta_hat, data)
    return FitResult(
        theta_hat=theta_hat,
        loglik=-f,
        gradient_norm=float(np.max(np.abs(g))),
        converged=converged,
        n_iter=n_iter,
        rel_change=float(rel_change),
        information_at_mle=info,
    )


def observed_information(theta: ParamVector, data: Dataset) -> np.ndarray:
    """Negative Hessian of the log-likelihood via central differences of the
    analytic gradient.  Raises ``SingularInformation`` when not invertible."""
    spec = data.spec
    ws = _LoglikWorkspace(data)
    x0 = theta.to_flat()
    p = x0.shape[0]
    H = np.zeros((p, p))
    for j in range(p):
        h = 1e-5 * max(1.0, abs(x0[j]))
        xp, xm = x0.copy(), x0.copy()
        xp[j] += h
        xm[j] -= h
        _, gp = ws.loglik_and_grad(ParamVector.from_flat(xp, spec))
        _, gm = ws.loglik_and_grad(ParamVector.from_flat(xm, spec))
        H[:, j] = (gp - gm) / (2.0 * h)
    info = -(H + H.T) / 2.0
    eig = np.linalg.eigvalsh(info)
    if eig[0] <= 0.0 or eig[-1] / eig[0] > 1e12:
        raise SingularInformation("observed information matrix is (near) singular")
    return info
