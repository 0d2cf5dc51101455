"""Expected Fisher information of a candidate audit design.

Each stratum contributes two terms: validated subjects carry the
complete-data score outer product, unvalidated subjects the outer product
of the conditional-expectation score.  Writing ``pi_k`` for the sampling
probability of stratum ``k``,

    I(design) = sum_k  pi_k * A_k + (1 - pi_k) * B_k

with ``A_k`` and ``B_k`` fixed per-stratum matrices given the parameters.
That decomposition lets a grid of thousands of candidate designs be scored
as one batched linear-algebra pass.

``weighting`` picks the stratum weights: ``"observed"`` (default) uses the
realized Phase I proportions ``N_k / N`` (the conditional-on-strata form),
``"expected"`` uses the model's own stratum probabilities.

The reported quantity is the large-sample variance of the target log odds
ratio: ``1 / (N * s)`` where ``s`` is the Schur complement of the nuisance
block in the information matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DegenerateStratum, InvalidInput, SingularInformation
from .model import (
    SUBMODELS,
    ModelSpec,
    ParamVector,
    StratumTable,
    log_joint_table,
    logistic,
    support_table,
)

COND_LIMIT = 1e12


@dataclass(frozen=True)
class Design:
    """Phase II allocation per stratum, bound to its Phase I table."""

    allocation: tuple[int, ...]
    strata: StratumTable

    def __post_init__(self):
        alloc = tuple(int(a) for a in self.allocation)
        object.__setattr__(self, "allocation", alloc)
        if len(alloc) != self.strata.n_strata:
            raise InvalidInput("allocation length does not match stratum table")
        for a, c in zip(alloc, self.strata.counts):
            if a < 0 or a > c:
                raise InvalidInput(f"allocation {a} outside [0, {c}]")

    @property
    def n(self) -> int:
        return sum(self.allocation)

    def pis(self) -> np.ndarray:
        """Per-stratum sampling probabilities (0 where the stratum is empty)."""
        counts = self.strata.counts_array().astype(float)
        alloc = np.asarray(self.allocation, dtype=float)
        return np.divide(alloc, counts, out=np.zeros_like(alloc), where=counts > 0)

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "allocation": list(self.allocation),
            "pis": [float(p) for p in self.pis()],
            **self.strata.to_json_dict(),
        }


@dataclass(frozen=True)
class InformationMatrix:
    """Symmetric information matrix with coordinate labels (beta first)."""

    matrix: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", m)
        if m.shape != (len(self.names), len(self.names)):
            raise InvalidInput("information matrix shape does not match labels")
        if not np.allclose(m, m.T, atol=1e-10):
            raise InvalidInput("information matrix is not symmetric")
        if np.linalg.eigvalsh(m)[0] < -1e-8:
            raise InvalidInput("information matrix is not positive semidefinite")

    @property
    def beta_index(self) -> int:
        return self.names.index("beta")


def complete_score_table(theta: ParamVector, spec: ModelSpec) -> np.ndarray:
    """Complete-data score vectors over all support cells.

    Shape (L, 2, 2, 2, 2, p) with cell axes (z, y*, x*, y, x) and the flat
    parameter layout (beta first) on the last axis.
    """
    theta.validate(spec)
    z_idx, ystar, xstar, y, x = support_table(spec)
    obs = {"ystar": ystar, "xstar": xstar, "y": y, "x": x}
    p = spec.n_params
    scores = np.zeros((z_idx.shape[0], p))
    from .likelihood import _FlatMap

    fm = _FlatMap(spec)
    for name in SUBMODELS:
        T = spec.design_matrix(name, ystar, xstar, y, x, z_idx)
        resid = obs[name] - logistic(T @ theta.coefficients(name, spec))
        scores[:, fm.positions[name]] += resid[:, None] * T
    return scores.reshape(spec.n_levels, 2, 2, 2, 2, p)


class InformationKernel:
    """Per-stratum information components for fast design scoring."""

    def __init__(self, theta: ParamVector, spec: ModelSpec, strata: StratumTable,
                 weighting: str = "observed"):
        if weighting not in ("observed", "expected"):
            raise InvalidInput(f"unknown weighting {weighting!r}")
        self.theta, self.spec, self.strata, self.weighting = theta, spec, strata, weighting
        self.names = tuple(["beta"] + spec.param_names()[1:])

        scores = complete_score_table(theta, spec)  # (L,2,2,2,2,p)
        joint_z = np.exp(log_joint_table(theta, spec, include_z=False))  # (L,2,2,2,2)
        marg_z = joint_z.sum(axis=(3, 4))  # (L,2,2): P(y*,x* | z)
        p = spec.n_params
        K = strata.n_strata
        counts = strata.counts_array().astype(float)
        N = counts.sum()

        if weighting == "expected":
            if theta.z_marginal is None:
                raise InvalidInput("expected weighting needs z_marginal on the parameters")
            stratum_w = np.array(
                [theta.z_marginal[z] * marg_z[z, ys, xs] for ys, xs, z in strata.keys]
            )
        else:
            stratum_w = counts / N

        self.A = np.zeros((K, p, p))
        self.B = np.zeros((K, p, p))
        self._zero_mass = np.zeros(K, dtype=bool)
        for k, (ys, xs, z) in enumerate(strata.keys):
            mass = marg_z[z, ys, xs]
            if mass <= 0.0:
                self._zero_mass[k] = True
                continue
            cond = joint_z[z, ys, xs] / mass  # (2,2) over (y, x)
            S = scores[z, ys, xs].reshape(4, p)  # complete-data scores
            w = cond.reshape(4)
            self.A[k] = (S * w[:, None]).T @ S * stratum_w[k]
            sbar = w @ S
            self.B[k] = np.outer(sbar, sbar) * stratum_w[k]
        self.C0 = self.B.sum(axis=0)
        self.D = self.A - self.B
        self.N = N

    def _check_degenerate(self, allocation):
        alloc = np.asarray(allocation)
        bad = self._zero_mass & (alloc > 0)
        if np.any(bad):
            k = int(np.argmax(bad))
            raise DegenerateStratum(
                f"stratum {self.strata.keys[k]} has positive allocation but zero model probability"
            )

    def information(self, design: Design) -> np.ndarray:
        self._check_degenerate(design.allocation)
        pis = design.pis()
        return self.C0 + np.einsum("k,kpq->pq", pis, self.D)

    def information_batch(self, allocations: np.ndarray) -> np.ndarray:
        """Information matrices for allocation rows, shape (c, p, p)."""
        counts = self.strata.counts_array().astype(float)
        pis = np.divide(allocations, counts[None, :],
                        out=np.zeros_like(allocations, dtype=float), where=counts[None, :] > 0)
        return self.C0[None] + np.einsum("ck,kpq->cpq", pis, self.D)

    def var_beta_batch(self, allocations: np.ndarray) -> np.ndarray:
        """Variance of the target estimate per allocation row.

        Degenerate candidates (singular or ill-conditioned nuisance block,
        non-positive effective information) come back as ``inf`` rather than
        raising, so grid scans can skip them.
        """
        allocations = np.asarray(allocations, dtype=float)
        info = self.information_batch(allocations)
        a = info[:, 0, 0]
        b = info[:, 1:, 0]
        eta = info[:, 1:, 1:]
        out = np.full(allocations.shape[0], np.inf)
        eig = np.linalg.eigvalsh(eta)
        good = (eig[:, 0] > 0) & (eig[:, -1] <= COND_LIMIT * eig[:, 0])
        if np.any(good):
            sol = np.linalg.solve(eta[good], b[good][..., None])[..., 0]
            schur = a[good] - np.einsum("cj,cj->c", b[good], sol)
            vals = np.full(schur.shape[0], np.inf)
            pos = schur > 0
            vals[pos] = 1.0 / (self.N * schur[pos])
            out[good] = vals
        zero_alloc_on_zero_mass = np.any(
            self._zero_mass[None, :] & (allocations > 0), axis=1
        )
        out[zero_alloc_on_zero_mass] = np.inf
        return out


def fisher_information(theta: ParamVector, spec: ModelSpec, design: Design,
                       weighting: str = "observed") -> InformationMatrix:
    """Assemble the per-subject expected information for one design."""
    kernel = InformationKernel(theta, spec, design.strata, weighting)
    m = kernel.information(design)
    return InformationMatrix(matrix=(m + m.T) / 2.0, names=kernel.names)


def var_beta(theta: ParamVector, spec: ModelSpec, design: Design,
             weighting: str = "observed") -> float:
    """Large-sample variance of the target log odds ratio under a design."""
    kernel = InformationKernel(theta, spec, design.strata, weighting)
    kernel._check_degenerate(design.allocation)
    info = kernel.information(design)
    return var_beta_from_information(info, kernel.N)


def var_beta_from_information(info: np.ndarray, n_phase1: float) -> float:
    """Schur-complement variance from an assembled information matrix."""
    eta = info[1:, 1:]
    b = info[1:, 0]
    eig = np.linalg.eigvalsh((eta + eta.T) / 2.0)
    if eig[0] <= 0.0 or eig[-1] > COND_LIMIT * eig[0]:
        raise SingularInformation("nuisance block of the information matrix is not invertible")
    c, low = cho_factor((eta + eta.T) / 2.0)
    schur = info[0, 0] - b @ cho_solve((c, low), b)
    if schur <= 0.0:
        raise SingularInformation("effective information for the target parameter is not positive")
    return float(1.0 / (n_phase1 * schur))
