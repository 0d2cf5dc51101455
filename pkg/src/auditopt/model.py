"""Probability model for error-prone binary outcome/exposure data.

The joint law of one subject factorizes into four logistic sub-models plus
the marginal of the error-free covariate strata::

    P(Y*, X*, Y, X, Z) = P(Y*|X*,Y,X,Z) P(X*|Y,X,Z) P(Y|X,Z) P(X|Z) P(Z)

``Y`` and ``X`` are the true outcome and exposure, ``Y*`` and ``X*`` their
error-prone database surrogates, and ``Z`` a discrete covariate level.  The
coefficient of the ``x`` term in the outcome model is the log odds ratio
``beta`` that the whole design machinery tries to estimate precisely; all
other coefficients are nuisance blocks.

Predictors of each sub-model are declared as an explicit term list (strings
like ``"1"``, ``"xstar"``, ``"x:z1"``) so that interaction terms can be
added or dropped with a one-line config change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateRate, DegenerateStratum, InvalidInput

SUBMODELS = ("ystar", "xstar", "y", "x")

# Factors each sub-model may condition on (its own variable is excluded).
_ALLOWED_FACTORS = {
    "ystar": {"xstar", "y", "x"},
    "xstar": {"y", "x"},
    "y": {"x"},
    "x": set(),
}


def logistic(u):
    """Numerically safe standard logistic function."""
    arr = np.asarray(u, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    eu = np.exp(arr[~pos])
    out[~pos] = eu / (1.0 + eu)
    return float(out[0]) if scalar else out


def log_bernoulli(w, u):
    """log P(W=w) for a logistic model with linear predictor ``u``."""
    return w * u - np.logaddexp(0.0, u)


def _parse_term(term: str, n_z_features: int, allowed: set[str], submodel: str):
    """Split a term string into factor codes, validating the grammar."""
    if term == "1":
        return ()
    factors = term.split(":")
    for f in factors:
        if f in ("ystar", "xstar", "y", "x"):
            if f not in allowed:
                raise InvalidInput(f"term {term!r} not allowed in {submodel!r} sub-model")
        elif f.startswith("z") and f[1:].isdigit():
            j = int(f[1:])
            if not 1 <= j <= n_z_features:
                raise InvalidInput(f"term {term!r} references missing z feature (have {n_z_features})")
        else:
            raise InvalidInput(f"unknown factor {f!r} in term {term!r}")
    return tuple(factors)


@dataclass(frozen=True)
class ModelSpec:
    """Term lists of the four sub-models over a fixed set of Z levels.

    ``z_levels`` is the ordered list of distinct covariate levels; each level
    is a (possibly empty) tuple of real-valued features referenced by terms
    ``z1``, ``z2``, ...  Design strata index into this list.
    """

    z_levels: tuple[tuple[float, ...], ...]
    terms_ystar: tuple[str, ...]
    terms_xstar: tuple[str, ...]
    terms_y: tuple[str, ...]
    terms_x: tuple[str, ...]

    def __post_init__(self):
        if len(self.z_levels) == 0:
            raise InvalidInput("z_levels must be non-empty")
        object.__setattr__(self, "z_levels", tuple(tuple(float(v) for v in lv) for lv in self.z_levels))
        widths = {len(lv) for lv in self.z_levels}
        if len(widths) != 1:
            raise InvalidInput("all z levels must have the same number of features")
        if len(set(self.z_levels)) != len(self.z_levels):
            raise InvalidInput("z_levels must be distinct")
        for name in SUBMODELS:
            terms = tuple(self.terms(name))
            object.__setattr__(self, f"terms_{name}", terms)
            if len(terms) == 0:
                raise InvalidInput(f"{name!r} sub-model needs at least one term")
            if "1" not in terms:
                raise InvalidInput(f"{name!r} sub-model needs an intercept term")
            if len(set(terms)) != len(terms):
                raise InvalidInput(f"duplicate terms in {name!r} sub-model")
            for t in terms:
                _parse_term(t, self.n_z_features, _ALLOWED_FACTORS[name], name)
        if self.terms_y.count("x") != 1:
            raise InvalidInput("outcome sub-model must contain exactly one bare 'x' term")

    @property
    def n_z_features(self) -> int:
        return len(self.z_levels[0])

    @property
    def n_levels(self) -> int:
        return len(self.z_levels)

    def terms(self, submodel: str) -> tuple[str, ...]:
        return getattr(self, f"terms_{submodel}")

    @property
    def beta_term_index(self) -> int:
        """Position of the target-coefficient term inside the outcome model."""
        return self.terms_y.index("x")

    @property
    def n_params(self) -> int:
        return sum(len(self.terms(s)) for s in SUBMODELS)

    def param_names(self) -> list[str]:
        """Flat coordinate labels, beta first, then the nuisance blocks."""
        names = ["beta"]
        for s in SUBMODELS:
            for i, t in enumerate(self.terms(s)):
                if s == "y" and i == self.beta_term_index:
                    continue
                names.append(f"{s}:{t}")
        return names

    def z_feature_matrix(self) -> np.ndarray:
        return np.asarray(self.z_levels, dtype=float).reshape(self.n_levels, self.n_z_features)

    def design_matrix(self, submodel, ystar, xstar, y, x, z_idx) -> np.ndarray:
        """Evaluate a sub-model's terms over parallel config arrays."""
        ystar, xstar, y, x = (np.asarray(a, dtype=float) for a in (ystar, xstar, y, x))
        z_idx = np.asarray(z_idx, dtype=int)
        n = z_idx.shape[0]
        zf = self.z_feature_matrix()[z_idx]
        values = {"ystar": ystar, "xstar": xstar, "y": y, "x": x}
        cols = []
        for term in self.terms(submodel):
            col = np.ones(n)
            if term != "1":
                for f in term.split(":"):
                    col = col * (values[f] if f in values else zf[:, int(f[1:]) - 1])
            cols.append(col)
        return np.column_stack(cols)

    def to_json_dict(self) -> dict:
        return {
            "z_levels": [list(lv) for lv in self.z_levels],
            "terms": {s: list(self.terms(s)) for s in SUBMODELS},
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ModelSpec":
        try:
            terms = data["terms"]
            return cls(
                z_levels=tuple(tuple(lv) for lv in data["z_levels"]),
                terms_ystar=tuple(terms["ystar"]),
                terms_xstar=tuple(terms["xstar"]),
                terms_y=tuple(terms["y"]),
                terms_x=tuple(terms["x"]),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidInput(f"malformed model spec: {exc}") from exc

    @classmethod
    def main_effects(cls, z_levels=((),)) -> "ModelSpec":
        """Default spec: intercepts plus all main effects in every sub-model."""
        z_levels = tuple(tuple(lv) for lv in z_levels)
        z_terms = tuple(f"z{j + 1}" for j in range(len(z_levels[0])))
        return cls(
            z_levels=z_levels,
            terms_ystar=("1", "xstar", "y", "x") + z_terms,
            terms_xstar=("1", "y", "x") + z_terms,
            terms_y=("1", "x") + z_terms,
            terms_x=("1",) + z_terms,
        )


@dataclass
class ParamVector:
    """Full parameter vector: target log OR plus the four nuisance blocks.

    ``z_marginal`` (P(Z = z) per level) is carried alongside but is treated
    as fixed, not as a model parameter; it is only needed by operations that
    integrate over Z.
    """

    beta: float
    eta_ystar: np.ndarray
    eta_xstar: np.ndarray
    eta_y: np.ndarray
    eta_x: np.ndarray
    z_marginal: np.ndarray | None = None

    def __post_init__(self):
        for name in ("eta_ystar", "eta_xstar", "eta_y", "eta_x"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).ravel())
        self.beta = float(self.beta)
        if self.z_marginal is not None:
            self.z_marginal = np.asarray(self.z_marginal, dtype=float).ravel()

    def validate(self, spec: ModelSpec) -> "ParamVector":
        blocks = {
            "eta_ystar": len(spec.terms_ystar),
            "eta_xstar": len(spec.terms_xstar),
            "eta_y": len(spec.terms_y) - 1,
            "eta_x": len(spec.terms_x),
        }
        for name, want in blocks.items():
            got = getattr(self, name).shape[0]
            if got != want:
                raise InvalidInput(f"{name} has {got} coefficients, spec wants {want}")
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidInput(f"{name} contains non-finite values")
        if not math.isfinite(self.beta):
            raise InvalidInput("beta is not finite")
        if self.z_marginal is not None:
            if self.z_marginal.shape[0] != spec.n_levels:
                raise InvalidInput("z_marginal length does not match z_levels")
            if np.any(self.z_marginal < 0) or np.any(self.z_marginal > 1):
                raise InvalidInput("z_marginal entries must lie in [0, 1]")
            if abs(self.z_marginal.sum() - 1.0) > 1e-12:
                raise InvalidInput("z_marginal must sum to 1")
        return self

    def coefficients(self, submodel: str, spec: ModelSpec) -> np.ndarray:
        """Coefficient vector of one sub-model, beta spliced into the outcome."""
        if submodel == "y":
            return np.insert(self.eta_y, spec.beta_term_index, self.beta)
        return getattr(self, f"eta_{submodel}")

    def to_flat(self) -> np.ndarray:
        return np.concatenate(([self.beta], self.eta_ystar, self.eta_xstar, self.eta_y, self.eta_x))

    @classmethod
    def from_flat(cls, vec, spec: ModelSpec, z_marginal=None) -> "ParamVector":
        vec = np.asarray(vec, dtype=float).ravel()
        if vec.shape[0] != spec.n_params:
            raise InvalidInput(f"flat vector has {vec.shape[0]} entries, spec wants {spec.n_params}")
        sizes = [len(spec.terms_ystar), len(spec.terms_xstar), len(spec.terms_y) - 1, len(spec.terms_x)]
        cuts = np.cumsum([1] + sizes)
        return cls(
            beta=vec[0],
            eta_ystar=vec[cuts[0]:cuts[1]],
            eta_xstar=vec[cuts[1]:cuts[2]],
            eta_y=vec[cuts[2]:cuts[3]],
            eta_x=vec[cuts[3]:cuts[4]],
            z_marginal=z_marginal,
        )

    def with_z_marginal(self, z_marginal) -> "ParamVector":
        return replace(self, z_marginal=np.asarray(z_marginal, dtype=float))

    def to_json_dict(self) -> dict:
        return {
            "beta": self.beta,
            "eta_ystar": self.eta_ystar.tolist(),
            "eta_xstar": self.eta_xstar.tolist(),
            "eta_y": self.eta_y.tolist(),
            "eta_x": self.eta_x.tolist(),
            "z_marginal": None if self.z_marginal is None else self.z_marginal.tolist(),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ParamVector":
        try:
            return cls(
                beta=data["beta"],
                eta_ystar=data["eta_ystar"],
                eta_xstar=data["eta_xstar"],
                eta_y=data["eta_y"],
                eta_x=data["eta_x"],
                z_marginal=data.get("z_marginal"),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidInput(f"malformed parameter vector: {exc}") from exc


@dataclass(frozen=True)
class ErrorRateSpec:
    """Baseline false/true positive rates of one error-prone variable."""

    fpr: float
    tpr: float
    target: str = "exposure"

    def __post_init__(self):
        if self.target not in ("outcome", "exposure"):
            raise InvalidInput(f"unknown target {self.target!r}")
        for name in ("fpr", "tpr"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and 0.0 <= v <= 1.0):
                raise InvalidInput(f"{name} must be a probability, got {v!r}")
            if v in (0.0, 1.0):
                raise DegenerateRate(f"{name} of {v} has an infinite logit")


def fpr_tpr_to_coefficients(spec: ErrorRateSpec) -> tuple[float, float]:
    """Map baseline error rates to (intercept, slope-on-the-true-value).

    The intercept is the logit of the baseline false positive rate; adding
    the slope gives the logit of the baseline true positive rate.
    """
    intercept = -math.log((1.0 - spec.fpr) / spec.fpr)
    slope = -math.log((1.0 - spec.tpr) / spec.tpr) - intercept
    return intercept, slope


def prevalence_to_intercept(p0: float) -> float:
    """Logit of a baseline prevalence, used as a sub-model intercept."""
    if not (isinstance(p0, (int, float)) and math.isfinite(p0) and 0.0 <= p0 <= 1.0):
        raise InvalidInput(f"prevalence must be a probability, got {p0!r}")
    if p0 in (0.0, 1.0):
        raise DegenerateRate(f"prevalence of {p0} has an infinite logit")
    return math.log(p0 / (1.0 - p0))


@dataclass(frozen=True)
class StratumTable:
    """Phase I counts over the sampling strata (Y*, X*, Z-level).

    Keys are ``(ystar, xstar, z_index)`` tuples in a caller-chosen stable
    order; every (Y*, X*) pair must be present for each Z level that appears
    (zero counts are fine).
    """

    keys: tuple[tuple[int, int, int], ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        keys = tuple((int(y), int(x), int(z)) for y, x, z in self.keys)
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "keys", keys)
        object.__setattr__(self, "counts", counts)
        if len(keys) != len(counts):
            raise InvalidInput("keys and counts differ in length")
        if len(set(keys)) != len(keys):
            raise InvalidInput("stratum keys must be unique")
        if any(c < 0 for c in counts):
            raise InvalidInput("stratum counts must be non-negative")
        if sum(counts) <= 0:
            raise InvalidInput("total Phase I size must be positive")
        for ystar, xstar, z in keys:
            if ystar not in (0, 1) or xstar not in (0, 1):
                raise InvalidInput(f"binary codes must be 0/1, got key {(ystar, xstar, z)}")
        z_present = {z for _, _, z in keys}
        have = set(keys)
        for z in z_present:
            for ys in (0, 1):
                for xs in (0, 1):
                    if (ys, xs, z) not in have:
                        raise InvalidInput(f"stratum ({ys}, {xs}, {z}) missing for z level {z}")

    @property
    def n_strata(self) -> int:
        return len(self.keys)

    @property
    def total(self) -> int:
        return sum(self.counts)

    def counts_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=int)

    def index_of(self, key) -> int:
        return self.keys.index(tuple(key))

    def z_frequencies(self, n_levels: int) -> np.ndarray:
        """Empirical P(Z) from the Phase I margins."""
        freq = np.zeros(n_levels)
        for (_, _, z), c in zip(self.keys, self.counts):
            if z >= n_levels:
                raise InvalidInput(f"stratum z index {z} out of range for {n_levels} levels")
            freq[z] += c
        return freq / self.total

    def to_json_dict(self) -> dict:
        return {
            "strata": [
                {"ystar": k[0], "xstar": k[1], "z": k[2], "count": c}
                for k, c in zip(self.keys, self.counts)
            ]
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "StratumTable":
        try:
            rows = data["strata"]
            return cls(
                keys=tuple((r["ystar"], r["xstar"], r["z"]) for r in rows),
                counts=tuple(r["count"] for r in rows),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidInput(f"malformed stratum table: {exc}") from exc

    @classmethod
    def from_counts(cls, counts_by_key: dict) -> "StratumTable":
        keys = tuple(tuple(k) for k in counts_by_key)
        return cls(keys=keys, counts=tuple(counts_by_key[k] for k in counts_by_key))

    @classmethod
    def for_z_levels(cls, n_levels: int, counts) -> "StratumTable":
        """Canonical key order: z slowest, then (Y*, X*) in binary order."""
        keys = tuple((ys, xs, z) for z in range(n_levels) for ys in (0, 1) for xs in (0, 1))
        counts = tuple(int(c) for c in counts)
        if len(counts) != len(keys):
            raise InvalidInput(f"need {len(keys)} counts for {n_levels} z levels")
        return cls(keys=keys, counts=counts)


# ---------------------------------------------------------------------------
# Support enumeration
# ---------------------------------------------------------------------------

def support_table(spec: ModelSpec):
    """All (z, y*, x*, y, x) support cells as parallel index arrays.

    Cell order: z slowest, then y*, x*, y, x each in binary order.  The
    full support has ``16 * n_levels`` cells.
    """
    L = spec.n_levels
    grid = np.indices((L, 2, 2, 2, 2)).reshape(5, -1)
    z_idx, ystar, xstar, y, x = grid
    return z_idx, ystar, xstar, y, x


def log_joint_table(theta: ParamVector, spec: ModelSpec, include_z: bool = True) -> np.ndarray:
    """log P(y*, x*, y, x, z) over the full support, shape (L, 2, 2, 2, 2).

    With ``include_z=False`` the Z marginal is left out, giving the joint
    conditional on the stratum's covariate level.
    """
    theta.validate(spec)
    z_idx, ystar, xstar, y, x = support_table(spec)
    obs = {"ystar": ystar, "xstar": xstar, "y": y, "x": x}
    total = np.zeros(z_idx.shape[0])
    for name in SUBMODELS:
        T = spec.design_matrix(name, ystar, xstar, y, x, z_idx)
        u = T @ theta.coefficients(name, spec)
        total += log_bernoulli(obs[name], u)
    if include_z:
        if theta.z_marginal is None:
            raise InvalidInput("z_marginal is required to weight the joint over z levels")
        with np.errstate(divide="ignore"):
            total += np.log(theta.z_marginal)[z_idx]
    return total.reshape(spec.n_levels, 2, 2, 2, 2)


def joint_probability(theta: ParamVector, spec: ModelSpec, ystar, xstar, y, x, z) -> float:
    """P(Y*=y*, X*=x*, Y=y, X=x, Z=z-th level) under the model."""
    for name, v in (("ystar", ystar), ("xstar", xstar), ("y", y), ("x", x)):
        if v not in (0, 1):
            raise InvalidInput(f"{name} must be 0 or 1, got {v!r}")
    if not 0 <= z < spec.n_levels:
        raise InvalidInput(f"z index {z} out of range")
    table = log_joint_table(theta, spec)
    return float(np.exp(table[z, ystar, xstar, y, x]))


def phase2_conditional_table(theta: ParamVector, spec: ModelSpec):
    """P(y, x | y*, x*, z) and the stratum marginals P(y*, x* | z).

    Returns ``(cond, marginal)`` with shapes (L, 2, 2, 2, 2) and (L, 2, 2);
    conditional entries of zero-mass strata are left as zeros.
    """
    joint = np.exp(log_joint_table(theta, spec, include_z=False))
    marginal = joint.sum(axis=(3, 4))
    with np.errstate(invalid="ignore", divide="ignore"):
        cond = joint / marginal[:, :, :, None, None]
    cond[~np.isfinite(cond)] = 0.0
    return cond, marginal


def phase2_given_phase1(theta: ParamVector, spec: ModelSpec, ystar, xstar, z) -> np.ndarray:
    """Distribution of the true (y, x) within one Phase I stratum, shape (2, 2)."""
    if ystar not in (0, 1) or xstar not in (0, 1):
        raise InvalidInput("ystar and xstar must be 0 or 1")
    if not 0 <= z < spec.n_levels:
        raise InvalidInput(f"z index {z} out of range")
    cond, marginal = phase2_conditional_table(theta, spec)
    if marginal[z, ystar, xstar] <= 0.0:
        raise DegenerateStratum(f"stratum (y*={ystar}, x*={xstar}, z={z}) has zero model probability")
    return cond[z, ystar, xstar]
