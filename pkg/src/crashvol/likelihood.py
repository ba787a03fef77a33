"""Multinomial logit and mixed logit likelihoods for crash-severity outcomes.

Utilities are linear in outcome-specific terms with the base outcome fixed
at zero. Random coefficients are realized per event and draw as::

    beta_n = beta + xi . Z_n + sigma * exp(gamma . B_n) * v

where ``v`` is a standardized draw of the term's mixing distribution. With
empty ``Z`` and ``B`` this is the plain random-parameter logit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .quasirandom import DISTRIBUTIONS, DrawConfig, build_draws, transform

SEVERITY_LEVELS = ("TS", "MC", "PRC", "SC")
SEVERITY_NAMES = {
    "TS": "low-risk tire strike",
    "MC": "minor crash",
    "PRC": "police-reportable crash",
    "SC": "most severe crash",
}


@dataclass(frozen=True)
class Term:
    variable: str
    outcome: str
    random: bool = False
    distribution: str = "normal"
    het_mean: tuple[str, ...] = ()
    het_var: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "het_mean", tuple(self.het_mean))
        object.__setattr__(self, "het_var", tuple(self.het_var))
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unsupported distribution {self.distribution!r}")
        if not self.random and (self.het_mean or self.het_var):
            raise ValueError(f"{self.label}: heterogeneity terms require a random parameter")

    @property
    def label(self) -> str:
        return f"{self.variable}[{self.outcome}]"

    def as_fixed(self) -> Term:
        return Term(self.variable, self.outcome)

    def to_dict(self) -> dict:
        d = {"variable": self.variable, "outcome": self.outcome, "random": self.random}
        if self.random:
            d.update(distribution=self.distribution, het_mean=list(self.het_mean), het_var=list(self.het_var))
        return d


@dataclass(frozen=True)
class ModelSpec:
    """Variables-to-severity-function mapping.

    ``outcomes[0]`` is the base outcome. Parameters pack as constants (one
    per non-base outcome), term coefficients in declaration order, then
    one scale per random term, het-mean and het-variance coefficients.
    """

    terms: tuple[Term, ...] = ()
    outcomes: tuple[str, ...] = SEVERITY_LEVELS
    constants: bool = True
    columns: Mapping[str, str | None] = field(
        default_factory=lambda: {"event_id": "event_id", "outcome": "severity", "weight": None}
    )

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        if len(self.outcomes) < 2 or len(set(self.outcomes)) != len(self.outcomes):
            raise ValueError("need at least two distinct outcomes")
        seen = set()
        for t in self.terms:
            if t.outcome not in self.outcomes:
                raise ValueError(f"{t.label}: unknown outcome {t.outcome!r}")
            if t.outcome == self.base:
                raise ValueError(f"{t.label}: terms cannot enter the base outcome")
            key = (t.variable, t.outcome)
            if key in seen:
                raise ValueError(f"duplicate term {t.label}")
            seen.add(key)

    @property
    def base(self) -> str:
        return self.outcomes[0]

    @property
    def n_outcomes(self) -> int:
        return len(self.outcomes)

    @property
    def random_terms(self) -> list[Term]:
        return [t for t in self.terms if t.random]

    @property
    def constant_outcomes(self) -> tuple[str, ...]:
        return self.outcomes[1:] if self.constants else ()

    @property
    def n_het_mean(self) -> int:
        return sum(len(t.het_mean) for t in self.random_terms)

    @property
    def n_het_var(self) -> int:
        return sum(len(t.het_var) for t in self.random_terms)

    @property
    def n_params(self) -> int:
        return (len(self.constant_outcomes) + len(self.terms) + len(self.random_terms)
                + self.n_het_mean + self.n_het_var)

    def parameter_names(self) -> list[str]:
        names = [f"constant[{o}]" for o in self.constant_outcomes]
        names += [("mean " if t.random else "") + t.label for t in self.terms]
        names += [f"sd {t.label}" for t in self.random_terms]
        names += [f"het_mean {t.label}: {z}" for t in self.random_terms for z in t.het_mean]
        names += [f"het_var {t.label}: {b}" for t in self.random_terms for b in t.het_var]
        return names

    def variables(self) -> list[str]:
        out: list[str] = []
        for t in self.terms:
            for v in (t.variable, *t.het_mean, *t.het_var):
                if v not in out:
                    out.append(v)
        return out

    def fixed_counterpart(self) -> ModelSpec:
        return replace(self, terms=tuple(t.as_fixed() for t in self.terms))

    def constants_only(self) -> ModelSpec:
        return replace(self, terms=(), constants=True)

    def nests(self, other: ModelSpec) -> bool:
        """True if ``other`` is a parameter restriction of this spec."""
        return (
            other.outcomes == self.outcomes
            and (self.constants or not other.constants)
            and _terms_subset(other, self)
        )

    def to_dict(self) -> dict:
        return {
            "columns": dict(self.columns),
            "outcomes": {"levels": list(self.outcomes), "base": self.base},
            "constants": self.constants,
            "terms": [t.to_dict() for t in self.terms],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> ModelSpec:
        out = d.get("outcomes", {"levels": list(SEVERITY_LEVELS), "base": SEVERITY_LEVELS[0]})
        if isinstance(out, Mapping):
            levels = list(out["levels"])
            base = out.get("base", levels[0])
        else:
            levels, base = list(out), list(out)[0]
        if base not in levels:
            raise ValueError(f"base outcome {base!r} not among levels")
        levels.remove(base)
        terms = []
        for td in d.get("terms", []):
            terms.append(Term(
                td["variable"], td["outcome"], bool(td.get("random", False)),
                td.get("distribution", "normal"),
                tuple(td.get("het_mean", ())), tuple(td.get("het_var", ())),
            ))
        columns = {"event_id": "event_id", "outcome": "severity", "weight": None}
        columns.update(d.get("columns", {}))
        return cls(tuple(terms), (base, *levels), bool(d.get("constants", True)), columns)


def _terms_subset(small: ModelSpec, big: ModelSpec) -> bool:
    # A fixed term in `small` may be random in `big` (sigma = 0 restriction);
    # every random feature of `small` must persist in `big`.
    big_terms = {(t.variable, t.outcome): t for t in big.terms}
    for t in small.terms:
        b = big_terms.get((t.variable, t.outcome))
        if b is None:
            return False
        if t.random and not (b.random and set(t.het_mean) <= set(b.het_mean) and set(t.het_var) <= set(b.het_var)):
            return False
    return True


@dataclass(frozen=True)
class EventObservation:
    event_id: str
    chosen: str
    x: Mapping[str, float]
    weight: float = 1.0


@dataclass(frozen=True, eq=False)
class EventDataset:
    """Estimation sample: outcome labels plus named numeric columns."""

    event_ids: tuple[str, ...]
    outcome: np.ndarray
    columns: Mapping[str, np.ndarray]
    weights: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.event_ids)
        object.__setattr__(self, "event_ids", tuple(self.event_ids))
        object.__setattr__(self, "outcome", np.asarray(self.outcome, dtype=object))
        cols = {k: np.asarray(v, dtype=float) for k, v in self.columns.items()}
        object.__setattr__(self, "columns", cols)
        w = np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if len(self.outcome) != n or len(w) != n or any(len(c) != n for c in cols.values()):
            raise ValueError("dataset columns must all have one entry per event")

    def __len__(self):
        return len(self.event_ids)

    def __getitem__(self, name) -> np.ndarray:
        return self.columns[name]

    @classmethod
    def from_observations(cls, obs: Sequence[EventObservation]) -> EventDataset:
        names: list[str] = []
        for o in obs:
            names.extend(k for k in o.x if k not in names)
        cols = {k: [o.x.get(k, math.nan) for o in obs] for k in names}
        return cls(tuple(o.event_id for o in obs), [o.chosen for o in obs], cols, [o.weight for o in obs])

    def observation(self, i: int) -> EventObservation:
        return EventObservation(
            self.event_ids[i], self.outcome[i],
            {k: float(v[i]) for k, v in self.columns.items()}, float(self.weights[i]),
        )

    def subset(self, index) -> EventDataset:
        idx = np.asarray(index)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return EventDataset(
            tuple(self.event_ids[i] for i in idx), self.outcome[idx],
            {k: v[idx] for k, v in self.columns.items()}, self.weights[idx],
        )

    def with_columns(self, **cols) -> EventDataset:
        merged = dict(self.columns)
        merged.update(cols)
        return EventDataset(self.event_ids, self.outcome, merged, self.weights)

    def complete_cases(self, spec: ModelSpec) -> tuple[EventDataset, list[str]]:
        """Listwise deletion over every variable the spec references."""
        missing = [v for v in spec.variables() if v not in self.columns]
        if missing:
            raise KeyError(f"dataset has no column(s): {', '.join(missing)}")
        ok = np.ones(len(self), dtype=bool)
        for v in spec.variables():
            ok &= np.isfinite(self.columns[v])
        ok &= np.array([o in spec.outcomes for o in self.outcome], dtype=bool)
        dropped = [e for e, keep in zip(self.event_ids, ok) if not keep]
        return self.subset(ok), dropped


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """Packed parameter values bound to a spec's canonical layout."""

    spec: ModelSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.spec.n_params,):
            raise ValueError(f"expected {self.spec.n_params} parameters, got {v.shape}")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, spec: ModelSpec) -> ParameterVector:
        return cls(spec, np.zeros(spec.n_params))

    @classmethod
    def from_parts(cls, spec, constants=(), beta=(), sigma=(), xi=(), gamma=()) -> ParameterVector:
        parts = [np.atleast_1d(np.asarray(p, dtype=float)) for p in (constants, beta, sigma, xi, gamma)]
        return cls(spec, np.concatenate(parts) if spec.n_params else np.zeros(0))

    @property
    def _bounds(self):
        s = self.spec
        c = len(s.constant_outcomes)
        t = c + len(s.terms)
        j = t + len(s.random_terms)
        m = j + s.n_het_mean
        return c, t, j, m

    def parts(self):
        c, t, j, m = self._bounds
        v = self.values
        return v[:c], v[c:t], v[t:j], v[j:m], v[m:]

    @property
    def constants(self):
        return self.parts()[0]

    @property
    def beta(self):
        return self.parts()[1]

    @property
    def sigma(self):
        return self.parts()[2]

    @property
    def xi(self):
        return self.parts()[3]

    @property
    def gamma(self):
        return self.parts()[4]

    def names(self) -> list[str]:
        return self.spec.parameter_names()

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names(), self.values.tolist()))

    def _term_index(self, term) -> int:
        if isinstance(term, int):
            return term
        return self.spec.terms.index(term)

    def location(self, term) -> float:
        return float(self.beta[self._term_index(term)])

    def scale(self, term) -> float:
        t = self.spec.terms[self._term_index(term)]
        return float(self.sigma[self.spec.random_terms.index(t)])

    def het_mean(self, term) -> dict[str, float]:
        return self._het(term, "het_mean", self.xi)

    def het_var(self, term) -> dict[str, float]:
        return self._het(term, "het_var", self.gamma)

    def _het(self, term, attr, values):
        t = self.spec.terms[self._term_index(term)]
        pos = 0
        for r in self.spec.random_terms:
            names = getattr(r, attr)
            if r == t:
                return dict(zip(names, values[pos:pos + len(names)].tolist()))
            pos += len(names)
        return {}


@dataclass(frozen=True, eq=False)
class Design:
    """Dense arrays consumed by the likelihood kernels."""

    chosen: np.ndarray
    weights: np.ndarray
    X: np.ndarray
    term_out: np.ndarray
    term_rand: np.ndarray
    const_out: np.ndarray
    rand_term: np.ndarray
    Z: np.ndarray
    z_owner: np.ndarray
    B: np.ndarray
    b_owner: np.ndarray
    n_out: int


def compile_design(data: EventDataset, spec: ModelSpec) -> Design:
    """Map a spec-complete dataset onto kernel arrays.

    Raises ``ValueError`` for missing values; listwise deletion must come first.
    """
    N = len(data)
    out_index = {o: k for k, o in enumerate(spec.outcomes)}
    try:
        chosen = np.array([out_index[o] for o in data.outcome], dtype=np.int64)
    except KeyError as e:
        raise ValueError(f"outcome {e.args[0]!r} is not a level of the spec") from None

    def col(name):
        if name not in data.columns:
            raise KeyError(f"dataset has no column {name!r}")
        v = data.columns[name]
        if not np.all(np.isfinite(v)):
            raise ValueError(f"column {name!r} has missing values; apply complete_cases first")
        return v

    X = np.empty((N, len(spec.terms)))
    for i, t in enumerate(spec.terms):
        X[:, i] = col(t.variable)
    rand = spec.random_terms
    term_rand = np.array([rand.index(t) if t.random else -1 for t in spec.terms], dtype=np.int64)
    rand_term = np.array([spec.terms.index(t) for t in rand], dtype=np.int64)
    zc, zo, bc, bo = [], [], [], []
    for j, t in enumerate(rand):
        for z in t.het_mean:
            zc.append(col(z))
            zo.append(j)
        for b in t.het_var:
            bc.append(col(b))
            bo.append(j)
    return Design(
        chosen=chosen,
        weights=np.ascontiguousarray(data.weights, dtype=float),
        X=np.ascontiguousarray(X),
        term_out=np.array([out_index[t.outcome] for t in spec.terms], dtype=np.int64),
        term_rand=term_rand,
        const_out=np.array([out_index[o] for o in spec.constant_outcomes], dtype=np.int64),
        rand_term=rand_term,
        Z=np.ascontiguousarray(np.column_stack(zc) if zc else np.zeros((N, 0))),
        z_owner=np.array(zo, dtype=np.int64),
        B=np.ascontiguousarray(np.column_stack(bc) if bc else np.zeros((N, 0))),
        b_owner=np.array(bo, dtype=np.int64),
        n_out=spec.n_outcomes,
    )


def utilities(obs: EventObservation, spec: ModelSpec, coefficients, constants=None) -> np.ndarray:
    """Per-outcome utilities for one event; the base outcome is 0.

    ``coefficients`` holds one realized coefficient per spec term;
    ``constants`` one value per non-base outcome (default zeros).
    """
    u = np.zeros(spec.n_outcomes)
    if constants is not None and spec.constants:
        u[1:] += np.asarray(constants, dtype=float)
    for t, b in zip(spec.terms, np.asarray(coefficients, dtype=float)):
        x = obs.x.get(t.variable, math.nan)
        if not math.isfinite(x):
            raise ValueError(f"event {obs.event_id}: missing {t.variable}")
        u[spec.outcomes.index(t.outcome)] += b * x
    return u


def log_probabilities(u: np.ndarray, axis: int = -1) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    shifted = u - u.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def probabilities(u) -> np.ndarray:
    """Softmax over outcomes along the last axis."""
    return np.exp(log_probabilities(u))


def _fixed_utilities(design: Design, theta: ParameterVector) -> np.ndarray:
    u = np.zeros((len(design.chosen), design.n_out))
    u[:, design.const_out] += theta.constants
    for t in range(design.X.shape[1]):
        u[:, design.term_out[t]] += theta.beta[t] * design.X[:, t]
    return u


def _check_finite(theta: ParameterVector):
    if not np.all(np.isfinite(theta.values)):
        raise ValueError("non-finite parameter values")


def loglik_fixed(data: EventDataset | Design, spec: ModelSpec, theta: ParameterVector) -> float:
    """Exact multinomial logit log-likelihood (random terms evaluated at their means)."""
    _check_finite(theta)
    design = data if isinstance(data, Design) else compile_design(data, spec)
    lp = log_probabilities(_fixed_utilities(design, theta))
    return float(design.weights @ lp[np.arange(len(design.chosen)), design.chosen])


def _fixed_score(design: Design, theta: ParameterVector) -> np.ndarray:
    N = len(design.chosen)
    resid = -probabilities(_fixed_utilities(design, theta))
    resid[np.arange(N), design.chosen] += 1.0
    score = np.empty((N, theta.spec.n_params))
    C = len(design.const_out)
    score[:, :C] = resid[:, design.const_out]
    score[:, C:C + design.X.shape[1]] = resid[:, design.term_out] * design.X
    score[:, C + design.X.shape[1]:] = 0.0
    return score * design.weights[:, None]


def realize_beta(term: Term, theta: ParameterVector, obs: EventObservation, v: float) -> float:
    """Event-level coefficient ``beta + xi.Z + sigma * exp(gamma.B) * v``."""
    b = theta.location(term)
    if not term.random:
        return b
    b += sum(xi * obs.x[z] for z, xi in theta.het_mean(term).items())
    lg = sum(g * obs.x[z] for z, g in theta.het_var(term).items())
    return b + theta.scale(term) * math.exp(lg) * v


def standardized_draws(spec: ModelSpec, uniform: np.ndarray) -> np.ndarray:
    """Apply each random term's inverse-CDF transform to its draw column."""
    u = np.asarray(uniform, dtype=float)
    if u.ndim != 3 or u.shape[2] != len(spec.random_terms):
        raise ValueError(f"draws must be (N, R, {len(spec.random_terms)})")
    if u.shape[1] == 0:
        raise ValueError("need at least one draw")
    out = np.empty_like(u)
    for j, t in enumerate(spec.random_terms):
        out[:, :, j] = transform(u[:, :, j], t.distribution)
    return np.ascontiguousarray(out)


def make_draws(spec: ModelSpec, n_obs: int, n_draws: int = 200, **kw) -> tuple[DrawConfig, np.ndarray]:
    """Build the frozen Halton draw tensor for ``spec`` (one prime per random term)."""
    cfg = DrawConfig(n_obs=n_obs, n_draws=n_draws, n_params=len(spec.random_terms), **kw)
    return cfg, build_draws(cfg)


class LikelihoodProblem:
    """A dataset, spec and frozen draws; evaluates LL and score vectors.

    ``draws`` are *uniform* draws shaped ``(N, R, J)``; they are transformed
    once here. Models without random terms use the closed-form logit path.
    """

    def __init__(self, data: EventDataset | Design, spec: ModelSpec, draws=None, standardized=False):
        self.spec = spec
        self.design = data if isinstance(data, Design) else compile_design(data, spec)
        self.n_obs = len(self.design.chosen)
        if spec.random_terms:
            if draws is None:
                raise ValueError("random terms need a draw tensor")
            draws = np.asarray(draws, dtype=float)
            if draws.shape[0] != self.n_obs:
                raise ValueError("draw tensor does not match the number of events")
            self.V = np.ascontiguousarray(draws) if standardized else standardized_draws(spec, draws)
        else:
            self.V = None
        self.n_evals = 0

    @property
    def simulated(self) -> bool:
        return self.V is not None

    def _theta(self, x) -> ParameterVector:
        theta = x if isinstance(x, ParameterVector) else ParameterVector(self.spec, x)
        _check_finite(theta)
        return theta

    def terms(self, x, want_grad=True):
        """Per-event ``(ll, score)``."""
        theta = self._theta(x)
        self.n_evals += 1
        d = self.design
        if not self.simulated:
            lp = log_probabilities(_fixed_utilities(d, theta))
            ll = d.weights * lp[np.arange(self.n_obs), d.chosen]
            return ll, (_fixed_score(d, theta) if want_grad else None)
        c, b, s, xi, g = theta.parts()
        ll, score = _kernels.simulated_loglik_terms(
            d.chosen, d.weights, d.X, d.term_out, d.term_rand, d.const_out, d.rand_term,
            d.Z, d.z_owner, d.B, d.b_owner, self.V, d.n_out,
            np.ascontiguousarray(c), np.ascontiguousarray(b), np.ascontiguousarray(s),
            np.ascontiguousarray(xi), np.ascontiguousarray(g), want_grad,
        )
        return ll, (score if want_grad else None)

    def loglik(self, x) -> float:
        return float(np.sum(self.terms(x, want_grad=False)[0]))

    def gradient(self, x) -> np.ndarray:
        return self.terms(x)[1].sum(axis=0)

    def loglik_and_gradient(self, x):
        ll, score = self.terms(x)
        return float(np.sum(ll)), score.sum(axis=0)


def simulated_loglik(data, spec: ModelSpec, theta: ParameterVector, draws) -> float:
    """Sum over events of log of the draw-averaged chosen-outcome probability."""
    if not spec.random_terms:
        raise ValueError("simulated likelihood needs at least one random term")
    return LikelihoodProblem(data, spec, draws).loglik(theta)


def gradient(data, spec: ModelSpec, theta: ParameterVector, draws=None) -> np.ndarray:
    """Analytic gradient of the exact (no random terms) or simulated LL."""
    return LikelihoodProblem(data, spec, draws).gradient(theta)
