"""Post-estimation: marginal effects, directional heterogeneity, VIF."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import IO, Mapping, Sequence

import numpy as np

from .estimation import EstimationResult
from .likelihood import (
    Design,
    EventDataset,
    ModelSpec,
    ParameterVector,
    compile_design,
    log_probabilities,
    standardized_draws,
)
from .quasirandom import build_draws, distribution_cdf


def realized_coefficients(design: Design, theta: ParameterVector, V: np.ndarray | None) -> np.ndarray:
    """Per-event, per-draw term coefficients, shape ``(N, R, T)``."""
    N, T = design.X.shape
    beta = theta.beta
    if V is None or not len(design.rand_term):
        return np.broadcast_to(beta, (N, 1, T)).copy()
    R = V.shape[1]
    out = np.broadcast_to(beta, (N, R, T)).copy()
    mu = np.tile(beta[design.rand_term], (N, 1))
    logscale = np.zeros((N, len(design.rand_term)))
    for m, j in enumerate(design.z_owner):
        mu[:, j] += theta.xi[m] * design.Z[:, m]
    for q, j in enumerate(design.b_owner):
        logscale[:, j] += theta.gamma[q] * design.B[:, q]
    coef = mu[:, None, :] + (theta.sigma * np.exp(logscale))[:, None, :] * V
    out[:, :, design.rand_term] = coef
    return out


def draw_probabilities(design: Design, theta: ParameterVector, V: np.ndarray | None) -> np.ndarray:
    """Choice probabilities for every event and draw, shape ``(N, R, K)``."""
    coef = realized_coefficients(design, theta, V)
    N, R, T = coef.shape
    u = np.zeros((N, R, design.n_out))
    u[:, :, design.const_out] += theta.constants
    for t in range(T):
        u[:, :, design.term_out[t]] += coef[:, :, t] * design.X[:, t][:, None]
    return np.exp(log_probabilities(u))


@dataclass(frozen=True)
class MarginalEffectRow:
    variable: str
    outcome: str
    kind: str
    mean: float
    sd: float
    min: float
    max: float


@dataclass
class MarginalEffectsTable:
    rows: list
    # variable -> (N, K) event-level effects on every outcome probability
    effects: dict = field(default_factory=dict)
    outcomes: tuple = ()

    def row(self, variable: str, outcome: str) -> MarginalEffectRow:
        for r in self.rows:
            if r.variable == variable and r.outcome == outcome:
                return r
        raise KeyError(f"no such term {variable}[{outcome}]")

    def write_csv(self, sink: IO[str]) -> None:
        w = csv.writer(sink, lineterminator="\n")
        w.writerow(("variable", "outcome", "kind", "mean", "sd", "min", "max"))
        for r in self.rows:
            w.writerow([r.variable, r.outcome, r.kind, *(repr(float(v)) for v in (r.mean, r.sd, r.min, r.max))])


def is_dummy(values) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all((v == 0) | (v == 1)))


def _with_variable(design: Design, spec: ModelSpec, variable: str, values) -> Design:
    """Copy of ``design`` with ``variable`` replaced everywhere it enters."""
    X, Z, B = design.X.copy(), design.Z.copy(), design.B.copy()
    for i, t in enumerate(spec.terms):
        if t.variable == variable:
            X[:, i] = values
    m = q = 0
    for t in spec.random_terms:
        for z in t.het_mean:
            if z == variable:
                Z[:, m] = values
            m += 1
        for b in t.het_var:
            if b == variable:
                B[:, q] = values
            q += 1
    return Design(design.chosen, design.weights, X, design.term_out, design.term_rand, design.const_out,
                  design.rand_term, Z, design.z_owner, B, design.b_owner, design.n_out)


def _result_draws(result: EstimationResult, n_obs: int) -> np.ndarray | None:
    if not result.spec.random_terms:
        return None
    cfg = result.draw_config
    if cfg is None:
        raise ValueError("random-parameter result carries no draw configuration")
    if cfg.n_obs != n_obs:
        raise ValueError(f"result was fitted on {cfg.n_obs} events, data has {n_obs}")
    return standardized_draws(result.spec, build_draws(cfg))


def marginal_effects(
    result: EstimationResult,
    data: EventDataset,
    variables: Sequence[str] | None = None,
    unit_difference: bool = False,
    draws: np.ndarray | None = None,
    dummies: Sequence[str] | None = None,
) -> MarginalEffectsTable:
    """Direct marginal effects averaged over the fit's frozen draws.

    Dummies use ``P(x=1) - P(x=0)``; continuous variables use the analytic
    derivative ``P_k (b_k - sum_l P_l b_l)`` (``b_k`` the realized coefficient
    on the variable in outcome ``k``), or ``P(x+1) - P(x)`` with
    ``unit_difference``. Dummy flips also move het-mean/het-variance columns
    carrying the same variable; the analytic derivative only differentiates
    through utilities. ``draws`` overrides the standardized draw tensor.
    ``dummies`` names the dummy variables explicitly; by default a variable
    is a dummy when every value is 0 or 1.
    """
    spec = result.spec
    data, _ = data.complete_cases(spec)
    design = compile_design(data, spec)
    theta = result.parameters
    V = draws if draws is not None else _result_draws(result, len(data))
    term_vars = list(dict.fromkeys(t.variable for t in spec.terms))
    if variables is None:
        variables = term_vars
    for v in variables:
        if v not in term_vars:
            raise KeyError(f"no such term: {v}")

    table = MarginalEffectsTable([], {}, spec.outcomes)
    base_p = None
    for v in variables:
        x = data[v]
        dummy = is_dummy(x) if dummies is None else v in dummies
        if dummy:
            kind = "dummy"
            p1 = draw_probabilities(_with_variable(design, spec, v, np.ones_like(x)), theta, V)
            p0 = draw_probabilities(_with_variable(design, spec, v, np.zeros_like(x)), theta, V)
            eff = (p1 - p0).mean(axis=1)
        elif unit_difference:
            kind = "continuous"
            if base_p is None:
                base_p = draw_probabilities(design, theta, V)
            eff = (draw_probabilities(_with_variable(design, spec, v, x + 1.0), theta, V) - base_p).mean(axis=1)
        else:
            kind = "continuous"
            if base_p is None:
                base_p = draw_probabilities(design, theta, V)
            coef = realized_coefficients(design, theta, V)
            bk = np.zeros(base_p.shape)
            for i, t in enumerate(spec.terms):
                if t.variable == v:
                    bk[:, :, design.term_out[i]] += coef[:, :, i]
            avg = (base_p * bk).sum(axis=2, keepdims=True)
            eff = (base_p * (bk - avg)).mean(axis=1)
        table.effects[v] = eff
        for i, t in enumerate(spec.terms):
            if t.variable != v:
                continue
            e = eff[:, design.term_out[i]]
            sd = float(e.std(ddof=1)) if len(e) > 1 else math.nan
            table.rows.append(MarginalEffectRow(v, t.outcome, kind, float(e.mean()), sd, float(e.min()), float(e.max())))
    return table


@dataclass(frozen=True)
class DirectionalShares:
    below: float
    above: float


def directional_shares(location: float, scale: float, dist: str = "normal") -> DirectionalShares:
    """Population shares of ``location + scale * v`` below and above zero."""
    if not scale > 0:
        raise ValueError("scale must be positive")
    below = distribution_cdf(-location / scale, dist)
    return DirectionalShares(below, 1.0 - below)


def _signed_shares(location: float, scale: float, dist: str) -> DirectionalShares:
    # b + s*v < 0 with s < 0  <=>  -b + |s|*v > 0
    if scale < 0:
        s = directional_shares(-location, -scale, dist)
        return DirectionalShares(s.above, s.below)
    return directional_shares(location, scale, dist)


def random_parameter_shares(result: EstimationResult, model: str = "") -> list[dict]:
    """Table-style rows of base-term directional shares for each random term."""
    theta = result.parameters
    rows = []
    for t in result.spec.random_terms:
        s = _signed_shares(theta.location(t), theta.scale(t), t.distribution)
        rows.append({"model": model, "parameter": t.label, "below_0": s.below, "above_0": s.above})
    return rows


def event_conditioned_shares(result: EstimationResult, data: EventDataset) -> list[dict]:
    """Shares below/above zero averaged over events, with het-mean and
    het-variance shifts applied per event."""
    spec = result.spec
    data, _ = data.complete_cases(spec)
    theta = result.parameters
    rows = []
    for t in spec.random_terms:
        mu = theta.location(t) + sum(xi * data[z] for z, xi in theta.het_mean(t).items())
        mu = np.broadcast_to(np.asarray(mu, dtype=float), (len(data),))
        lg = sum(g * data[b] for b, g in theta.het_var(t).items())
        sc = theta.scale(t) * np.exp(np.broadcast_to(np.asarray(lg, dtype=float), (len(data),)))
        below = np.array([_signed_shares(m, s, t.distribution).below for m, s in zip(mu, sc)])
        rows.append({"parameter": t.label, "below_0": float(below.mean()), "above_0": float(1 - below.mean())})
    return rows


def write_shares(rows: Sequence[Mapping], sink: IO[str]) -> None:
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(("model", "parameter", "below_0", "above_0"))
    for r in rows:
        w.writerow([r.get("model", ""), r["parameter"], repr(float(r["below_0"])), repr(float(r["above_0"]))])


def conditional_population_mean(location: float, xi: Sequence[float] = (), delta: Sequence[float] = ()) -> float:
    """``location + sum_j delta_j * xi_j`` with ``delta`` the sample means of Z."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    if xi.shape != delta.shape:
        raise ValueError("xi and delta must have the same length")
    return float(location + xi @ delta)


@dataclass(frozen=True)
class VIF:
    value: float
    collinear: bool = False


def vif(data: Mapping[str, Sequence[float]] | EventDataset, variables: Sequence[str]) -> dict[str, VIF]:
    """Variance inflation factors from OLS of each variable on the others."""
    variables = list(variables)
    if len(variables) < 2:
        raise ValueError("need at least two variables")
    cols = np.column_stack([np.asarray(data[v], dtype=float) for v in variables])
    N = cols.shape[0]
    if N <= len(variables):
        raise ValueError("need more observations than variables")
    out = {}
    for j, name in enumerate(variables):
        y = cols[:, j]
        X = np.column_stack([np.ones(N), np.delete(cols, j, axis=1)])
        sst = float(((y - y.mean()) ** 2).sum())
        try:
            b = np.linalg.solve(X.T @ X, X.T @ y)
        except np.linalg.LinAlgError:
            out[name] = VIF(math.inf, True)
            continue
        ssr = float(((y - X @ b) ** 2).sum())
        one_minus_r2 = ssr / sst if sst > 0 else 0.0
        if one_minus_r2 < 1e-10:
            out[name] = VIF(math.inf, True)
        else:
            out[name] = VIF(1.0 / one_minus_r2)
    return out
