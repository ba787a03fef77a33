"""Maximum (simulated) likelihood estimation, standard errors and fit statistics."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import chi2

from .likelihood import (
    EventDataset,
    LikelihoodProblem,
    ModelSpec,
    ParameterVector,
    make_draws,
)
from .quasirandom import DEFAULT_DISCARD, DrawConfig

log = logging.getLogger(__name__)

SYMMETRIC_DISTRIBUTIONS = ("normal", "uniform", "triangular")


@dataclass(frozen=True)
class FitOptions:
    max_iterations: int = 500
    gradient_tolerance: float = 1e-5
    step_tolerance: float = 1e-10
    n_draws: int = 200
    seed: int = 0
    discard: int = DEFAULT_DISCARD
    scramble: bool = False
    start: str | Sequence[float] = "warm"
    initial_sigma: float = 0.1
    hessian_step: float = 1e-5

    def __post_init__(self):
        if not (self.gradient_tolerance > 0 and self.step_tolerance > 0):
            raise ValueError("tolerances must be positive")
        if self.n_draws < 1:
            raise ValueError("n_draws must be >= 1")

    def to_dict(self) -> dict:
        start = self.start if isinstance(self.start, str) else [float(v) for v in self.start]
        return {
            "max_iterations": self.max_iterations, "gradient_tolerance": self.gradient_tolerance,
            "step_tolerance": self.step_tolerance, "n_draws": self.n_draws, "seed": self.seed,
            "discard": self.discard, "scramble": self.scramble, "start": start,
            "initial_sigma": self.initial_sigma, "hessian_step": self.hessian_step,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> FitOptions:
        keys = {
            "draws": "n_draws", "tolerance": "gradient_tolerance",
        }
        kw = {}
        for k, v in d.items():
            k = keys.get(k, k)
            if k == "tolerances" and isinstance(v, Mapping):
                kw.update({("gradient_tolerance" if kk == "gradient" else "step_tolerance" if kk == "step" else kk): vv
                           for kk, vv in v.items()})
            elif k in cls.__dataclass_fields__:
                kw[k] = v
        return cls(**kw)


@dataclass
class OptimizeOutcome:
    x: np.ndarray
    loglik: float
    grad: np.ndarray
    converged: bool
    iterations: int
    message: str
    history: list = field(default_factory=list)


def bfgs_maximize(
    fun_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0,
    max_iterations: int = 500,
    gradient_tolerance: float = 1e-5,
    step_tolerance: float = 1e-10,
) -> OptimizeOutcome:
    """Maximize ``f`` with BFGS and a backtracking Armijo line search.

    ``fun_grad(x)`` returns ``(f, grad f)``. Every accepted step increases
    ``f``; the history records ``(iteration, f, sup|grad|, step length)``.
    """
    c1, shrink, max_backtracks = 1e-4, 0.5, 60
    x = np.array(x0, dtype=float)
    f, g = fun_grad(x)
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the starting point")
    n = len(x)
    Hinv = np.eye(n)
    first = True
    history = [(0, f, float(np.max(np.abs(g))) if n else 0.0, 0.0)]
    message = "maximum iterations reached"
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        gmax = float(np.max(np.abs(g))) if n else 0.0
        if gmax < gradient_tolerance:
            converged, message = True, "gradient tolerance reached"
            it -= 1
            break
        p = Hinv @ g
        slope = float(g @ p)
        if slope <= 0 or not np.all(np.isfinite(p)):
            Hinv = np.eye(n)
            first = True
            p = g.copy()
            slope = float(g @ p)
        if first:
            # Unit-length first step; the curvature scaling below takes over.
            p /= max(1.0, float(np.max(np.abs(p))))
            slope = float(g @ p)
        alpha = 1.0
        accepted = False
        for _ in range(max_backtracks):
            x_new = x + alpha * p
            try:
                f_new, g_new = fun_grad(x_new)
            except (ValueError, FloatingPointError, OverflowError):
                f_new, g_new = -math.inf, None
            if np.isfinite(f_new) and f_new >= f + c1 * alpha * slope and np.all(np.isfinite(g_new)):
                accepted = True
                break
            alpha *= shrink
        if not accepted:
            if not first:
                Hinv = np.eye(n)
                first = True
                continue
            message = "line search failed"
            it -= 1
            break
        s = x_new - x
        y = g - g_new
        x, f, g = x_new, f_new, g_new
        step = float(np.max(np.abs(s)))
        history.append((it, f, float(np.max(np.abs(g))), step))
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)) and sy > 0:
            if first:
                Hinv = np.eye(n) * (sy / float(y @ y))
                first = False
            rho = 1.0 / sy
            Hy = Hinv @ y
            Hinv = Hinv - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s)
        if step < step_tolerance:
            converged = float(np.max(np.abs(g))) < gradient_tolerance
            message = "step tolerance reached"
            break
    else:
        it = max_iterations
        if n and float(np.max(np.abs(g))) < gradient_tolerance:
            converged, message = True, "gradient tolerance reached"
    return OptimizeOutcome(x, f, g, converged, it, message, history)


def numerical_hessian(grad: Callable[[np.ndarray], np.ndarray], x, step: float = 1e-5) -> np.ndarray:
    """Central differences of an analytic gradient, symmetrized."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    H = np.empty((n, n))
    for i in range(n):
        h = step * max(1.0, abs(x[i]))
        e = np.zeros(n)
        e[i] = h
        H[:, i] = (grad(x + e) - grad(x - e)) / (2.0 * h)
    return 0.5 * (H + H.T)


def standard_errors(hessian, estimates) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    """Covariance, standard errors and t-statistics from the LL Hessian.

    Returns ``(cov, se, t, ok)``; ``ok`` is false when the negative Hessian
    is not positive definite and a pseudo-inverse was used instead.
    """
    info = -np.asarray(hessian, dtype=float)
    est = np.asarray(estimates, dtype=float)
    if info.size == 0:
        return np.zeros((0, 0)), np.zeros(0), np.zeros(0), True
    ok = True
    try:
        np.linalg.cholesky(info)
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        ok = False
        cov = np.linalg.pinv(info)
    cov = 0.5 * (cov + cov.T)
    var = np.diag(cov).copy()
    se = np.sqrt(np.where(var > 0, var, np.nan))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = est / se
    return cov, se, t, ok


def null_loglik(data: EventDataset, spec: ModelSpec) -> float:
    """Constants-only LL at its closed-form optimum, sum_k W_k ln(W_k / W)."""
    w = data.weights
    total = float(w.sum())
    ll = 0.0
    for o in spec.outcomes:
        wk = float(w[np.asarray(data.outcome == o)].sum())
        if wk > 0:
            ll += wk * math.log(wk / total)
    return ll


def constants_closed_form(data: EventDataset, spec: ModelSpec) -> np.ndarray:
    """Constants-only MLE: log share ratios against the base outcome."""
    w = data.weights
    shares = np.array([w[np.asarray(data.outcome == o)].sum() for o in spec.outcomes]) / w.sum()
    with np.errstate(divide="ignore"):
        return np.log(shares[1:] / shares[0])


@dataclass
class EstimationResult:
    spec: ModelSpec
    names: list
    theta: np.ndarray  # internal optimizer values (signed scales)
    estimates: np.ndarray  # reported: |sigma| for symmetric mixing distributions
    covariance: np.ndarray | None
    se: np.ndarray
    tstat: np.ndarray
    loglik: float
    loglik_null: float
    n_obs: int
    converged: bool
    message: str
    iterations: int
    history: list
    gradient: np.ndarray
    covariance_ok: bool = True
    draw_config: DrawConfig | None = None
    options: FitOptions = field(default_factory=FitOptions)
    dropped: list = field(default_factory=list)

    @property
    def n_params(self) -> int:
        return len(self.theta)

    @property
    def parameters(self) -> ParameterVector:
        return ParameterVector(self.spec, self.theta)

    def estimate(self, name: str) -> float:
        return float(self.estimates[self.names.index(name)])

    def std_error(self, name: str) -> float:
        return float(self.se[self.names.index(name)])

    def statistics(self, nested: EstimationResult | None = None) -> FitStatistics:
        return fit_statistics(self, nested)

    def to_dict(self) -> dict:
        stats = self.statistics()
        return {
            "spec": self.spec.to_dict(),
            "converged": self.converged,
            "message": self.message,
            "iterations": self.iterations,
            "n_obs": self.n_obs,
            "n_params": self.n_params,
            "loglik": self.loglik,
            "loglik_null": self.loglik_null,
            "parameters": [
                {"name": n, "estimate": float(e), "se": _num(s), "t": _num(t), "internal": float(r)}
                for n, e, s, t, r in zip(self.names, self.estimates, self.se, self.tstat, self.theta)
            ],
            "covariance": None if self.covariance is None else self.covariance.tolist(),
            "covariance_ok": self.covariance_ok,
            "gradient": self.gradient.tolist(),
            "history": [list(h) for h in self.history],
            "draws": None if self.draw_config is None else self.draw_config.to_dict(),
            "options": self.options.to_dict(),
            "dropped_events": list(self.dropped),
            "statistics": stats.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> EstimationResult:
        spec = ModelSpec.from_dict(d["spec"])
        params = d["parameters"]
        dc = d.get("draws")
        draw_config = None
        if dc:
            draw_config = DrawConfig(
                n_obs=dc["n_obs"], n_draws=dc["n_draws"], n_params=dc["n_params"],
                primes=tuple(dc["primes"]), discard=dc["discard"], scramble=dc["scramble"], seed=dc["seed"],
            )
        cov = d.get("covariance")
        return cls(
            spec=spec,
            names=[p["name"] for p in params],
            theta=np.array([p["internal"] for p in params], dtype=float),
            estimates=np.array([p["estimate"] for p in params], dtype=float),
            covariance=None if cov is None else np.array(cov, dtype=float).reshape(len(params), len(params)),
            se=np.array([_den(p["se"]) for p in params], dtype=float),
            tstat=np.array([_den(p["t"]) for p in params], dtype=float),
            loglik=float(d["loglik"]),
            loglik_null=float(d["loglik_null"]),
            n_obs=int(d["n_obs"]),
            converged=bool(d["converged"]),
            message=d.get("message", ""),
            iterations=int(d.get("iterations", 0)),
            history=[tuple(h) for h in d.get("history", [])],
            gradient=np.array(d.get("gradient", [0.0] * len(params)), dtype=float),
            covariance_ok=bool(d.get("covariance_ok", True)),
            draw_config=draw_config,
            options=FitOptions.from_dict(d.get("options", {})),
            dropped=list(d.get("dropped_events", [])),
        )


def _num(v):
    v = float(v)
    return v if math.isfinite(v) else None


def _den(v):
    return math.nan if v is None else float(v)


def _start_vector(data, spec, options) -> np.ndarray:
    if not isinstance(options.start, str):
        x0 = np.asarray(options.start, dtype=float)
        if x0.shape != (spec.n_params,):
            raise ValueError(f"start vector needs {spec.n_params} values")
        return x0
    if options.start == "zeros" or not spec.random_terms:
        return np.zeros(spec.n_params)
    if options.start != "warm":
        raise ValueError(f"unknown start {options.start!r}")
    fixed = fit(data, spec.fixed_counterpart(), FitOptions(
        max_iterations=options.max_iterations, gradient_tolerance=options.gradient_tolerance,
        step_tolerance=options.step_tolerance, start="zeros",
    ), covariance=False)
    c = len(spec.constant_outcomes) + len(spec.terms)
    x0 = np.zeros(spec.n_params)
    x0[:c] = fixed.theta
    x0[c:c + len(spec.random_terms)] = options.initial_sigma
    return x0


def _newton_polish(problem: LikelihoodProblem, opt: OptimizeOutcome, H: np.ndarray) -> None:
    """One Newton step from the BFGS optimum using the covariance Hessian.

    BFGS stops at the gradient tolerance; a single Newton step removes most
    of the remaining parameter error. Kept only if LL does not drop and the
    gradient shrinks.
    """
    try:
        step = np.linalg.solve(H, opt.grad)
    except np.linalg.LinAlgError:
        return
    x_new = opt.x - step
    try:
        f_new, g_new = problem.loglik_and_gradient(x_new)
    except (ValueError, FloatingPointError, OverflowError):
        return
    if np.isfinite(f_new) and f_new >= opt.loglik and np.max(np.abs(g_new)) < np.max(np.abs(opt.grad)):
        opt.history.append((opt.iterations + 1, f_new, float(np.max(np.abs(g_new))), float(np.max(np.abs(step)))))
        opt.x, opt.loglik, opt.grad = x_new, f_new, g_new
        opt.iterations += 1
        opt.message += "; newton polish"


def fit(data: EventDataset, spec: ModelSpec, options: FitOptions | None = None, covariance: bool = True) -> EstimationResult:
    """Estimate ``spec`` on ``data`` by (simulated) maximum likelihood.

    Incomplete events are dropped first. Random-parameter models build one
    Halton tensor from ``(seed, n_draws)`` and keep it fixed for the whole
    optimization, so the objective is a smooth deterministic function.
    """
    options = options or FitOptions()
    data, dropped = data.complete_cases(spec)
    N = len(data)
    if N == 0:
        raise ValueError("no complete events to estimate on")
    if N < spec.n_params:
        raise ValueError(f"{N} events cannot identify {spec.n_params} parameters")

    draw_config = None
    draws = None
    if spec.random_terms:
        draw_config, draws = make_draws(
            spec, N, options.n_draws, discard=options.discard, scramble=options.scramble, seed=options.seed,
        )
    problem = LikelihoodProblem(data, spec, draws)
    x0 = _start_vector(data, spec, options)
    opt = bfgs_maximize(
        problem.loglik_and_gradient, x0, options.max_iterations,
        options.gradient_tolerance, options.step_tolerance,
    )
    if not opt.converged:
        log.warning("estimation did not converge: %s", opt.message)

    P = spec.n_params
    if covariance and P:
        H = numerical_hessian(problem.gradient, opt.x, options.hessian_step)
        if opt.converged:
            _newton_polish(problem, opt, H)
        cov, se, _, cov_ok = standard_errors(H, opt.x)
    else:
        cov, se, cov_ok = None, np.full(P, np.nan), False

    reported = opt.x.copy()
    sign = np.ones(P)
    c = len(spec.constant_outcomes) + len(spec.terms)
    for j, t in enumerate(spec.random_terms):
        if t.distribution in SYMMETRIC_DISTRIBUTIONS and reported[c + j] < 0:
            sign[c + j] = -1.0
    reported *= sign
    if cov is not None:
        cov = cov * np.outer(sign, sign)
    with np.errstate(divide="ignore", invalid="ignore"):
        tstat = reported / se

    return EstimationResult(
        spec=spec,
        names=spec.parameter_names(),
        theta=opt.x,
        estimates=reported,
        covariance=cov,
        se=se,
        tstat=tstat,
        loglik=opt.loglik,
        loglik_null=null_loglik(data, spec),
        n_obs=N,
        converged=opt.converged,
        message=opt.message,
        iterations=opt.iterations,
        history=opt.history,
        gradient=opt.grad,
        covariance_ok=cov_ok,
        draw_config=draw_config,
        options=options,
        dropped=dropped,
    )


@dataclass(frozen=True)
class FitStatistics:
    n_obs: int
    n_params: int
    loglik: float
    loglik_null: float
    aic: float
    bic: float
    mcfadden_r2: float
    lr: float | None = None
    lr_df: int | None = None
    lr_pvalue: float | None = None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def aic(loglik: float, n_params: int) -> float:
    return 2.0 * n_params - 2.0 * loglik


def bic(loglik: float, n_params: int, n_obs: int) -> float:
    return n_params * math.log(n_obs) - 2.0 * loglik if n_obs > 0 else -2.0 * loglik


def mcfadden_r2(loglik: float, loglik_null: float) -> float:
    return 1.0 - loglik / loglik_null if loglik_null != 0 else math.nan


def likelihood_ratio(ll_unrestricted: float, ll_restricted: float, df: int) -> tuple[float, float]:
    """LR statistic and chi-square p-value (p = 1 when df = 0)."""
    lr = 2.0 * (ll_unrestricted - ll_restricted)
    p = 1.0 if df <= 0 else float(chi2.sf(max(lr, 0.0), df))
    return lr, p


class NotNestedError(ValueError):
    pass


def fit_statistics(result: EstimationResult, nested: EstimationResult | None = None) -> FitStatistics:
    """AIC, BIC, McFadden R^2 and, given a restricted model, the LR test."""
    p, ll, N = result.n_params, result.loglik, result.n_obs
    lr = df = pv = None
    if nested is not None:
        if not result.spec.nests(nested.spec):
            raise NotNestedError("models not nested")
        if nested.n_obs != result.n_obs:
            raise ValueError("estimation samples differ; LR test not applicable")
        df = p - nested.n_params
        lr, pv = likelihood_ratio(ll, nested.loglik, df)
    return FitStatistics(
        n_obs=N, n_params=p, loglik=ll, loglik_null=result.loglik_null,
        aic=aic(ll, p), bic=bic(ll, p, N), mcfadden_r2=mcfadden_r2(ll, result.loglik_null),
        lr=lr, lr_df=df, lr_pvalue=pv,
    )


def _cell(v, fmt="{:.3f}"):
    return "---" if v is None or not math.isfinite(v) else fmt.format(v)


def coefficient_table(results: Sequence[EstimationResult], labels: Sequence[str] | None = None) -> str:
    """Aligned text table: one (beta, t-stat) column pair per model."""
    labels = list(labels or [f"Model {i + 1}" for i in range(len(results))])
    names: list[str] = []
    for r in results:
        names.extend(n for n in r.names if n not in names)
    width = max([len("Variable")] + [len(n) for n in names])
    col = max(12, *(len(lab) for lab in labels))
    head1 = "Variable".ljust(width) + "".join(lab.center(2 * col + 1) for lab in labels)
    head2 = " " * width + "".join(("beta".rjust(col) + " " + "t-stat".rjust(col)) for _ in labels)
    lines = [head1, head2, "-" * len(head2)]
    for n in names:
        row = n.ljust(width)
        for r in results:
            if n in r.names:
                i = r.names.index(n)
                row += _cell(r.estimates[i]).rjust(col) + " " + _cell(r.tstat[i], "{:.2f}").rjust(col)
            else:
                row += "---".rjust(col) + " " + "---".rjust(col)
        lines.append(row)
    lines.append("-" * len(head2))
    for key, fmt in (("n_obs", "{:d}"), ("n_params", "{:d}"), ("loglik", "{:.3f}")):
        row = key.ljust(width)
        for r in results:
            row += fmt.format(getattr(r, key)).rjust(2 * col + 1)
        lines.append(row)
    return "\n".join(lines) + "\n"


def comparison_table(results: Sequence[EstimationResult], labels: Sequence[str] | None = None) -> tuple[str, list]:
    """Goodness-of-fit table (N, p, LL0, LL, R^2, AIC, BIC) plus LR rows.

    LR tests are run for every ordered pair where one spec nests the other.
    Returns the text and a list of LR row dicts.
    """
    labels = list(labels or [f"Model {i + 1}" for i in range(len(results))])
    stats = [fit_statistics(r) for r in results]
    width = 28
    col = max(14, *(len(lab) + 2 for lab in labels))
    lines = ["Statistic".ljust(width) + "".join(lab.rjust(col) for lab in labels)]
    rows = (
        ("N", lambda s: f"{s.n_obs:d}"),
        ("No. of parameters", lambda s: f"{s.n_params:d}"),
        ("Log-likelihood at constant", lambda s: f"{s.loglik_null:.3f}"),
        ("Log-likelihood at convergence", lambda s: f"{s.loglik:.3f}"),
        ("McFadden pseudo R2", lambda s: f"{s.mcfadden_r2:.4f}"),
        ("AIC", lambda s: f"{s.aic:.3f}"),
        ("BIC", lambda s: f"{s.bic:.3f}"),
    )
    for name, f in rows:
        lines.append(name.ljust(width) + "".join(f(s).rjust(col) for s in stats))

    lr_rows = []
    not_nested = []
    n = len(results)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            big, small = results[i], results[j]
            if not big.spec.nests(small.spec):
                if i < j and not small.spec.nests(big.spec):
                    not_nested.append((labels[i], labels[j]))
                continue
            if small.spec.nests(big.spec) and i > j:
                continue  # same parameter set: report once
            row = {"unrestricted": labels[i], "restricted": labels[j]}
            if big.n_obs != small.n_obs:
                row.update(lr=None, df=None, p=None, note="N differs; not applicable")
            else:
                df = big.n_params - small.n_params
                lr, p = likelihood_ratio(big.loglik, small.loglik, df)
                row.update(lr=lr, df=df, p=p, note="")
            lr_rows.append(row)
    if lr_rows:
        lines.append("")
        lines.append("Likelihood ratio tests")
        for r in lr_rows:
            if r["lr"] is None:
                lines.append(f"  {r['unrestricted']} vs {r['restricted']}: {r['note']}")
            else:
                lines.append(f"  {r['unrestricted']} vs {r['restricted']}: LR = {r['lr']:.3f}, df = {r['df']}, p = {r['p']:.4g}")
    for a, b in not_nested:
        lines.append(f"  {a} vs {b}: not nested, no LR test")
    return "\n".join(lines) + "\n", lr_rows
