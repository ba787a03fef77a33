"""Synthetic traces and event datasets with known ground truth."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .kinematics import SAMPLE_INTERVAL_S, KinematicsTrace
from .likelihood import EventDataset, ModelSpec, ParameterVector, probabilities


@dataclass(frozen=True)
class Generator:
    """Covariate generator: ``bernoulli(p)``, ``uniform(a, b)``, ``normal(mu, sd)`` or ``fixed(v)``."""

    kind: str
    params: tuple[float, ...]

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "bernoulli":
            return (rng.random(n) < self.params[0]).astype(float)
        if self.kind == "uniform":
            return rng.uniform(self.params[0], self.params[1], n)
        if self.kind == "normal":
            return rng.normal(self.params[0], self.params[1], n)
        if self.kind == "fixed":
            return np.full(n, float(self.params[0]))
        raise ValueError(f"unknown generator {self.kind!r}")

    def to_dict(self):
        return {"kind": self.kind, "params": list(self.params)}


def bernoulli(p):
    return Generator("bernoulli", (p,))


def uniform(a, b):
    return Generator("uniform", (a, b))


def normal(mu, sd):
    return Generator("normal", (mu, sd))


def fixed(v):
    return Generator("fixed", (v,))


@dataclass(frozen=True)
class GroundTruth:
    spec: ModelSpec
    theta: Sequence[float]
    generators: Mapping[str, Generator]
    n_obs: int
    seed: int = 0

    @property
    def parameters(self) -> ParameterVector:
        return ParameterVector(self.spec, self.theta)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "theta": dict(zip(self.spec.parameter_names(), map(float, self.theta))),
            "generators": {k: g.to_dict() for k, g in self.generators.items()},
            "n_obs": self.n_obs,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def simulate_events(truth: GroundTruth, given: Mapping[str, Sequence[float]] | None = None) -> EventDataset:
    """Draw covariates, realize random coefficients with pseudo-random
    draws and sample one outcome per event from the logit probabilities.

    ``given`` supplies covariate columns (e.g. trace features) that are used
    as-is instead of being generated.
    """
    spec = truth.spec
    theta = truth.parameters
    rng = np.random.default_rng(truth.seed)
    N = truth.n_obs
    cols: dict[str, np.ndarray] = {}
    for name in sorted(truth.generators):
        cols[name] = truth.generators[name].draw(rng, N)
    for name, values in (given or {}).items():
        v = np.asarray(values, dtype=float)
        if v.shape != (N,):
            raise ValueError(f"given column {name!r} needs {N} values")
        cols[name] = v
    missing = [v for v in spec.variables() if v not in cols]
    if missing:
        raise ValueError(f"no generator for: {', '.join(missing)}")

    util = np.zeros((N, spec.n_outcomes))
    util[:, 1:] += theta.constants if spec.constants else 0.0
    for i, t in enumerate(spec.terms):
        b = np.full(N, theta.beta[i])
        if t.random:
            for z, xi in theta.het_mean(t).items():
                b += xi * cols[z]
            lg = np.zeros(N)
            for h, g in theta.het_var(t).items():
                lg += g * cols[h]
            v = _standard_draw(rng, t.distribution, N)
            b += theta.scale(t) * np.exp(lg) * v
        util[:, spec.outcomes.index(t.outcome)] += b * cols[t.variable]
    P = probabilities(util)
    u = rng.random(N)
    chosen = (P.cumsum(axis=1) < u[:, None]).sum(axis=1)
    chosen = np.minimum(chosen, spec.n_outcomes - 1)
    width = len(str(N))
    ids = tuple(f"E{i + 1:0{width}d}" for i in range(N))
    return EventDataset(ids, np.array(spec.outcomes, dtype=object)[chosen], cols)


def _standard_draw(rng, dist, n):
    if dist == "normal":
        return rng.standard_normal(n)
    if dist == "lognormal":
        return np.exp(rng.standard_normal(n))
    if dist == "uniform":
        return rng.uniform(-1.0, 1.0, n)
    if dist == "triangular":
        return rng.triangular(-1.0, 0.0, 1.0, n)
    raise ValueError(f"unsupported distribution {dist!r}")


@dataclass(frozen=True)
class Segment:
    """Piecewise-constant stretch over ``(start, end]`` seconds."""

    start: float
    end: float
    speed: float
    accel_long: float
    accel_lat: float


@dataclass(frozen=True)
class TraceProfile:
    event_id: str
    segments: tuple[Segment, ...]

    def __post_init__(self):
        segs = sorted(self.segments, key=lambda s: s.start)
        for a, b in zip(segs, segs[1:]):
            if b.start < a.end:
                raise ValueError(f"{self.event_id}: overlapping segments")
        object.__setattr__(self, "segments", tuple(segs))

    @property
    def end(self) -> float:
        return max(s.end for s in self.segments)


def _grid(profile: TraceProfile) -> np.ndarray:
    n = int(round(profile.end / SAMPLE_INTERVAL_S))
    return np.round(np.arange(1, n + 1) * SAMPLE_INTERVAL_S, 10)


def simulate_traces(profiles: Sequence[TraceProfile], noise_sd: float = 0.0, seed: int = 0) -> list[KinematicsTrace]:
    """10 Hz samples on ``(0, end]`` realizing each profile plus Gaussian noise.

    Noise is added to both acceleration channels; speed is noise-free.
    Samples falling outside every segment are dropped (gaps).
    """
    rng = np.random.default_rng(seed)
    out = []
    for prof in profiles:
        t = _grid(prof)
        speed = np.full(len(t), np.nan)
        along = np.full(len(t), np.nan)
        alat = np.full(len(t), np.nan)
        for s in prof.segments:
            m = (t > s.start + 1e-9) & (t <= s.end + 1e-9)
            speed[m], along[m], alat[m] = s.speed, s.accel_long, s.accel_lat
        noise = rng.standard_normal((2, len(t))) * noise_sd
        keep = ~np.isnan(speed)
        out.append(KinematicsTrace(
            prof.event_id, t[keep], speed[keep], (along + noise[0])[keep], (alat + noise[1])[keep],
        ))
    return out


def random_profiles(n: int, seed: int = 0, duration: float = 30.0, short_share: float = 0.07) -> list[TraceProfile]:
    """Varied 30 s profiles (some short, a few standstill) for corpus demos."""
    rng = np.random.default_rng(seed)
    width = len(str(n))
    profs = []
    for i in range(n):
        dur = duration if rng.random() >= short_share else float(np.round(rng.uniform(4.0, 15.0), 1))
        edges = np.round(np.sort(rng.uniform(0, dur, 5)), 1)
        edges = np.unique(np.concatenate([[0.0], edges, [dur]]))
        segs = []
        for a, b in zip(edges, edges[1:]):
            stopped = rng.random() < 0.05
            segs.append(Segment(
                float(a), float(b),
                0.0 if stopped else float(rng.uniform(5, 90)),
                float(rng.normal(0.0, 1.2)),
                float(rng.normal(0.0, 1.5)),
            ))
        profs.append(TraceProfile(f"E{i + 1:0{width}d}", tuple(segs)))
    return profs


def truth_from_dict(d: Mapping) -> GroundTruth:
    spec = ModelSpec.from_dict(d["spec"])
    theta_d = d["theta"]
    theta = [float(theta_d[n]) for n in spec.parameter_names()] if isinstance(theta_d, Mapping) else list(theta_d)
    gens = {k: Generator(g["kind"], tuple(g["params"])) for k, g in d.get("generators", {}).items()}
    return GroundTruth(spec, theta, gens, int(d["n_obs"]), int(d.get("seed", 0)))
