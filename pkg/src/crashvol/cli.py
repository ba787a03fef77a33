"""Batch command-line front end.

Exit codes: 0 success, 1 I/O error, 2 validation error, 3 non-convergence.
Every command writes a JSON run manifest, including on failure.
"""
from __future__ import annotations

import argparse
import io
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, _config
from .estimation import EstimationResult, FitOptions, coefficient_table, comparison_table, fit
from .inference import event_conditioned_shares, marginal_effects, random_parameter_shares, vif, write_shares
from .kinematics import TraceParseError, parse_traces, write_traces
from .likelihood import EventDataset, ModelSpec, Term
from .synth import GroundTruth, bernoulli, random_profiles, simulate_events, simulate_traces, truth_from_dict, uniform
from .volatility import describe, extract_features, read_table, write_describe, write_features

log = logging.getLogger("crashvol")

EXIT_OK, EXIT_IO, EXIT_VALIDATION, EXIT_NONCONVERGENCE = 0, 1, 2, 3


class ValidationError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    inputs: dict = field(default_factory=dict)
    spec: str | None = None
    options: dict = field(default_factory=dict)
    version: str = __version__
    seed: int | None = None
    outputs: list = field(default_factory=list)
    wall_time_s: float = 0.0
    status: str = "ok"
    exit_code: int = 0
    error: str | None = None
    notes: dict = field(default_factory=dict)

    def write(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=str) + "\n")


def _write_text(path: Path, text: str, manifest: RunManifest) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    manifest.outputs.append(str(path))


# --- data assembly ---------------------------------------------------------


def load_dataset(events_path, features_path, spec: ModelSpec) -> tuple[EventDataset, dict]:
    """Inner-join events and (optionally) features on event id."""
    key = spec.columns.get("event_id") or "event_id"
    outcome_col = spec.columns.get("outcome") or "severity"
    weight_col = spec.columns.get("weight")
    with open(events_path, encoding="utf-8", newline="") as fh:
        ids, cols = read_table(fh, key)
    if outcome_col not in cols:
        raise ValidationError(f"events file has no outcome column {outcome_col!r}")
    outcome = cols.pop(outcome_col)
    outcome = np.array([_label(v) for v in outcome], dtype=object)
    report = {"events": len(ids)}
    if features_path is not None:
        with open(features_path, encoding="utf-8", newline="") as fh:
            fids, fcols = read_table(fh, "event_id")
        pos = {e: i for i, e in enumerate(fids)}
        keep = [i for i, e in enumerate(ids) if e in pos]
        fidx = [pos[ids[i]] for i in keep]
        report.update(features=len(fids), matched=len(keep),
                      unmatched_events=len(ids) - len(keep), unmatched_features=len(fids) - len(keep))
        ids = [ids[i] for i in keep]
        outcome = outcome[keep]
        cols = {k: v[keep] for k, v in cols.items()}
        for k, v in fcols.items():
            if k in cols:
                raise ValidationError(f"column {k!r} appears in both events and features")
            cols[k] = v[fidx]
    if not ids:
        raise ValidationError("join produced 0 rows")
    weights = None
    if weight_col:
        if weight_col not in cols:
            raise ValidationError(f"missing weight column {weight_col!r}")
        weights = cols.pop(weight_col)
    numeric = {k: v for k, v in cols.items() if v.dtype != object}
    missing = [v for v in spec.variables() if v not in numeric]
    if missing:
        raise ValidationError(f"spec references missing column(s): {', '.join(missing)}")
    return EventDataset(tuple(ids), outcome, numeric, weights), report


def _label(v) -> str:
    if isinstance(v, float):
        return str(int(v)) if v.is_integer() else repr(v)
    return str(v)


def load_spec(path) -> tuple[ModelSpec, dict]:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    try:
        return ModelSpec.from_dict(d), dict(d.get("options", {}))
    except (KeyError, ValueError, TypeError) as e:
        raise ValidationError(f"invalid spec: {e}") from None


def load_result(path) -> EstimationResult:
    with open(path, encoding="utf-8") as fh:
        return EstimationResult.from_dict(json.load(fh))


# --- commands --------------------------------------------------------------


def cmd_features(args, m: RunManifest) -> int:
    m.inputs["traces"] = args.traces
    m.options.update(bin_length=args.bin_length, min_bin_samples=args.min_bin_samples,
                     min_side_samples=args.min_side_samples)
    diagnostics = []
    with open(args.traces, "rb") as fh:
        try:
            traces = parse_traces(fh.read(), diagnostics)
        except TraceParseError as e:
            raise ValidationError(str(e)) from None
    m.notes["diagnostics"] = [str(d) for d in diagnostics]
    if not traces:
        raise ValidationError("no parsable events")
    feats = [extract_features(t, args.bin_length, args.min_bin_samples, args.min_side_samples) for t in traces]
    m.notes["events"] = len(feats)
    m.notes["degenerate"] = [f.event_id for f in feats if f.degenerate]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        write_features(feats, fh)
    m.outputs.append(str(out))
    return EXIT_OK


def cmd_describe(args, m: RunManifest) -> int:
    m.inputs["tables"] = list(args.tables)
    table: dict = {}
    for path in args.tables:
        with open(path, encoding="utf-8", newline="") as fh:
            _, cols = read_table(fh, args.key)
        table.update({k: v for k, v in cols.items() if v.dtype != object})
    if args.columns:
        wanted = args.columns.split(",")
        missing = [c for c in wanted if c not in table]
        if missing:
            raise ValidationError(f"missing column(s): {', '.join(missing)}")
        table = {c: table[c] for c in wanted}
    try:
        stats = describe(table)
    except ValueError as e:
        raise ValidationError(str(e)) from None
    buf = io.StringIO()
    write_describe(stats, buf)
    text = buf.getvalue()
    if args.vif:
        names = args.vif.split(",")
        rows = np.column_stack([table[c] for c in names])
        ok = ~np.isnan(rows).any(axis=1)
        res = vif({c: table[c][ok] for c in names}, names)
        text += "\nvariable,vif,collinear\n" + "".join(
            f"{c},{res[c].value!r},{str(res[c].collinear).lower()}\n" for c in names)
    if args.out:
        _write_text(Path(args.out), text, m)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _fit_options(spec_options: dict, args) -> FitOptions:
    opts = FitOptions.from_dict(spec_options)
    override = {}
    if args.seed is not None:
        override["seed"] = args.seed
    if getattr(args, "draws", None) is not None:
        override["n_draws"] = args.draws
    if override:
        opts = FitOptions(**{**opts.__dict__, **override})
    return opts


def cmd_fit(args, m: RunManifest) -> int:
    m.inputs.update(events=args.events, features=args.features)
    m.spec = args.spec
    spec, spec_options = load_spec(args.spec)
    opts = _fit_options(spec_options, args)
    m.options.update(opts.to_dict())
    m.seed = opts.seed
    data, report = load_dataset(args.events, args.features, spec)
    complete, dropped = data.complete_cases(spec)
    report.update(complete=len(complete), dropped_incomplete=len(dropped))
    m.notes["sample"] = report
    log.info("estimation sample: %d complete events (%d dropped)", len(complete), len(dropped))
    if len(complete) == 0:
        raise ValidationError("no complete events after listwise deletion")
    try:
        result = fit(data, spec, opts)
    except ValueError as e:
        raise ValidationError(str(e)) from None
    out = Path(args.out)
    d = result.to_dict()
    d["sample"] = report
    _write_text(out / "result.json", json.dumps(d, indent=2, sort_keys=True) + "\n", m)
    _write_text(out / "table.txt", coefficient_table([result], [args.label or Path(args.spec).stem]), m)
    m.notes["loglik"] = result.loglik
    m.notes["converged"] = result.converged
    if not result.converged:
        m.notes["partial"] = True
        m.error = f"not converged: {result.message}"
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def cmd_compare(args, m: RunManifest) -> int:
    m.inputs["results"] = list(args.results)
    if len(args.results) < 2:
        raise ValidationError("compare needs at least two result files")
    results = [load_result(p) for p in args.results]
    labels = args.labels.split(",") if args.labels else [Path(p).parent.name or Path(p).stem for p in args.results]
    if len(labels) != len(results):
        raise ValidationError("one label per result is required")
    text, lr_rows = comparison_table(results, labels)
    m.notes["lr_tests"] = lr_rows
    if args.out:
        _write_text(Path(args.out), text, m)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_margins(args, m: RunManifest) -> int:
    m.inputs.update(result=args.result, events=args.events, features=args.features)
    result = load_result(args.result)
    data, report = load_dataset(args.events, args.features, result.spec)
    m.notes["sample"] = report
    m.options["unit_difference"] = args.unit_difference
    try:
        table = marginal_effects(result, data, unit_difference=args.unit_difference)
    except ValueError as e:
        raise ValidationError(str(e)) from None
    buf = io.StringIO()
    table.write_csv(buf)
    if args.out:
        _write_text(Path(args.out), buf.getvalue(), m)
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_shares(args, m: RunManifest) -> int:
    m.inputs["results"] = list(args.results)
    labels = args.labels.split(",") if args.labels else [Path(p).parent.name or Path(p).stem for p in args.results]
    rows = []
    results = [load_result(p) for p in args.results]
    for lab, r in zip(labels, results):
        rows.extend(random_parameter_shares(r, lab))
    buf = io.StringIO()
    write_shares(rows, buf)
    if args.out:
        _write_text(Path(args.out), buf.getvalue(), m)
    else:
        sys.stdout.write(buf.getvalue())
    if args.events:
        cond = []
        for lab, r in zip(labels, results):
            data, _ = load_dataset(args.events, args.features, r.spec)
            cond.extend({"model": lab, **row} for row in event_conditioned_shares(r, data))
        buf = io.StringIO()
        write_shares(cond, buf)
        if args.out:
            p = Path(args.out)
            _write_text(p.with_name(p.stem + "_event_conditioned" + p.suffix), buf.getvalue(), m)
        else:
            sys.stdout.write("\n# event-conditioned\n" + buf.getvalue())
    return EXIT_OK


def default_truth(n_obs: int, seed: int) -> GroundTruth:
    """Demo data-generating process over trace features plus event covariates."""
    spec = ModelSpec((
        Term("cv_long_dec", "SC"),
        Term("cv_lat_acc", "PRC"),
        Term("mean_speed", "MC", True, "normal", ("at_fault",)),
        Term("both_hands", "MC"),
        Term("at_fault", "SC"),
    ))
    theta = [-0.6, -1.6, -2.8, 1.4, 0.8, 0.03, -0.5, -0.9, 0.025, -0.02]
    gens = {"at_fault": bernoulli(0.85), "both_hands": bernoulli(0.5), "dur1": uniform(0.0, 10.0)}
    return GroundTruth(spec, theta, gens, n_obs, seed)


def cmd_simulate(args, m: RunManifest) -> int:
    seed = 0 if args.seed is None else args.seed
    m.seed = seed
    m.options.update(n=args.n, noise_sd=args.noise_sd)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.truth:
        m.inputs["truth"] = args.truth
        with open(args.truth, encoding="utf-8") as fh:
            truth = truth_from_dict(json.load(fh))
        truth = GroundTruth(truth.spec, truth.theta, truth.generators, args.n, seed)
    else:
        truth = default_truth(args.n, seed)

    traces = simulate_traces(random_profiles(args.n, seed), args.noise_sd, seed)
    with open(out / "traces.csv", "w", encoding="utf-8", newline="") as fh:
        write_traces(traces, fh)
    m.outputs.append(str(out / "traces.csv"))

    feats = [extract_features(t) for t in traces]
    given = {}
    for v in truth.spec.variables():
        if v in feats[0].values:
            col = np.array([f[v] for f in feats])
            # The DGP needs a value for every event; short traces get the column mean.
            col[np.isnan(col)] = np.nanmean(col)
            given[v] = col
    data = simulate_events(truth, given)
    ids = [t.event_id for t in traces]
    generated = sorted(truth.generators)
    lines = ["event_id,severity," + ",".join(generated)]
    for i, eid in enumerate(ids):
        lines.append(",".join([eid, data.outcome[i]] + [repr(float(data[c][i])) for c in generated]))
    _write_text(out / "events.csv", "\n".join(lines) + "\n", m)
    _write_text(out / "truth.json", truth.to_json() + "\n", m)
    spec_doc = truth.spec.to_dict()
    spec_doc["options"] = {"draws": 200, "seed": seed}
    _write_text(out / "spec.json", json.dumps(spec_doc, indent=2) + "\n", m)
    return EXIT_OK


# --- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="single source of randomness")
    common.add_argument("--threads", type=int, default=None, help="numba worker threads")
    common.add_argument("--out", default=None, help="output file or directory")
    common.add_argument("--manifest", default=None, help="manifest path (default derived from --out)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="crashvol", description=__doc__.splitlines()[0], parents=[common])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("features", parents=[common], help="trace CSV -> volatility feature CSV")
    s.add_argument("traces")
    s.add_argument("--bin-length", type=float, default=10.0)
    s.add_argument("--min-bin-samples", type=int, default=20)
    s.add_argument("--min-side-samples", type=int, default=5)
    s.set_defaults(func=cmd_features, out_required=True)

    s = sub.add_parser("describe", parents=[common], help="N/mean/SD/min/max per column")
    s.add_argument("tables", nargs="+")
    s.add_argument("--key", default="event_id")
    s.add_argument("--columns", default=None, help="comma-separated subset")
    s.add_argument("--vif", default=None, help="comma-separated variables for VIF")
    s.set_defaults(func=cmd_describe)

    s = sub.add_parser("fit", parents=[common], help="estimate a model spec")
    s.add_argument("--events", required=True)
    s.add_argument("--features", default=None)
    s.add_argument("--spec", required=True)
    s.add_argument("--draws", type=int, default=None)
    s.add_argument("--label", default=None)
    s.set_defaults(func=cmd_fit, out_required=True)

    s = sub.add_parser("compare", parents=[common], help="goodness-of-fit comparison")
    s.add_argument("results", nargs="+")
    s.add_argument("--labels", default=None)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("margins", parents=[common], help="direct marginal effects")
    s.add_argument("--result", required=True)
    s.add_argument("--events", required=True)
    s.add_argument("--features", default=None)
    s.add_argument("--unit-difference", action="store_true")
    s.set_defaults(func=cmd_margins)

    s = sub.add_parser("shares", parents=[common], help="directional heterogeneity of random terms")
    s.add_argument("results", nargs="+")
    s.add_argument("--labels", default=None)
    s.add_argument("--events", default=None, help="also write event-conditioned shares")
    s.add_argument("--features", default=None)
    s.set_defaults(func=cmd_shares)

    s = sub.add_parser("simulate", parents=[common], help="synthetic traces + events + ground truth")
    s.add_argument("--n", type=int, default=671)
    s.add_argument("--truth", default=None, help="ground-truth JSON (default: built-in demo)")
    s.add_argument("--noise-sd", type=float, default=0.3)
    s.set_defaults(func=cmd_simulate, out_required=True)
    return p


def _manifest_path(args) -> Path:
    if args.manifest:
        return Path(args.manifest)
    if args.out:
        out = Path(args.out)
        if args.command in ("fit", "simulate"):
            return out / "manifest.json"
        return out.with_name(out.name + ".manifest.json")
    return Path(f"crashvol-{args.command}.manifest.json")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _config.set_threads(args.threads)
    m = RunManifest(command=args.command, seed=args.seed)
    m.notes["backend"] = "numba" if _config.USE_NUMBA else "numpy"
    m.options["argv"] = list(sys.argv[1:] if argv is None else argv)
    t0 = time.perf_counter()
    code = EXIT_OK
    try:
        if getattr(args, "out_required", False) and not args.out:
            raise ValidationError(f"{args.command} requires --out")
        code = args.func(args, m)
    except ValidationError as e:
        code, m.error = EXIT_VALIDATION, str(e)
    except (OSError, UnicodeDecodeError) as e:
        code, m.error = EXIT_IO, f"{type(e).__name__}: {e}"
    m.exit_code = code
    m.status = {EXIT_OK: "ok", EXIT_IO: "io-error", EXIT_VALIDATION: "validation-error",
                EXIT_NONCONVERGENCE: "not-converged"}[code]
    m.wall_time_s = time.perf_counter() - t0
    try:
        m.write(_manifest_path(args))
    except OSError as e:
        print(f"crashvol: could not write manifest: {e}", file=sys.stderr)
    if m.error:
        print(f"crashvol {args.command}: {m.error}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
