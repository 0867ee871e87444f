"""Command-line front end.

Four subcommands: `run` executes a config end to end, `calibrate`
resolves thresholds only, `bounds` prints the closed-form references
without simulating, and `figure` rebuilds a catalog figure's panels.
Exit codes: 0 success, 2 bad config or arguments, 3 calibration
failure, 4 abort-rate breach.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys

from .calibration import (
    ABORT_TOLERANCE,
    CalibrationError,
    analytic_threshold_gmis,
    analytic_thresholds_gfwer,
)
from .config import ConfigError, load_config
from .figures import emit_figure, figure_ids
from .harness import (
    BOUNDARY_SWEEP,
    ExperimentSpec,
    SpecError,
    resolve_procedure,
    run_experiment,
    spec_hash,
    validate_spec,
)
from .models import GaussianMean, StreamBank
from .theory import (
    GfwerBudget,
    GmisBudget,
    InformationProfile,
    big_l,
    d_a_k,
    fixed_sample_ratios,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CALIBRATION = 3
EXIT_ABORT_RATE = 4


def _load(path: str, out: str | None = None) -> ExperimentSpec:
    spec = load_config(path)
    if out is not None:
        spec = dataclasses.replace(spec, out=out)
    validate_spec(spec)
    return spec


def _emit(doc: dict, path: str | None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if path is None:
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")
        print(f"wrote {path}")


def _cmd_run(args: argparse.Namespace) -> int:
    spec = _load(args.config, args.out)
    results = run_experiment(spec, workers=args.workers)
    breach = False
    for r in results:
        errs = "  ".join(
            f"{e.metric}={e.estimate:.4g} [{e.ci_low:.4g}, {e.ci_high:.4g}]"
            for e in r.errors
        )
        ess = "inf" if math.isinf(r.ess) else f"{r.ess:.2f}+-{r.ess_ci_half:.2f}"
        print(
            f"{r.procedure:<22} ({r.source})  truth={r.truth}  "
            f"ESS={ess}  {errs}"
        )
        if r.aborted > ABORT_TOLERANCE * r.trials:
            breach = True
    if spec.out:
        print(f"results written under {spec.out}")
    if breach:
        print("abort-rate tolerance exceeded in at least one cell", file=sys.stderr)
        return EXIT_ABORT_RATE
    return EXIT_OK


def _cmd_calibrate(args: argparse.Namespace) -> int:
    spec = _load(args.config)
    entries = []
    unreliable = False
    for req in spec.procedures:
        if req.thresholds != "calibrated":
            continue
        res = resolve_procedure(req, spec, workers=args.workers)
        entry: dict = {"label": res.label, "thresholds": res.description}
        if res.calibration is not None:
            entry["report"] = res.calibration.to_json_dict()
            unreliable = unreliable or res.calibration.unreliable
        entries.append(entry)
    doc = {
        "config_hash": spec_hash(spec),
        "seed": spec.seed,
        "trials": spec.trials,
        "procedures": entries,
    }
    _emit(doc, args.out)
    if not entries:
        print("no procedure requests calibrated thresholds", file=sys.stderr)
    if unreliable:
        print("abort-rate tolerance exceeded during calibration", file=sys.stderr)
        return EXIT_ABORT_RATE
    return EXIT_OK


def _signal_set(truth: tuple[float, ...], spec: ExperimentSpec) -> frozenset[int]:
    if spec.bank.is_composite:
        mus = [m.mu for m in spec.bank.models]
        return frozenset(j for j, v in enumerate(truth) if v >= mus[j])
    return frozenset(j for j, v in enumerate(truth) if v > 0.0)


def _cmd_bounds(args: argparse.Namespace) -> int:
    spec = _load(args.config)
    budget = spec.budget
    J = spec.bank.J
    doc: dict = {
        "config_hash": spec_hash(spec),
        "seed": spec.seed,
        "J": J,
    }
    if spec.bank.is_composite:
        # Composite boundaries carry the information of the simple
        # zero-versus-mu problem; the closed forms are reported there.
        surrogate = StreamBank(
            tuple(GaussianMean(m.mu) for m in spec.bank.models)
        )
        profile = InformationProfile.from_bank(surrogate)
        doc["information"] = "composite boundary (theta in {0, mu})"
    else:
        profile = InformationProfile.from_bank(spec.bank)
    analytic = {}
    for req in spec.procedures:
        if req.label == "mnp" or req.label in analytic:
            continue
        intersection = req.label == "intersection"
        if isinstance(budget, GmisBudget):
            th = analytic_threshold_gmis(
                budget.alpha, J, budget.k, intersection=intersection
            )
        else:
            th = analytic_thresholds_gfwer(
                budget.alpha, budget.beta, J, budget.k1, budget.k2,
                intersection=intersection,
            )
        analytic[req.label] = {"a": th.a, "b": th.b}
    doc["analytic_thresholds"] = analytic
    truths = (
        [(0.0,) * J] if spec.truths == BOUNDARY_SWEEP
        else [tuple(t) for t in spec.truths]
    )
    slopes = []
    for truth in truths:
        A = _signal_set(truth, spec)
        if isinstance(budget, GmisBudget):
            d = d_a_k(profile, A, budget.k)
            slope = {"truth": list(truth), "d_a_k": float(d),
                     "ess_slope": float(1 / d) if d != math.inf else None}
        else:
            slope = {"truth": list(truth),
                     "first_order_ess": big_l(profile, A, budget)}
        try:
            slope["fixed_sample"] = fixed_sample_ratios(profile, A, budget)
        except ValueError as err:
            slope["fixed_sample"] = {"unavailable": str(err)}
        slopes.append(slope)
    doc["first_order"] = slopes
    _emit(doc, args.out)
    return EXIT_OK


def _cmd_figure(args: argparse.Namespace) -> int:
    written = emit_figure(
        args.id,
        args.out,
        scale=args.scale,
        seed=args.seed,
        workers=args.workers,
    )
    for path in written:
        print(path)
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqmultitest",
        description="Sequential multiple testing: run, calibrate, bound, plot.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a config end to end")
    run.add_argument("config", help="YAML experiment config")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--out", help="override the config's output directory")
    run.set_defaults(func=_cmd_run)

    cal = sub.add_parser("calibrate", help="resolve calibrated thresholds only")
    cal.add_argument("config", help="YAML experiment config")
    cal.add_argument("--workers", type=int, default=1)
    cal.add_argument("--out", help="write the JSON report here instead of stdout")
    cal.set_defaults(func=_cmd_calibrate)

    bounds = sub.add_parser("bounds", help="closed-form references, no simulation")
    bounds.add_argument("config", help="YAML experiment config")
    bounds.add_argument("--out", help="write the JSON report here instead of stdout")
    bounds.set_defaults(func=_cmd_bounds)

    fig = sub.add_parser("figure", help="rebuild a catalog figure")
    fig.add_argument("id", help=f"one of: {', '.join(figure_ids())}")
    fig.add_argument("--scale", type=float, default=1.0,
                     help="trial-count factor; grid points the scaled run "
                          "cannot resolve are dropped")
    fig.add_argument("--seed", type=int, default=0)
    fig.add_argument("--workers", type=int, default=1)
    fig.add_argument("--out", default="figures", help="output directory")
    fig.set_defaults(func=_cmd_figure)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        for msg in err.messages:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except SpecError as err:
        for msg in err.messages:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except CalibrationError as err:
        print(f"calibration failed: {err}", file=sys.stderr)
        for key, value in err.diagnostics.items():
            print(f"  {key}: {value}", file=sys.stderr)
        return EXIT_CALIBRATION
    except ValueError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
