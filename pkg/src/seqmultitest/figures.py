"""Reproduction datasets for the four simulation studies.

Every catalog entry rebuilds one study figure at desk scale: thresholds
are calibrated per error-grid point, the expected sample size is then
evaluated under the figure's truth, and each panel is written as a CSV
with a rendered PNG next to it. Error-grid panels carry the columns
(abs_log10_err, series, y, y_ci_half); stopping-time panels carry
(t, series, count). The first line of every CSV records the figure
hash and master seed.

A scale factor shrinks the trial count and drops grid targets whose
calibration would cost far more than the shrunken run itself, so quick
passes stay quick without quietly running at full size.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .calibration import DEFAULT_CAP, MIN_EXPECTED_ERRORS
from .engine import PURPOSE_MAIN, purpose_seed, simulate
from .harness import (
    ExperimentSpec,
    ProcedureRequest,
    resolve_procedure,
    run_experiment,
)
from .models import CompositeGaussianMean, GaussianMean, StreamBank
from .theory import GfwerBudget, GmisBudget, InformationProfile, big_l, d_a_k

ERR_GRID = (1e-1, 1e-2, 1e-3)
DEFAULT_TRIALS = 20_000

_GRID_COLUMNS = ("abs_log10_err", "series", "y", "y_ci_half")
_HIST_COLUMNS = ("t", "series", "count")


@dataclass(frozen=True)
class Panel:
    name: str
    columns: tuple[str, ...]
    rows: list[tuple]
    ylabel: str


def scaled_trials(scale: float) -> int:
    if scale <= 0.0:
        raise ValueError(f"scale must be positive, got {scale}")
    return max(100, int(round(DEFAULT_TRIALS * scale)))


def usable_targets(targets: tuple[float, ...], trials: int) -> list[float]:
    """Error targets whose calibration stays near the trial budget; never empty.

    Calibration raises its internal trial count until a target error
    yields MIN_EXPECTED_ERRORS expected events per run. A target is kept
    while that bump is at most half again the requested size, the same
    overrun the full-size study accepts at its deepest grid point.
    """
    keep = [
        e for e in targets
        if math.ceil(MIN_EXPECTED_ERRORS / e) <= 1.5 * trials
    ]
    return keep or [max(targets)]


def _grid_rows(
    bank: StreamBank,
    budget_for,
    requests: tuple[ProcedureRequest, ...],
    truth: tuple[float, ...],
    grid: list[float],
    trials: int,
    seed: int,
    workers: int,
) -> list[tuple]:
    rows = []
    for err in grid:
        spec = ExperimentSpec(
            bank=bank,
            budget=budget_for(err),
            procedures=requests,
            truths=(truth,),
            trials=trials,
            seed=seed,
            cap=DEFAULT_CAP,
        )
        x = abs(math.log10(err))
        for result in run_experiment(spec, workers=workers):
            rows.append((x, result.procedure, result.ess, result.ess_ci_half))
    return rows


def _normalized(rows: list[tuple], norm_for) -> list[tuple]:
    out = []
    for x, series, y, ci in rows:
        norm = norm_for(x)
        out.append((x, series, y / norm, ci / norm))
    return out


def _leap_histogram(
    bank: StreamBank,
    budget: GfwerBudget,
    truth: tuple[float, ...],
    trials: int,
    seed: int,
    workers: int,
) -> list[tuple]:
    spec = ExperimentSpec(
        bank=bank,
        budget=budget,
        procedures=(ProcedureRequest("leap", thresholds="calibrated"),),
        truths=(truth,),
        trials=trials,
        seed=seed,
        cap=DEFAULT_CAP,
    )
    res = resolve_procedure(spec.procedures[0], spec, workers=workers)
    counters = simulate(
        bank,
        res.procedure,
        [np.asarray(truth)],
        trials,
        purpose_seed(seed, PURPOSE_MAIN),
        DEFAULT_CAP,
        workers=workers,
        want_hist=True,
    )
    hist = counters[0].t_hist
    return [(t, "leap", int(c)) for t, c in enumerate(hist) if c]


def _figure_51(trials: int, seed: int, workers: int):
    """Homogeneous two-sided familywise study: J=20, mu=0.25, k1=k2=2.

    Panel (a) compares all four rules under ten signals; panels (b) and
    (c) are the leap rule's stopping-time histograms at the five and one
    percent error levels.
    """
    bank = StreamBank((GaussianMean(0.25),) * 20)
    truth = (1.0,) * 10 + (0.0,) * 10
    requests = (
        ProcedureRequest("leap", thresholds="calibrated"),
        ProcedureRequest("intersection", thresholds="calibrated"),
        ProcedureRequest("asym_sum_intersection", thresholds="calibrated"),
        ProcedureRequest("mnp", thresholds="calibrated"),
    )
    grid = usable_targets(ERR_GRID, trials)
    rows = _grid_rows(
        bank, lambda e: GfwerBudget(2, 2, e, e), requests, truth,
        grid, trials, seed, workers,
    )
    panels = [Panel("a", _GRID_COLUMNS, rows, "ESS")]
    hist_errs = []
    for name, err in (("b", 0.05), ("c", 0.01)):
        if math.ceil(MIN_EXPECTED_ERRORS / err) > 1.5 * trials:
            continue
        hist_errs.append(err)
        hrows = _leap_histogram(
            bank, GfwerBudget(2, 2, err, err), truth, trials, seed, workers
        )
        panels.append(Panel(name, _HIST_COLUMNS, hrows, "trials"))
    payload = {
        "figure": "5.1",
        "mu": [0.25] * 20,
        "k1": 2,
        "k2": 2,
        "truth": list(truth),
        "grid": grid,
        "histogram_errs": hist_errs,
    }
    return panels, payload


def _figure_52(trials: int, seed: int, workers: int):
    """Non-homogeneous familywise study: two weak streams among eight
    strong ones, with the fixed-sample rule giving up one stream in each
    direction through infinite cuts. Panel (b) divides the expected
    sample size by its first-order optimal slope."""
    mus = (1.0 / 6.0, 1.0 / 6.0) + (0.5,) * 8
    bank = StreamBank(tuple(GaussianMean(m) for m in mus))
    truth = (0.0,) * 5 + (1.0,) * 5
    signals = frozenset(j for j, v in enumerate(truth) if v > 0.0)
    sentinel = (-math.inf, math.inf) + (0.0,) * 8
    requests = (
        ProcedureRequest("leap", thresholds="calibrated"),
        ProcedureRequest("intersection", thresholds="calibrated"),
        ProcedureRequest("asym_sum_intersection", thresholds="calibrated"),
        ProcedureRequest("mnp", thresholds="calibrated", h=sentinel),
    )
    grid = usable_targets(ERR_GRID, trials)
    rows = _grid_rows(
        bank, lambda e: GfwerBudget(2, 2, e, e), requests, truth,
        grid, trials, seed, workers,
    )
    profile = InformationProfile.from_bank(bank)

    def norm_for(x: float) -> float:
        err = 10.0 ** (-x)
        return big_l(profile, signals, GfwerBudget(2, 2, err, err))

    panels = [
        Panel("a", _GRID_COLUMNS, rows, "ESS"),
        Panel(
            "b", _GRID_COLUMNS, _normalized(rows, norm_for),
            "ESS / first-order slope",
        ),
    ]
    payload = {
        "figure": "5.2",
        "mu": list(mus),
        "k1": 2,
        "k2": 2,
        "truth": list(truth),
        "mnp_h": list(sentinel),
        "grid": grid,
    }
    return panels, payload


def _figure_a2(trials: int, seed: int, workers: int):
    """Non-homogeneous total-mistakes study: one weak stream among nine
    strong ones, k=2. The expected sample size does not depend on the
    signal set here, so everything runs under the all-null truth."""
    mus = (1.0 / 6.0,) + (0.5,) * 9
    bank = StreamBank(tuple(GaussianMean(m) for m in mus))
    truth = (0.0,) * 10
    requests = (
        ProcedureRequest("sum_intersection", thresholds="calibrated"),
        ProcedureRequest("intersection", thresholds="calibrated"),
        ProcedureRequest("mnp", thresholds="calibrated"),
    )
    grid = usable_targets(ERR_GRID, trials)
    rows = _grid_rows(
        bank, lambda e: GmisBudget(2, e), requests, truth,
        grid, trials, seed, workers,
    )
    profile = InformationProfile.from_bank(bank)
    slope = 1.0 / float(d_a_k(profile, frozenset(), 2))

    def norm_for(x: float) -> float:
        return slope * abs(math.log(10.0 ** (-x)))

    panels = [
        Panel("a", _GRID_COLUMNS, rows, "ESS"),
        Panel(
            "b", _GRID_COLUMNS, _normalized(rows, norm_for),
            "ESS / first-order slope",
        ),
    ]
    payload = {
        "figure": "A.2",
        "mu": list(mus),
        "k": 2,
        "truth": list(truth),
        "grid": grid,
    }
    return panels, payload


def _figure_e4(trials: int, seed: int, workers: int):
    """Composite-hypothesis study: J=20, boundary gap mu=0.2, an initial
    sample of ten charged to the sequential rules, and the fixed-sample
    rule cutting at mu/2. The evaluation truth sits off the boundary;
    panel (b) re-plots the adaptive leap rule against the fixed-sample
    rule alone."""
    bank = StreamBank((CompositeGaussianMean(0.2, 10, 0.0),) * 20)
    truth = (0.7,) * 10 + (-0.3,) * 9 + (0.0,)
    requests = (
        ProcedureRequest("leap_star", thresholds="calibrated"),
        ProcedureRequest("intersection", thresholds="calibrated"),
        ProcedureRequest("mnp", thresholds="calibrated", h=(0.1,) * 20),
    )
    grid = usable_targets(ERR_GRID, trials)
    rows = _grid_rows(
        bank, lambda e: GfwerBudget(2, 2, e, e), requests, truth,
        grid, trials, seed, workers,
    )
    pair = [r for r in rows if r[1] in ("leap_star", "mnp")]
    panels = [
        Panel("a", _GRID_COLUMNS, rows, "ESS"),
        Panel("b", _GRID_COLUMNS, pair, "ESS"),
    ]
    payload = {
        "figure": "E.4",
        "mu": [0.2] * 20,
        "n0": 10,
        "k1": 2,
        "k2": 2,
        "truth": list(truth),
        "mnp_h": [0.1] * 20,
        "grid": grid,
    }
    return panels, payload


_CATALOG = {
    "5.1": _figure_51,
    "5.2": _figure_52,
    "A.2": _figure_a2,
    "E.4": _figure_e4,
}


def figure_ids() -> list[str]:
    return sorted(_CATALOG)


def _digest(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _write_csv(
    path: str, panel: Panel, digest: str, seed: int
) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={digest} seed={seed}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(panel.columns)
        writer.writerows(panel.rows)


def _render_png(
    path: str, panel: Panel, figure_id: str, note: str
) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    if panel.columns is _HIST_COLUMNS:
        labels = list(dict.fromkeys(r[1] for r in panel.rows))
        for label in labels:
            ts = [r[0] for r in panel.rows if r[1] == label]
            counts = [r[2] for r in panel.rows if r[1] == label]
            ax.bar(ts, counts, width=1.0, label=label)
        ax.set_xlabel("stopping time")
    else:
        labels = list(dict.fromkeys(r[1] for r in panel.rows))
        for label in labels:
            pts = [
                (x, y, ci)
                for x, s, y, ci in panel.rows
                if s == label and math.isfinite(y)
            ]
            if not pts:
                continue
            xs, ys, cis = zip(*pts)
            ax.errorbar(xs, ys, yerr=cis, marker="o", capsize=3, label=label)
        ax.set_xlabel(r"$|\log_{10}(\mathrm{Err})|$")
    ax.set_ylabel(panel.ylabel)
    ax.set_title(f"Figure {figure_id} ({panel.name})")
    ax.legend()
    fig.text(0.99, 0.01, note, ha="right", va="bottom", fontsize=6, color="gray")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def emit_figure(
    figure_id: str,
    out_dir: str,
    *,
    scale: float = 1.0,
    seed: int = 0,
    workers: int = 1,
) -> list[str]:
    """Build one catalog figure; returns the paths written."""
    if figure_id not in _CATALOG:
        known = ", ".join(sorted(_CATALOG))
        raise ValueError(f"unknown figure id {figure_id!r}; catalog: {known}")
    trials = scaled_trials(scale)
    panels, payload = _CATALOG[figure_id](trials, seed, workers)
    payload.update({"trials": trials, "seed": seed, "cap": DEFAULT_CAP})
    digest = _digest(payload)
    os.makedirs(out_dir, exist_ok=True)
    tag = figure_id.replace(".", "_").lower()
    note = f"config_hash={digest} seed={seed} trials={trials}"
    written = []
    for panel in panels:
        stem = os.path.join(out_dir, f"figure_{tag}_panel_{panel.name}")
        _write_csv(stem + ".csv", panel, digest, seed)
        _render_png(stem + ".png", panel, figure_id, note)
        written.extend([stem + ".csv", stem + ".png"])
    return written
