"""Spec validation, threshold resolution, and the aggregate runner."""

import json
import math
import os

import numpy as np
import pytest

from seqmultitest.calibration import Thresholds, analytic_thresholds_gfwer
from seqmultitest.engine import PURPOSE_MAIN, purpose_seed, simulate_paths
from seqmultitest.harness import (
    BOUNDARY_SWEEP,
    ExperimentSpec,
    ProcedureRequest,
    SpecError,
    resolve_procedure,
    run_experiment,
    run_trial,
    spec_hash,
    validate_spec,
)
from seqmultitest.models import CompositeGaussianMean, GaussianMean, StreamBank
from seqmultitest.procedures import Mnp, SumIntersection
from seqmultitest.theory import GfwerBudget, GmisBudget, solve_h_d

GAUSS3 = StreamBank((GaussianMean(0.6),) * 3)


def _spec(**overrides):
    base = dict(
        bank=GAUSS3,
        budget=GfwerBudget(1, 1, 0.1, 0.1),
        procedures=(ProcedureRequest("leap"),),
    )
    base.update(overrides)
    return ExperimentSpec(**base)


def test_validate_spec_collects_everything():
    spec = _spec(
        budget=GfwerBudget(2, 2, 0.1, 0.1),
        procedures=(
            ProcedureRequest("spectral"),
            ProcedureRequest("leap", n=5),
            ProcedureRequest("leap", thresholds="magic"),
            ProcedureRequest("leap_star"),
        ),
        truths=((0.0, 0.0), (1.0, 1.0, 1.0)),
        trials=0,
        cap=0,
    )
    with pytest.raises(SpecError) as err:
        validate_spec(spec)
    text = "\n".join(err.value.messages)
    assert "k1 + k2 must be <= J=3" in text
    assert "trials must be at least 1" in text
    assert "cap must be at least 1" in text
    assert "procedure #1 (spectral): unknown label" in text
    assert "procedure #2 (leap): n and h apply only to mnp" in text
    assert "procedure #3 (leap): threshold source must be" in text
    assert "procedure #4 (leap_star): adaptive rule needs composite streams" in text
    assert "each truth must assign one value per stream" in text


def test_validate_spec_fixed_sample_rules():
    # explicit n under the default source is the normal way to run mnp
    validate_spec(_spec(procedures=(ProcedureRequest("mnp", n=40),)))
    validate_spec(
        _spec(procedures=(ProcedureRequest("mnp", thresholds="calibrated"),))
    )
    bad = {
        "thresholds flag": ProcedureRequest("mnp", thresholds=Thresholds(1.0, 1.0)),
        "no sample size": ProcedureRequest("mnp"),
        "n with calibrated": ProcedureRequest("mnp", thresholds="calibrated", n=40),
        "non-positive n": ProcedureRequest("mnp", n=0),
        "short h": ProcedureRequest("mnp", n=40, h=(0.0,)),
    }
    for reason, req in bad.items():
        with pytest.raises(SpecError, match="mnp"):
            validate_spec(_spec(procedures=(req,)))
    assert list(bad)  # silence the unused-variable linters


def test_validate_spec_composite_pairings():
    comp = StreamBank((CompositeGaussianMean(0.4),) * 3)
    for label in ("sum_intersection", "asym_sum_intersection", "leap"):
        with pytest.raises(SpecError, match="adaptive statistics"):
            validate_spec(
                _spec(bank=comp, procedures=(ProcedureRequest(label),))
            )
    validate_spec(
        _spec(
            bank=comp,
            procedures=(ProcedureRequest("leap_star"), ProcedureRequest("intersection")),
        )
    )
    with pytest.raises(SpecError, match="truths must be explicit"):
        validate_spec(_spec(truths="everything"))


def test_spec_hash_tracks_inputs_but_not_output_path():
    spec = _spec()
    h = spec_hash(spec)
    assert len(h) == 12 and int(h, 16) >= 0
    assert spec_hash(_spec()) == h
    assert spec_hash(_spec(out="elsewhere")) == h
    assert spec_hash(_spec(seed=1)) != h
    assert spec_hash(_spec(trials=19_999)) != h
    assert spec_hash(_spec(truths=((0.0, 0.0, 0.0),))) != h
    assert spec_hash(_spec(procedures=(ProcedureRequest("intersection"),))) != h


def test_run_trial_fixed_sample_never_aborts():
    spec = _spec(cap=500)
    t, decision, aborted = run_trial(spec, Mnp(12, (0.0, 0.0, 0.0)), (1.0, 0.0, 1.0), 0)
    assert t == 12
    assert not aborted
    assert decision <= {0, 1, 2}


def test_run_trial_degenerate_threshold_stops_immediately():
    spec = _spec(cap=500)
    for trial in range(5):
        t, _, aborted = run_trial(
            spec, SumIntersection(1, 1e-6), (0.0, 0.0, 0.0), trial
        )
        assert t == 1
        assert not aborted


def test_stopping_times_grow_with_the_threshold():
    bank = StreamBank((GaussianMean(0.5),) * 2)
    seed = purpose_seed(3, PURPOSE_MAIN)
    truth = [np.array([1.0, 0.0])]
    t_low = simulate_paths(bank, SumIntersection(1, 1.5), truth, 200, seed, 2000)[0][0]
    t_high = simulate_paths(bank, SumIntersection(1, 3.0), truth, 200, seed, 2000)[0][0]
    assert np.all(t_low <= t_high)
    assert (t_low < t_high).any()


def test_resolve_procedure_sources():
    spec = _spec()
    analytic = resolve_procedure(ProcedureRequest("leap"), spec)
    assert analytic.source == "analytic"
    want = analytic_thresholds_gfwer(0.1, 0.1, 3, 1, 1)
    assert analytic.procedure.a == pytest.approx(want.a)
    assert analytic.procedure.b == pytest.approx(want.b)
    assert analytic.calibration is None

    explicit = resolve_procedure(
        ProcedureRequest("intersection", thresholds=Thresholds(2.0, 3.0)), spec
    )
    assert explicit.source == "explicit"
    assert explicit.description == {"a": 2.0, "b": 3.0}

    fixed = resolve_procedure(ProcedureRequest("mnp", n=15), spec)
    assert fixed.source == "explicit"
    assert fixed.procedure == Mnp(15, (0.0, 0.0, 0.0))


def test_resolve_procedure_calibrates_thresholds():
    spec = _spec(
        bank=StreamBank((GaussianMean(0.5),) * 3),
        budget=GmisBudget(1, 0.1),
        procedures=(ProcedureRequest("sum_intersection", thresholds="calibrated"),),
        trials=1500,
        seed=4,
    )
    res = resolve_procedure(spec.procedures[0], spec)
    assert res.source == "calibrated"
    assert res.calibration is not None
    assert res.procedure == SumIntersection(1, res.calibration.thresholds.b)


def test_resolve_procedure_calibrated_fixed_sample_cuts():
    simple = _spec(
        bank=StreamBank((GaussianMean(0.5),) * 2),
        budget=GmisBudget(1, 0.1),
        procedures=(ProcedureRequest("mnp", thresholds="calibrated"),),
        trials=500,
        seed=2,
    )
    res = resolve_procedure(simple.procedures[0], simple)
    assert res.source == "calibrated"
    assert res.procedure.h == (0.0, 0.0)
    assert res.procedure.n >= 1

    skew = _spec(
        bank=StreamBank((GaussianMean(0.5),) * 2),
        budget=GfwerBudget(1, 1, 0.05, 0.2),
        procedures=(ProcedureRequest("mnp", thresholds="calibrated"),),
        trials=400,
        seed=2,
    )
    res = resolve_procedure(skew.procedures[0], skew)
    root, _ = solve_h_d(GaussianMean(0.5), math.log(0.05) / math.log(0.2))
    assert res.procedure.h == (root, root)

    comp = _spec(
        bank=StreamBank((CompositeGaussianMean(0.5),) * 2),
        budget=GmisBudget(1, 0.1),
        procedures=(ProcedureRequest("mnp", thresholds="calibrated"),),
        trials=500,
        seed=2,
    )
    res = resolve_procedure(comp.procedures[0], comp)
    # composite cuts default to the midpoint of the hypothesis gap
    assert res.procedure.h == (0.25, 0.25)

    lopsided = _spec(
        bank=StreamBank((CompositeGaussianMean(0.5),) * 2),
        budget=GfwerBudget(1, 1, 0.05, 0.2),
        procedures=(ProcedureRequest("mnp", thresholds="calibrated"),),
    )
    with pytest.raises(SpecError, match="explicit mnp cut"):
        resolve_procedure(lopsided.procedures[0], lopsided)


def test_run_experiment_end_to_end(tmp_path):
    out = str(tmp_path / "run")
    spec = _spec(
        procedures=(
            ProcedureRequest("leap"),
            ProcedureRequest("intersection", thresholds=Thresholds(2.5, 2.5)),
            ProcedureRequest("mnp", n=20),
        ),
        truths=((1.0, 0.0, 0.0), (1.0, 1.0, 1.0)),
        trials=300,
        seed=6,
        cap=2000,
        out=out,
    )
    results = run_experiment(spec)
    assert [(r.procedure, r.truth) for r in results] == [
        ("leap", (1.0, 0.0, 0.0)),
        ("leap", (1.0, 1.0, 1.0)),
        ("intersection", (1.0, 0.0, 0.0)),
        ("intersection", (1.0, 1.0, 1.0)),
        ("mnp", (1.0, 0.0, 0.0)),
        ("mnp", (1.0, 1.0, 1.0)),
    ]
    assert [r.source for r in results] == [
        "analytic", "analytic", "explicit", "explicit", "explicit", "explicit",
    ]
    for r in results:
        assert r.stopped + r.aborted == r.trials == 300
        fp = r.error("false_positives")
        # ci_low can exceed a zero estimate by an ulp
        assert 0.0 <= fp.ci_low <= fp.estimate + 1e-12
        assert fp.estimate <= fp.ci_high <= 1.0
        assert {e.metric for e in r.errors} == {"false_positives", "false_negatives"}
    for r in results[4:]:
        assert r.ess == 20.0
        assert r.ess_ci_half == 0.0

    path = os.path.join(out, "results.json")
    with open(path) as fh:
        doc = json.load(fh)
    assert doc["config_hash"] == spec_hash(spec)
    assert doc["seed"] == 6
    assert doc["trials"] == 300
    assert doc["budget"]["kind"] == "familywise"
    assert [p["label"] for p in doc["procedures"]] == ["leap", "intersection", "mnp"]
    assert all(p["calibration"] is None for p in doc["procedures"])
    assert len(doc["results"]) == 6

    again = run_experiment(spec)
    assert [(r.sum_t, r.aborted, r.errors) for r in again] == [
        (r.sum_t, r.aborted, r.errors) for r in results
    ]


def test_run_experiment_boundary_sweep_defaults():
    gmis = _spec(
        bank=StreamBank((GaussianMean(0.6),) * 3),
        budget=GmisBudget(1, 0.1),
        procedures=(ProcedureRequest("sum_intersection"),),
        trials=50,
        cap=500,
    )
    results = run_experiment(gmis)
    # sign symmetry collapses the mistake-rate sweep to the all-null row
    assert [r.truth for r in results] == [(0.0, 0.0, 0.0)]

    gfwer = _spec(trials=50, cap=500)
    per_count = run_experiment(gfwer)
    assert [sum(r.truth) for r in per_count] == [0.0, 1.0, 2.0, 3.0]


def test_run_experiment_composite_ess_offset():
    bank = StreamBank((CompositeGaussianMean(0.5, 4),) * 2)
    spec = _spec(
        bank=bank,
        budget=GmisBudget(1, 0.1),
        procedures=(
            ProcedureRequest("intersection", thresholds=Thresholds(2.0, 2.0)),
            ProcedureRequest("mnp", n=15, h=(0.25, 0.25)),
        ),
        truths=((0.5, 0.0),),
        trials=200,
        cap=2000,
    )
    seq, fixed = run_experiment(spec)
    # sequential rules pay for the initial estimation sample
    assert seq.ess == pytest.approx(seq.sum_t / seq.trials + 4)
    assert fixed.ess == 15.0


def test_run_experiment_reports_capped_cells_as_infinite():
    spec = _spec(
        procedures=(ProcedureRequest("intersection", thresholds=Thresholds(50.0, 50.0)),),
        truths=((0.0, 0.0, 0.0),),
        trials=40,
        cap=80,
    )
    (r,) = run_experiment(spec)
    assert r.aborted == 40
    assert r.stopped == 0
    assert r.ess == math.inf
    assert r.ess_ci_half == math.inf
