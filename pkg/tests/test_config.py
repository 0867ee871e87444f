"""YAML config parsing: schema acceptance, defaults, and error batching."""

import math

import pytest
import yaml

from seqmultitest.calibration import Thresholds
from seqmultitest.config import ConfigError, build_spec, load_config
from seqmultitest.harness import BOUNDARY_SWEEP
from seqmultitest.models import Bernoulli, CompositeGaussianMean, GaussianMean
from seqmultitest.theory import GfwerBudget, GmisBudget

FULL = """
streams:
  - {kind: gaussian, mu: 0.5, sigma: 2.0, count: 2}
  - {kind: bernoulli, p: 0.3}
budget: {kind: familywise, k1: 1, k2: 1, alpha: 0.05, beta: 0.1}
procedures:
  - {label: leap, thresholds: calibrated}
  - {label: intersection, thresholds: {a: 2.0, b: 3.0}}
  - {label: asym_sum_intersection}
  - {label: mnp, n: 25, h: [-.inf, .inf, 0.0]}
truths:
  - [1, 0, 1]
  - [0, 0, 0]
trials: 500
seed: 9
cap: 2000
ratio: 0.5
out: results/demo
"""


def test_full_config_round_trip():
    spec = build_spec(yaml.safe_load(FULL))
    assert spec.bank.models == (
        GaussianMean(0.5, 2.0), GaussianMean(0.5, 2.0), Bernoulli(0.3),
    )
    assert spec.budget == GfwerBudget(1, 1, 0.05, 0.1)
    labels = [p.label for p in spec.procedures]
    assert labels == ["leap", "intersection", "asym_sum_intersection", "mnp"]
    assert spec.procedures[0].thresholds == "calibrated"
    assert spec.procedures[1].thresholds == Thresholds(2.0, 3.0)
    assert spec.procedures[2].thresholds == "analytic"
    assert spec.procedures[3].n == 25
    assert spec.procedures[3].h == (-math.inf, math.inf, 0.0)
    assert spec.truths == ((1.0, 0.0, 1.0), (0.0, 0.0, 0.0))
    assert (spec.trials, spec.seed, spec.cap) == (500, 9, 2000)
    assert spec.ratio == 0.5
    assert spec.out == "results/demo"


def test_minimal_config_uses_defaults():
    spec = build_spec(
        yaml.safe_load(
            """
            streams: [{kind: composite_gaussian, mu: 0.4, n0: 3, count: 2}]
            budget: {kind: mistakes, k: 1, alpha: 0.05}
            procedures: [{label: intersection}]
            """
        )
    )
    assert spec.bank.models[0] == CompositeGaussianMean(0.4, 3, 0.0)
    assert spec.bank.J == 2
    assert spec.budget == GmisBudget(1, 0.05)
    assert spec.truths == BOUNDARY_SWEEP
    assert (spec.trials, spec.seed, spec.cap) == (20_000, 0, 10_000)
    assert spec.ratio is None
    assert spec.out is None


def test_threshold_mapping_defaults_a_to_b():
    spec = build_spec(
        yaml.safe_load(
            """
            streams: [{kind: gaussian, mu: 0.5}]
            budget: {kind: mistakes, k: 1, alpha: 0.05}
            procedures: [{label: sum_intersection, thresholds: {b: 4.0}}]
            """
        )
    )
    assert spec.procedures[0].thresholds == Thresholds(4.0, 4.0)


def _problems(data) -> list[str]:
    with pytest.raises(ConfigError) as err:
        build_spec(yaml.safe_load(data))
    return err.value.messages


def test_unknown_keys_are_rejected_everywhere():
    messages = _problems(
        """
        streams: [{kind: gaussian, mu: 0.5, p: 0.3}]
        budget: {kind: mistakes, k: 1, alpha: 0.05, beta: 0.1}
        procedures: [{label: leap, speed: fast, thresholds: {b: 2.0, c: 1.0}}]
        horizon: 99
        """
    )
    text = "\n".join(messages)
    assert "streams[0]: unknown key(s) p" in text
    assert "budget: unknown key(s) beta" in text
    assert "procedures[0]: unknown key(s) speed" in text
    assert "procedures[0].thresholds: unknown key(s) c" in text
    assert "config root: unknown key(s) horizon" in text


def test_all_problems_are_collected_at_once():
    messages = _problems(
        """
        streams: [{kind: gaussian, mu: 0.0}]
        budget: {kind: mistakes, k: 0, alpha: 0.05}
        procedures: [{label: 7}]
        trials: true
        cap: 1.5
        ratio: -2
        out: 3
        """
    )
    assert len(messages) >= 6
    text = "\n".join(messages)
    assert "streams[0]" in text
    assert "budget" in text
    assert "procedures[0]: label is required" in text
    assert "trials: expected an integer, got True" in text
    assert "cap: expected an integer" in text
    assert "ratio: must be positive" in text
    assert "out: expected a path string" in text


def test_missing_required_sections():
    messages = _problems("truths: [[0.0]]")
    assert any("missing required key(s) streams, budget, procedures" in m for m in messages)
    with pytest.raises(ConfigError):
        build_spec(["not", "a", "mapping"])


def test_stream_entry_errors():
    messages = _problems(
        """
        streams:
          - {kind: laplace, mu: 0.5}
          - {kind: gaussian}
          - {kind: bernoulli, p: 0.3, count: 0}
        budget: {kind: mistakes, k: 1, alpha: 0.05}
        procedures: [{label: intersection}]
        """
    )
    text = "\n".join(messages)
    assert "streams[0]: kind must be one of" in text
    assert "streams[1]: missing required key 'mu'" in text
    assert "streams[2].count: must be at least 1" in text


def test_budget_entry_errors():
    messages = _problems(
        """
        streams: [{kind: gaussian, mu: 0.5}]
        budget: {kind: familywise, k1: 1, k2: 1, alpha: 0.05}
        procedures: [{label: leap}]
        """
    )
    assert any("budget: missing required key 'beta'" in m for m in messages)


def test_truths_errors():
    messages = _problems(
        """
        streams: [{kind: gaussian, mu: 0.5, count: 2}]
        budget: {kind: mistakes, k: 1, alpha: 0.05}
        procedures: [{label: intersection}]
        truths:
          - [0.0, 1.0, 0.0]
          - [.inf, 0.0]
          - [0.0, no]
        """
    )
    text = "\n".join(messages)
    assert "truths[0]: expected 2 values, got 3" in text
    assert "truths[1]: truth values must be finite" in text
    assert "truths[2][1]: expected a number" in text
    assert any("truths: expected" in m for m in _problems(
        """
        streams: [{kind: gaussian, mu: 0.5}]
        budget: {kind: mistakes, k: 1, alpha: 0.05}
        procedures: [{label: intersection}]
        truths: everywhere
        """
    ))


def test_procedure_h_rejects_non_numbers():
    messages = _problems(
        """
        streams: [{kind: gaussian, mu: 0.5}]
        budget: {kind: mistakes, k: 1, alpha: 0.05}
        procedures: [{label: mnp, n: 10, h: [true]}]
        """
    )
    assert any("procedures[0].h[0]: expected a number" in m for m in messages)


def test_load_config_reports_io_and_parse_failures(tmp_path):
    with pytest.raises(ConfigError) as err:
        load_config(str(tmp_path / "absent.yaml"))
    assert "cannot read config" in err.value.messages[0]
    bad = tmp_path / "bad.yaml"
    bad.write_text("streams: [unclosed\n")
    with pytest.raises(ConfigError) as err:
        load_config(str(bad))
    assert "invalid YAML" in err.value.messages[0]


def test_load_config_reads_a_file(tmp_path):
    path = tmp_path / "ok.yaml"
    path.write_text(FULL)
    spec = load_config(str(path))
    assert spec.bank.J == 3
    assert spec.trials == 500
