"""Experiment configs from YAML files.

The schema mirrors `ExperimentSpec` one key at a time; anything not in
the schema is an error, so typos fail loudly instead of silently running
a default. Number-like fields accept YAML's native ``.inf`` spellings,
which the fixed-sample cut vector uses for always/never decisions.
"""

from __future__ import annotations

import math
from typing import Any

import yaml

from .calibration import Thresholds
from .harness import BOUNDARY_SWEEP, ExperimentSpec, ProcedureRequest
from .models import Bernoulli, CompositeGaussianMean, GaussianMean, StreamBank
from .theory import GfwerBudget, GmisBudget


class ConfigError(ValueError):
    """Raised with every problem found in a config, not just the first."""

    def __init__(self, messages: list[str]):
        self.messages = list(messages)
        super().__init__("; ".join(messages))


_TOP_KEYS = {
    "streams", "budget", "procedures", "truths",
    "trials", "seed", "cap", "ratio", "out",
}
_STREAM_KEYS = {
    "gaussian": {"kind", "mu", "sigma", "count"},
    "bernoulli": {"kind", "p", "count"},
    "composite_gaussian": {"kind", "mu", "n0", "theta_hat0", "count"},
}
_BUDGET_KEYS = {
    "mistakes": {"kind", "k", "alpha"},
    "familywise": {"kind", "k1", "k2", "alpha", "beta"},
}
_PROCEDURE_KEYS = {"label", "thresholds", "n", "h"}


def _reject_unknown(mapping: dict, allowed: set, where: str, problems: list) -> None:
    extra = sorted(set(mapping) - allowed)
    if extra:
        problems.append(f"{where}: unknown key(s) {', '.join(extra)}")


def _number(value: Any, where: str, problems: list) -> float | None:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        problems.append(f"{where}: expected a number, got {value!r}")
        return None
    return float(value)


def _integer(value: Any, where: str, problems: list) -> int | None:
    if isinstance(value, bool) or not isinstance(value, int):
        problems.append(f"{where}: expected an integer, got {value!r}")
        return None
    return value


def _streams(data: Any, problems: list) -> StreamBank | None:
    if not isinstance(data, list) or not data:
        problems.append("streams: expected a non-empty list")
        return None
    models = []
    for i, entry in enumerate(data):
        where = f"streams[{i}]"
        if not isinstance(entry, dict):
            problems.append(f"{where}: expected a mapping")
            continue
        kind = entry.get("kind")
        if kind not in _STREAM_KEYS:
            problems.append(
                f"{where}: kind must be one of {sorted(_STREAM_KEYS)}, got {kind!r}"
            )
            continue
        _reject_unknown(entry, _STREAM_KEYS[kind], where, problems)
        count = entry.get("count", 1)
        count = _integer(count, f"{where}.count", problems)
        if count is None:
            continue
        if count < 1:
            problems.append(f"{where}.count: must be at least 1")
            continue
        try:
            if kind == "gaussian":
                model = GaussianMean(
                    mu=float(entry["mu"]), sigma=float(entry.get("sigma", 1.0))
                )
            elif kind == "bernoulli":
                model = Bernoulli(p=float(entry["p"]))
            else:
                model = CompositeGaussianMean(
                    mu=float(entry["mu"]),
                    n0=int(entry.get("n0", 0)),
                    theta_hat0=float(entry.get("theta_hat0", 0.0)),
                )
        except KeyError as err:
            problems.append(f"{where}: missing required key {err.args[0]!r}")
            continue
        except (TypeError, ValueError) as err:
            problems.append(f"{where}: {err}")
            continue
        models.extend([model] * count)
    if not models:
        return None
    try:
        return StreamBank(tuple(models))
    except (TypeError, ValueError) as err:
        problems.append(f"streams: {err}")
        return None


def _budget(data: Any, problems: list):
    if not isinstance(data, dict):
        problems.append("budget: expected a mapping")
        return None
    kind = data.get("kind")
    if kind not in _BUDGET_KEYS:
        problems.append(
            f"budget: kind must be one of {sorted(_BUDGET_KEYS)}, got {kind!r}"
        )
        return None
    _reject_unknown(data, _BUDGET_KEYS[kind], "budget", problems)
    try:
        if kind == "mistakes":
            return GmisBudget(k=int(data["k"]), alpha=float(data["alpha"]))
        return GfwerBudget(
            k1=int(data["k1"]),
            k2=int(data["k2"]),
            alpha=float(data["alpha"]),
            beta=float(data["beta"]),
        )
    except KeyError as err:
        problems.append(f"budget: missing required key {err.args[0]!r}")
    except (TypeError, ValueError) as err:
        problems.append(f"budget: {err}")
    return None


def _thresholds(value: Any, where: str, problems: list):
    if value in ("analytic", "calibrated"):
        return value
    if isinstance(value, dict):
        _reject_unknown(value, {"a", "b"}, where, problems)
        b = _number(value.get("b"), f"{where}.b", problems)
        if b is None:
            return None
        a = value.get("a", b)
        a = _number(a, f"{where}.a", problems)
        if a is None:
            return None
        try:
            return Thresholds(a=a, b=b)
        except ValueError as err:
            problems.append(f"{where}: {err}")
            return None
    problems.append(
        f"{where}: expected analytic, calibrated, or a mapping with a/b"
    )
    return None


def _procedures(data: Any, problems: list) -> tuple[ProcedureRequest, ...] | None:
    if not isinstance(data, list) or not data:
        problems.append("procedures: expected a non-empty list")
        return None
    out = []
    for i, entry in enumerate(data):
        where = f"procedures[{i}]"
        if not isinstance(entry, dict):
            problems.append(f"{where}: expected a mapping")
            continue
        _reject_unknown(entry, _PROCEDURE_KEYS, where, problems)
        label = entry.get("label")
        if not isinstance(label, str):
            problems.append(f"{where}: label is required")
            continue
        kwargs: dict[str, Any] = {}
        if "thresholds" in entry:
            th = _thresholds(entry["thresholds"], f"{where}.thresholds", problems)
            if th is None:
                continue
            kwargs["thresholds"] = th
        if "n" in entry:
            n = _integer(entry["n"], f"{where}.n", problems)
            if n is None:
                continue
            kwargs["n"] = n
        if "h" in entry:
            h = entry["h"]
            if not isinstance(h, list):
                problems.append(f"{where}.h: expected a list of numbers")
                continue
            vals = [_number(v, f"{where}.h[{j}]", problems) for j, v in enumerate(h)]
            if any(v is None for v in vals):
                continue
            kwargs["h"] = tuple(vals)
        out.append(ProcedureRequest(label=label, **kwargs))
    return tuple(out) if out else None


def _truths(data: Any, J: int | None, problems: list):
    if data is None or data == BOUNDARY_SWEEP:
        return BOUNDARY_SWEEP
    if not isinstance(data, list) or not data:
        problems.append(
            f"truths: expected {BOUNDARY_SWEEP!r} or a non-empty list of rows"
        )
        return None
    rows = []
    for i, row in enumerate(data):
        where = f"truths[{i}]"
        if not isinstance(row, list):
            problems.append(f"{where}: expected a list of per-stream values")
            continue
        vals = [_number(v, f"{where}[{j}]", problems) for j, v in enumerate(row)]
        if any(v is None for v in vals):
            continue
        if any(not math.isfinite(v) for v in vals):
            problems.append(f"{where}: truth values must be finite")
            continue
        if J is not None and len(vals) != J:
            problems.append(f"{where}: expected {J} values, got {len(vals)}")
            continue
        rows.append(tuple(vals))
    return tuple(rows) if rows else None


def build_spec(data: Any) -> ExperimentSpec:
    """Assemble an `ExperimentSpec` from parsed config data.

    Raises `ConfigError` listing every structural problem found. The
    semantic cross-checks (labels, budget level bounds, procedure and
    bank compatibility) live in `validate_spec` and run separately.
    """
    problems: list[str] = []
    if not isinstance(data, dict):
        raise ConfigError(["config root: expected a mapping"])
    _reject_unknown(data, _TOP_KEYS, "config root", problems)
    missing = [k for k in ("streams", "budget", "procedures") if k not in data]
    if missing:
        problems.append(f"config root: missing required key(s) {', '.join(missing)}")
    bank = _streams(data.get("streams"), problems) if "streams" in data else None
    budget = _budget(data.get("budget"), problems) if "budget" in data else None
    procedures = (
        _procedures(data.get("procedures"), problems)
        if "procedures" in data
        else None
    )
    J = bank.J if bank is not None else None
    truths = _truths(data.get("truths"), J, problems)

    extras: dict[str, Any] = {}
    for key, checker in (("trials", _integer), ("seed", _integer), ("cap", _integer)):
        if key in data:
            value = checker(data[key], key, problems)
            if value is not None:
                extras[key] = value
    if "ratio" in data and data["ratio"] is not None:
        ratio = _number(data["ratio"], "ratio", problems)
        if ratio is not None:
            if ratio <= 0:
                problems.append("ratio: must be positive")
            else:
                extras["ratio"] = ratio
    if "out" in data and data["out"] is not None:
        if not isinstance(data["out"], str):
            problems.append("out: expected a path string")
        else:
            extras["out"] = data["out"]

    if problems or bank is None or budget is None or procedures is None:
        if not problems:
            problems.append("config root: incomplete")
        raise ConfigError(problems)
    return ExperimentSpec(
        bank=bank,
        budget=budget,
        procedures=procedures,
        truths=truths if truths is not None else BOUNDARY_SWEEP,
        **extras,
    )


def load_config(path: str) -> ExperimentSpec:
    """Read a YAML config file into an `ExperimentSpec`."""
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as err:
        raise ConfigError([f"cannot read config: {err}"]) from err
    except yaml.YAMLError as err:
        raise ConfigError([f"invalid YAML: {err}"]) from err
    return build_spec(data)
