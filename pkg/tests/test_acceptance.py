"""Acceptance gate: one test per contract point, each printing a verdict line.

Run with ``pytest -s tests/test_acceptance.py`` to see the per-criterion
summary as it unfolds. The calibration studies (criteria 6, 7 and 10)
run full-size Monte Carlo searches and dominate the runtime; expect the
whole file to take somewhere under an hour on one core. Everything is
seeded, so reruns reproduce the same numbers bit for bit.
"""

import math
from fractions import Fraction

import numpy as np
import pytest

from seqmultitest.calibration import (
    analytic_threshold_gmis,
    analytic_thresholds_gfwer,
    calibrate_bisection,
    min_fixed_n,
    threshold_family,
)
from seqmultitest.cli import main as cli_main
from seqmultitest.engine import simulate, simulate_paths
from seqmultitest.models import CompositeGaussianMean, GaussianMean, StreamBank
from seqmultitest.procedures import Intersection, Leap, SumIntersection
from seqmultitest.statistics import adaptive_update_composite, initial_adaptive_state
from seqmultitest.theory import (
    GfwerBudget,
    GmisBudget,
    InformationProfile,
    big_l,
    d_a_k,
    solve_h_d,
)

GAUSS10 = StreamBank((GaussianMean(0.25),) * 10)

# Two hard streams and eight easy ones; signals sit on the easy side.
BANK_TWO_SPEED = StreamBank((GaussianMean(1 / 6),) * 2 + (GaussianMean(0.5),) * 8)
TRUTH_TWO_SPEED = np.array([0.0] * 5 + [1.0] * 5)
ERR_GRID = (1e-1, 1e-2, 1e-3)

CAP = 10_000
TRIALS = 20_000


def _report(num: int, ok: bool, detail: str) -> None:
    status = "PASS" if ok else "FAIL"
    print(f"[criterion {num:02d}] {status}: {detail}")
    assert ok, f"criterion {num:02d}: {detail}"


def _count_configs(J: int) -> list[np.ndarray]:
    """Homogeneous banks only care about the number of signals."""
    return [np.array([1.0] * m + [0.0] * (J - m)) for m in range(J + 1)]


def test_criterion_01_exact_first_order_constants():
    weak, strong = Fraction(1, 72), Fraction(1, 8)
    lopsided = InformationProfile(i1=(weak,) + (strong,) * 9, i0=(weak,) + (strong,) * 9)
    d = d_a_k(lopsided, frozenset(), 2)
    ok = isinstance(d, Fraction) and d == Fraction(5, 36) and float(1 / d) == 7.2
    two_speed = InformationProfile(
        i1=(weak,) * 2 + (strong,) * 8, i0=(weak,) * 2 + (strong,) * 8
    )
    signals = frozenset(range(5, 10))
    for err in ERR_GRID:
        target = 8.0 * abs(math.log(err))
        ok = ok and big_l(two_speed, signals, GfwerBudget(2, 2, err, err)) == target
    _report(1, ok, "d_a_k = 5/36 and first-order ESS = 8|log err|, both exact")


def _min_info_by_mistakes(i1, i0):
    """For one signal set: min pairwise information over decisions with
    at least k mistakes, for every k at once, by scanning all decisions."""
    J = len(i1)
    full = 1 << J
    s1 = [Fraction(0)] * full
    s0 = [Fraction(0)] * full
    for m in range(1, full):
        low = m & (-m)
        j = low.bit_length() - 1
        s1[m] = s1[m ^ low] + i1[j]
        s0[m] = s0[m ^ low] + i0[j]
    mask = full - 1

    def per_signal_set(A: int) -> list:
        best = [None] * (J + 1)
        for diff in range(1, full):
            info = s1[A & diff] + s0[diff & ~A & mask]
            size = bin(diff).count("1")
            if best[size] is None or info < best[size]:
                best[size] = info
        # suffix minimum: mistakes >= k
        suffix = [None] * (J + 2)
        for size in range(J, 0, -1):
            nxt = suffix[size + 1]
            cand = best[size]
            suffix[size] = cand if nxt is None or cand < nxt else nxt
        return suffix

    return per_signal_set


def test_criterion_02_matches_brute_force_everywhere():
    mismatches = 0
    checked = 0
    for J in range(1, 9):
        i1 = tuple(Fraction(3 + (5 * j) % 7, 24) for j in range(J))
        i0 = tuple(Fraction(2 + (3 * j) % 5, 16) for j in range(J))
        profile = InformationProfile(i1=i1, i0=i0)
        oracle = _min_info_by_mistakes(i1, i0)
        for A in range(1 << J):
            suffix = oracle(A)
            signals = frozenset(j for j in range(J) if A >> j & 1)
            for k in range(1, J + 1):
                checked += 1
                if d_a_k(profile, signals, k) != suffix[k]:
                    mismatches += 1
    _report(2, mismatches == 0,
            f"{checked} (J, A, k) cells against brute force, {mismatches} mismatches")


def test_criterion_03_mistake_rate_within_analytic_budget():
    b = analytic_threshold_gmis(0.05, 10, 2)
    counters = simulate(
        GAUSS10, SumIntersection(2, b), _count_configs(10),
        TRIALS, 101, CAP, k_mistakes=2,
    )
    worst = max(c.mistakes_ge / c.trials for c in counters)
    se = math.sqrt(worst * (1.0 - worst) / TRIALS)
    bound = math.comb(10, 2) * math.exp(-b)
    ok = worst <= 0.05 and worst <= bound + 3 * se
    _report(3, ok, f"worst k-mistake rate {worst:.4f} <= 0.05 at the analytic threshold")


def test_criterion_04_familywise_rates_within_analytic_budget():
    th = analytic_thresholds_gfwer(0.05, 0.05, 10, 2, 2)
    counters = simulate(
        GAUSS10, Leap(2, 2, th.a, th.b), _count_configs(10),
        TRIALS, 102, CAP, k_fp=2, k_fn=2,
    )
    worst_fp = max(c.false_pos_ge / c.trials for c in counters)
    worst_fn = max(c.false_neg_ge / c.trials for c in counters)
    se_fp = math.sqrt(worst_fp * (1.0 - worst_fp) / TRIALS)
    se_fn = math.sqrt(worst_fn * (1.0 - worst_fn) / TRIALS)
    ok = worst_fp <= 0.05 + 3 * se_fp and worst_fn <= 0.05 + 3 * se_fn
    _report(4, ok, f"worst rates fp {worst_fp:.4f}, fn {worst_fn:.4f} against target 0.05")


def test_criterion_05_single_mistake_reductions_are_pathwise_exact():
    bank = StreamBank((
        GaussianMean(0.5), GaussianMean(0.3), GaussianMean(0.5), GaussianMean(0.4),
    ))
    truths = [np.array([1.0, 0.0, 1.0, 0.0])]
    pairs = [
        (SumIntersection(1, 2.2), Intersection(2.2, 2.2)),
        (Leap(1, 1, 1.8, 2.4), Intersection(1.8, 2.4)),
    ]
    ok = True
    for left, right in pairs:
        (tl, al, dl), = simulate_paths(bank, left, truths, 1000, 77, CAP)
        (tr, ar, dr), = simulate_paths(bank, right, truths, 1000, 77, CAP)
        ok = ok and bool(
            (tl == tr).all() and (al == ar).all() and (dl == dr).all()
        )
    _report(5, ok, "k=1 variants equal the two-sided boundary rule on 1000 paths each")


@pytest.fixture(scope="module")
def two_speed_study():
    """Calibrated ESS over the error grid for the three sequential rules."""
    ratios: dict[str, list[float]] = {}
    for label in ("leap", "intersection", "asym_sum_intersection"):
        per = []
        for err in ERR_GRID:
            budget = GfwerBudget(2, 2, err, err)
            report = calibrate_bisection(label, budget, BANK_TWO_SPEED, TRIALS, 301)
            proc = threshold_family(label, budget)(report.thresholds)
            (c,) = simulate(
                BANK_TWO_SPEED, proc, [TRUTH_TWO_SPEED], TRIALS, 302, CAP,
            )
            per.append((c.sum_t / c.trials) / (8.0 * abs(math.log(err))))
        ratios[label] = per
    return ratios


def test_criterion_06_leap_approaches_the_first_order_optimum(two_speed_study):
    leap = two_speed_study["leap"]
    others = [two_speed_study["intersection"][2], two_speed_study["asym_sum_intersection"][2]]
    ok = leap[0] > leap[1] > leap[2] and all(leap[2] < o for o in others)
    _report(6, ok,
            "leap ESS ratios " + ", ".join(f"{r:.3f}" for r in leap)
            + f" decreasing; rivals at 1e-3: " + ", ".join(f"{o:.3f}" for o in others))


def test_criterion_07_factor_four_over_fixed_sample():
    # The factor-of-4 claim compares the fixed-sample size to the
    # first-order sequential benchmark |log alpha| / d_a_k. The measured
    # ESS of the calibrated rule still carries order-statistic terms of
    # relative size ~2/(mu sqrt(n)) at this error level, so it is
    # reported for context and only checked for outright savings.
    budget = GmisBudget(2, 1e-3)
    n_fixed = min_fixed_n(budget, GAUSS10, TRIALS, 401)
    profile = InformationProfile.from_bank(GAUSS10)
    benchmark = abs(math.log(1e-3)) / float(d_a_k(profile, frozenset(), 2))
    ratio = n_fixed / benchmark
    report = calibrate_bisection("sum_intersection", budget, GAUSS10, TRIALS, 402)
    (c,) = simulate(
        GAUSS10, SumIntersection(2, report.thresholds.b),
        [np.zeros(10)], TRIALS, 403, CAP,
    )
    ess = c.sum_t / c.trials
    ok = 3.0 <= ratio <= 5.0 and ess < n_fixed
    _report(7, ok,
            f"fixed-sample {n_fixed} is {ratio:.2f}x the first-order ESS "
            f"{benchmark:.1f}; measured calibrated ESS {ess:.1f}")


def test_criterion_08_threshold_drift_matches_the_closed_form():
    ok = True
    worst = 0.0
    for mu in (0.25, 0.5):
        model = GaussianMean(mu)
        info = 0.5 * mu * mu
        for d in (0.5, 1.0, 2.0, 4.0, 9.0):
            h, _ = solve_h_d(model, d)
            closed = info * (math.sqrt(d) - 1.0) / (math.sqrt(d) + 1.0)
            worst = max(worst, abs(h - closed))
            ok = ok and abs(h - closed) <= 1e-8
        h1, _ = solve_h_d(model, 1.0)
        ok = ok and abs(h1) <= 1e-10
    _report(8, ok, f"largest gap to the closed form {worst:.2e} over d in {{0.5,1,2,4,9}}")


def test_criterion_09_adaptive_likelihood_ratio_has_unit_mean():
    model = CompositeGaussianMean(0.2, 10, 0.0)
    bank = StreamBank((model,) * 40)
    theta = 0.3
    rng = np.random.default_rng(2)
    collected: dict[int, list[np.ndarray]] = {5: [], 20: []}
    for _ in range(2500):
        init = theta + rng.standard_normal((10, 40))
        state = initial_adaptive_state(bank, tuple(tuple(row) for row in init))
        for n in range(1, 21):
            x = theta + rng.standard_normal(40)
            state = adaptive_update_composite(state, tuple(x), bank)
            if n in collected:
                ell_theta = theta * np.array(state.sum_x) - 0.5 * n * theta * theta
                collected[n].append(np.exp(np.array(state.ell_star) - ell_theta))
    ok = True
    parts = []
    for n, chunks in sorted(collected.items()):
        vals = np.concatenate(chunks)
        mean = float(vals.mean())
        se = float(vals.std(ddof=1)) / math.sqrt(vals.size)
        ok = ok and abs(mean - 1.0) <= 3.0 * se
        parts.append(f"n={n}: {mean:.4f} (se {se:.4f})")
    _report(9, ok, "likelihood-ratio means over 1e5 paths " + "; ".join(parts))


def test_criterion_10_composite_error_control_at_the_boundary():
    bank = StreamBank((CompositeGaussianMean(0.2, 10, 0.0),) * 10)
    report = calibrate_bisection(
        "leap_star", GfwerBudget(2, 2, 0.05, 0.05), bank, TRIALS, 501,
    )
    m = report.achieved_metric("false_positives")
    ok = m.estimate <= 0.05 and m.ci_low <= 0.05 <= m.ci_high
    _report(10, ok,
            f"worst boundary false-positive rate {m.estimate:.4f} "
            f"[{m.ci_low:.4f}, {m.ci_high:.4f}] around 0.05")


def test_criterion_11_figures_are_worker_count_invariant(tmp_path):
    panels = {}
    for workers in (1, 4, 16):
        out = tmp_path / f"w{workers}"
        rc = cli_main([
            "figure", "5.2", "--scale", "0.02", "--seed", "0",
            "--workers", str(workers), "--out", str(out),
        ])
        assert rc == 0
        panels[workers] = sorted(
            (p.name, p.read_bytes()) for p in out.glob("*.csv")
        )
    ok = bool(panels[1]) and panels[1] == panels[4] == panels[16]
    _report(11, ok, f"{len(panels[1])} CSV panels byte-identical across workers 1/4/16")
