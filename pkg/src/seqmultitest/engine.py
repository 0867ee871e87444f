"""Vectorized Monte-Carlo engine with counter-based randomness.

Every observation is a pure function of (seed, domain, trial, time):
trials own disjoint counter blocks of a Philox generator, one block per
(trial, chunk) pair, where chunks partition time into fixed widths
(64, 64, 128, then 256 forever).  Consequences:

* the same trial sees the same data under every truth configuration,
  threshold, and procedure (common random numbers);
* results are independent of how trials are distributed over workers,
  because per-cohort partial results are integer counters summed in a
  fixed order;
* a scalar re-run of any single trial (`harness.run_trial`) consumes the
  identical observation stream via `raw_normals` / `raw_uniforms`.

Within a chunk the whole (trials, width, streams) block is processed
with array operations; stopped trials leave the active set at chunk
boundaries.  The horizon cap is rounded up to a chunk boundary; paths
still running there are aborted, decided by the sign rule, and counted.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .models import Bernoulli, CompositeGaussianMean, GaussianMean, StreamBank
from .procedures import (
    AsymSumIntersection,
    Intersection,
    Leap,
    LeapStar,
    Mnp,
    ProcedureSpec,
    SumIntersection,
)

__all__ = [
    "COHORT_TRIALS",
    "DOMAIN_NORMAL",
    "DOMAIN_UNIFORM",
    "DOMAIN_INIT",
    "PURPOSE_MAIN",
    "PURPOSE_CALIBRATION",
    "PURPOSE_CHECK",
    "purpose_seed",
    "chunk_width",
    "chunk_start",
    "aligned_cap",
    "raw_normals",
    "raw_uniforms",
    "raw_init_normals",
    "TrialCounters",
    "simulate",
    "simulate_paths",
]

COHORT_TRIALS = 1024

_CHUNK_WIDTHS = (64, 64, 128)
_CHUNK_TAIL = 256

DOMAIN_NORMAL = 0
DOMAIN_UNIFORM = 1
DOMAIN_INIT = 2

PURPOSE_MAIN = 0
PURPOSE_CALIBRATION = 1
PURPOSE_CHECK = 2


def purpose_seed(master_seed: int, purpose: int) -> int:
    """Derive an independent sub-seed for one purpose (run, calibrate, verify)."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(purpose,))
    return int(ss.generate_state(1, np.uint64)[0])


def chunk_width(chunk: int) -> int:
    if chunk < len(_CHUNK_WIDTHS):
        return _CHUNK_WIDTHS[chunk]
    return _CHUNK_TAIL


def chunk_start(chunk: int) -> int:
    head = sum(_CHUNK_WIDTHS)
    if chunk < len(_CHUNK_WIDTHS):
        return sum(_CHUNK_WIDTHS[:chunk])
    return head + (chunk - len(_CHUNK_WIDTHS)) * _CHUNK_TAIL


def aligned_cap(cap: int) -> int:
    """Smallest chunk boundary at or above cap."""
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    c = 0
    while chunk_start(c) + chunk_width(c) < cap:
        c += 1
    return chunk_start(c) + chunk_width(c)


def _domain_key(seed: int, domain: int) -> np.ndarray:
    ss = np.random.SeedSequence(seed, spawn_key=(domain,))
    return ss.generate_state(2, np.uint64)


def _block_generator(key: np.ndarray, trial: int, chunk: int) -> np.random.Generator:
    counter = np.array([0, 0, chunk, trial], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


def raw_normals(seed: int, trial: int, chunk: int, J: int) -> np.ndarray:
    """The (width, J) standard-normal block for one (trial, chunk)."""
    gen = _block_generator(_domain_key(seed, DOMAIN_NORMAL), trial, chunk)
    return gen.standard_normal((chunk_width(chunk), J))


def raw_uniforms(seed: int, trial: int, chunk: int, J: int) -> np.ndarray:
    """The (width, J) uniform block for one (trial, chunk)."""
    gen = _block_generator(_domain_key(seed, DOMAIN_UNIFORM), trial, chunk)
    return gen.random((chunk_width(chunk), J))


def raw_init_normals(seed: int, trial: int, n0: int, J: int) -> np.ndarray:
    """The (n0, J) standard-normal block seeding a trial's initial sample."""
    gen = _block_generator(_domain_key(seed, DOMAIN_INIT), trial, 0)
    return gen.standard_normal((n0, J))


@dataclass(frozen=True)
class TrialCounters:
    """Integer aggregates for one truth configuration."""

    trials: int
    sum_t: int
    sum_t_sq: int
    aborted: int
    mistakes_ge: int
    false_pos_ge: int
    false_neg_ge: int
    t_hist: np.ndarray | None = None


# ---------------------------------------------------------------------------
# Bank summaries used by the kernels.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _SimpleArrays:
    gauss: np.ndarray  # bool mask over streams
    mu: np.ndarray
    sigma: np.ndarray
    snr2: np.ndarray
    p: np.ndarray
    q: np.ndarray
    log_odds: np.ndarray


def _simple_arrays(bank: StreamBank) -> _SimpleArrays:
    J = bank.J
    gauss = np.zeros(J, dtype=bool)
    mu = np.zeros(J)
    sigma = np.ones(J)
    snr2 = np.zeros(J)
    p = np.full(J, 0.5)
    q = np.full(J, 0.5)
    r = np.zeros(J)
    for j, m in enumerate(bank.models):
        if isinstance(m, GaussianMean):
            gauss[j] = True
            mu[j] = m.mu
            sigma[j] = m.sigma
            snr2[j] = m.snr * m.snr
        elif isinstance(m, Bernoulli):
            p[j] = m.p
            q[j] = m.q
            r[j] = m.log_odds
        else:
            raise TypeError("simple kernels need Gaussian or Bernoulli streams")
    return _SimpleArrays(gauss, mu, sigma, snr2, p, q, r)


def _increments(
    arr: _SimpleArrays,
    signal: np.ndarray,
    z: np.ndarray | None,
    u: np.ndarray | None,
) -> np.ndarray:
    """Per-time LLR increments under one truth; mirrors the scalar formulas."""
    n, w, J = (z if z is not None else u).shape  # type: ignore[union-attr]
    inc = np.empty((n, w, J))
    if arr.gauss.any():
        g = arr.gauss
        x = arr.sigma[g] * z[..., g] + arr.mu[g] * signal[g]
        inc[..., g] = arr.snr2[g] * (x / arr.mu[g] - 0.5)
    if not arr.gauss.all():
        bmask = ~arr.gauss
        thresh = np.where(signal[bmask] > 0.5, arr.q[bmask], arr.p[bmask])
        success = u[..., bmask] < thresh
        inc[..., bmask] = np.where(
            success, arr.log_odds[bmask], -arr.log_odds[bmask]
        )
    return inc


# ---------------------------------------------------------------------------
# Stopping conditions and decisions on a (..., J) statistic array.
# ---------------------------------------------------------------------------


def _ordered_tables(lam: np.ndarray) -> tuple[np.ndarray, ...]:
    """Counts and cumulative sums of the hat/check views, vectorized.

    Sentinel entries (+inf) are zeroed before the cumulative sum; the
    rank-count comparisons in `_component_cond` restore their meaning,
    keeping the arithmetic free of inf - inf.
    """
    pos = lam > 0.0
    p = pos.sum(axis=-1)
    q = lam.shape[-1] - p
    hat = np.sort(np.where(pos, lam, np.inf), axis=-1)
    hcum = np.cumsum(np.where(np.isfinite(hat), hat, 0.0), axis=-1)
    chk = np.sort(np.where(pos, np.inf, -lam), axis=-1)
    ccum = np.cumsum(np.where(np.isfinite(chk), chk, 0.0), axis=-1)
    return p, q, hcum, ccum


def _component_cond(
    family: str,
    ell: int,
    k1: int,
    k2: int,
    a: float,
    b: float,
    p: np.ndarray,
    q: np.ndarray,
    hcum: np.ndarray,
    ccum: np.ndarray,
) -> np.ndarray:
    """Firing condition of one leap component; a rank past the view is
    a vacuously satisfied (infinite) partial sum."""
    if family == "hat":
        m = k1 - ell
        pos_ok = (p < m) | (hcum[..., m - 1] >= b)
        hi = ell + k2
        rng = ccum[..., hi - 1] - (ccum[..., ell - 1] if ell >= 1 else 0.0)
        neg_ok = (q < hi) | (rng >= a)
    else:
        hi = ell + k1
        rng = hcum[..., hi - 1] - (hcum[..., ell - 1] if ell >= 1 else 0.0)
        pos_ok = (p < hi) | (rng >= b)
        m = k2 - ell
        neg_ok = (q < m) | (ccum[..., m - 1] >= a)
    return pos_ok & neg_ok


def _leap_components(spec: Leap | LeapStar) -> list[tuple[str, int]]:
    comps = [("hat", ell) for ell in range(spec.k1)]
    comps += [("chk", ell) for ell in range(1, spec.k2)]
    return comps


def _stop_cond(procedure: ProcedureSpec, lam: np.ndarray) -> np.ndarray:
    """Boolean stop condition per (trial, time) for a path array (n, w, J)."""
    if isinstance(procedure, SumIntersection):
        cs = np.cumsum(np.sort(np.abs(lam), axis=-1), axis=-1)
        return cs[..., procedure.k - 1] >= procedure.b
    if isinstance(procedure, Intersection):
        return ((lam >= procedure.b) | (lam <= -procedure.a)).all(axis=-1)
    if isinstance(procedure, AsymSumIntersection):
        p, q, hcum, ccum = _ordered_tables(lam)
        return _component_cond(
            "hat", 0, procedure.k1, procedure.k2, procedure.a, procedure.b,
            p, q, hcum, ccum,
        )
    if isinstance(procedure, (Leap, LeapStar)):
        p, q, hcum, ccum = _ordered_tables(lam)
        cond = np.zeros(lam.shape[:-1], dtype=bool)
        for family, ell in _leap_components(procedure):
            cond |= _component_cond(
                family, ell, procedure.k1, procedure.k2, procedure.a,
                procedure.b, p, q, hcum, ccum,
            )
        return cond
    raise TypeError(f"no stop condition for {type(procedure).__name__}")


def _decide(procedure: ProcedureSpec, lam: np.ndarray) -> np.ndarray:
    """Decision sets at stopping, for rows (f, J) known to satisfy the
    stop condition.  Tie order matches the scalar code: stable sorts
    break equal values by stream index."""
    if isinstance(procedure, (SumIntersection, Intersection, AsymSumIntersection)):
        return lam > 0.0
    if isinstance(procedure, (Leap, LeapStar)):
        f, J = lam.shape
        pos = lam > 0.0
        p = pos.sum(axis=1)
        q = J - p
        hat_vals = np.where(pos, lam, np.inf)
        hat_order = np.argsort(hat_vals, axis=1, kind="stable")
        hat_sorted = np.take_along_axis(hat_vals, hat_order, axis=1)
        hcum = np.cumsum(np.where(np.isfinite(hat_sorted), hat_sorted, 0.0), axis=1)
        chk_vals = np.where(pos, np.inf, -lam)
        chk_order = np.argsort(chk_vals, axis=1, kind="stable")
        chk_sorted = np.take_along_axis(chk_vals, chk_order, axis=1)
        ccum = np.cumsum(np.where(np.isfinite(chk_sorted), chk_sorted, 0.0), axis=1)
        ranks = np.broadcast_to(np.arange(J), (f, J))
        rank_hat = np.empty((f, J), dtype=np.int64)
        np.put_along_axis(rank_hat, hat_order, ranks, axis=1)
        rank_chk = np.empty((f, J), dtype=np.int64)
        np.put_along_axis(rank_chk, chk_order, ranks, axis=1)
        decision = np.zeros((f, J), dtype=bool)
        for family, ell in _leap_components(procedure):
            cond = _component_cond(
                family, ell, procedure.k1, procedure.k2, procedure.a,
                procedure.b, p, q, hcum, ccum,
            )
            if family == "hat":
                d = pos | (~pos & (rank_chk < ell))
            else:
                d = pos & (rank_hat >= ell)
            decision |= d & cond[:, None]
        return decision
    raise TypeError(f"no decision rule for {type(procedure).__name__}")


# ---------------------------------------------------------------------------
# Cohort runners.
# ---------------------------------------------------------------------------


def _record_stops(
    T: np.ndarray,
    fp: np.ndarray,
    fn: np.ndarray,
    trial_rows: np.ndarray,
    times: np.ndarray,
    decision: np.ndarray,
    signal: np.ndarray,
    dmat: np.ndarray | None = None,
) -> None:
    T[trial_rows] = times
    is_sig = signal > 0.5
    fp[trial_rows] = (decision & ~is_sig).sum(axis=1)
    fn[trial_rows] = (~decision & is_sig).sum(axis=1)
    if dmat is not None:
        dmat[trial_rows] = decision


def _counters(
    T: np.ndarray,
    fp: np.ndarray,
    fn: np.ndarray,
    aborted: np.ndarray,
    ks: tuple[int, int, int],
    hist_len: int,
) -> tuple:
    k_m, k_fp, k_fn = ks
    mist = int(((fp + fn) >= k_m).sum()) if k_m > 0 else 0
    nfp = int((fp >= k_fp).sum()) if k_fp > 0 else 0
    nfn = int((fn >= k_fn).sum()) if k_fn > 0 else 0
    hist = None
    if hist_len > 0:
        hist = np.bincount(T, minlength=hist_len)
    return (
        len(T),
        int(T.sum()),
        int((T.astype(np.int64) ** 2).sum()),
        int(aborted.sum()),
        mist,
        nfp,
        nfn,
        hist,
    )


def _gen_blocks(
    key: np.ndarray,
    trials: np.ndarray,
    chunk: int,
    J: int,
    kind: str,
) -> np.ndarray:
    w = chunk_width(chunk)
    out = np.empty((len(trials), w, J))
    for i, t in enumerate(trials):
        gen = _block_generator(key, int(t), chunk)
        out[i] = gen.standard_normal((w, J)) if kind == "n" else gen.random((w, J))
    return out


def _run_cohort_simple(
    bank: StreamBank,
    procedure: ProcedureSpec,
    truths: list[np.ndarray],
    seed: int,
    cap: int,
    ks: tuple[int, int, int],
    want_hist: bool,
    want_paths: bool,
    trial_ids: np.ndarray,
) -> list[tuple]:
    arr = _simple_arrays(bank)
    J = bank.J
    n = len(trial_ids)
    cap_eff = aligned_cap(cap)
    need_n = bool(arr.gauss.any())
    need_u = not bool(arr.gauss.all())
    all_gauss = not need_u
    key_n = _domain_key(seed, DOMAIN_NORMAL)
    key_u = _domain_key(seed, DOMAIN_UNIFORM)

    active = [np.arange(n) for _ in truths]
    lam = [np.zeros((n, J)) for _ in truths]
    T = [np.zeros(n, dtype=np.int64) for _ in truths]
    fp = [np.zeros(n, dtype=np.int64) for _ in truths]
    fn = [np.zeros(n, dtype=np.int64) for _ in truths]
    ab = [np.zeros(n, dtype=bool) for _ in truths]
    dmat = [np.zeros((n, J), dtype=bool) if want_paths else None for _ in truths]

    chunk = 0
    while True:
        live = [a for a in active if len(a)]
        if not live:
            break
        union = np.unique(np.concatenate(live))
        start = chunk_start(chunk)
        Z = _gen_blocks(key_n, trial_ids[union], chunk, J, "n") if need_n else None
        U = _gen_blocks(key_u, trial_ids[union], chunk, J, "u") if need_u else None
        if all_gauss:
            # Gaussian increments are affine in the signal indicator, so one
            # cumulative sum of the null increments serves every truth; the
            # signal streams differ by an exact per-step drift of snr^2.
            base = arr.snr2 * ((arr.sigma * Z) / arr.mu - 0.5)
            base_cum = np.cumsum(base, axis=1)
            steps = np.arange(1.0, base.shape[1] + 1.0)
        for ci, signal in enumerate(truths):
            act = active[ci]
            if len(act) == 0:
                continue
            rows = np.searchsorted(union, act)
            if all_gauss:
                lamcum = lam[ci][:, None, :] + base_cum[rows]
                drift = arr.snr2 * signal
                if drift.any():
                    lamcum += drift[None, None, :] * steps[None, :, None]
            else:
                inc = _increments(
                    arr, signal,
                    Z[rows] if Z is not None else None,
                    U[rows] if U is not None else None,
                )
                lamcum = lam[ci][:, None, :] + np.cumsum(inc, axis=1)
            cond = _stop_cond(procedure, lamcum)
            fired = cond.any(axis=1)
            if fired.any():
                fr = np.nonzero(fired)[0]
                tsel = np.argmax(cond[fr], axis=1)
                lam_at = lamcum[fr, tsel, :]
                decision = _decide(procedure, lam_at)
                _record_stops(
                    T[ci], fp[ci], fn[ci], act[fr],
                    start + tsel + 1, decision, signal, dmat[ci],
                )
            keep = ~fired
            lam[ci] = lamcum[keep, -1, :]
            active[ci] = act[keep]
        chunk += 1
        if chunk_start(chunk) >= cap_eff:
            for ci, signal in enumerate(truths):
                act = active[ci]
                if len(act) == 0:
                    continue
                decision = lam[ci] > 0.0
                _record_stops(
                    T[ci], fp[ci], fn[ci], act,
                    np.full(len(act), cap_eff, dtype=np.int64), decision, signal,
                    dmat[ci],
                )
                ab[ci][act] = True
                active[ci] = act[:0]
                lam[ci] = lam[ci][:0]
            break
    hist_len = cap_eff + 1 if want_hist else 0
    return [
        _counters(T[ci], fp[ci], fn[ci], ab[ci], ks, hist_len)
        + ((T[ci], ab[ci], dmat[ci]) if want_paths else ())
        for ci in range(len(truths))
    ]


def _project_estimates(total_mean: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Vectorized counterpart of the scalar estimate projection."""
    gap = (total_mean > 0.0) & (total_mean < mu)
    snapped = np.where(total_mean < 0.5 * mu, 0.0, mu)
    return np.where(gap, snapped, total_mean)


def _run_cohort_composite(
    bank: StreamBank,
    procedure: ProcedureSpec,
    truths: list[np.ndarray],
    seed: int,
    cap: int,
    ks: tuple[int, int, int],
    want_hist: bool,
    want_paths: bool,
    trial_ids: np.ndarray,
) -> list[tuple]:
    models = bank.models
    assert isinstance(models[0], CompositeGaussianMean)
    J = bank.J
    n = len(trial_ids)
    n0 = models[0].n0
    mu = np.array([m.mu for m in models])  # type: ignore[union-attr]
    theta_hat0 = np.array([m.theta_hat0 for m in models])  # type: ignore[union-attr]
    cap_eff = aligned_cap(cap)
    key_n = _domain_key(seed, DOMAIN_NORMAL)
    key_i = _domain_key(seed, DOMAIN_INIT)

    if n0 > 0:
        z_init_sum = np.empty((n, J))
        for i, t in enumerate(trial_ids):
            block = _block_generator(key_i, int(t), 0).standard_normal((n0, J))
            z_init_sum[i] = np.cumsum(block, axis=0)[-1]
    else:
        z_init_sum = np.zeros((n, J))

    n_cfg = len(truths)
    active = [np.arange(n) for _ in truths]
    S = [np.zeros((n, J)) for _ in truths]
    ell = [np.zeros((n, J)) for _ in truths]
    init_sum = [n0 * th[None, :] + z_init_sum for th in truths]
    if n0 > 0:
        tp = [
            _project_estimates(init_sum[ci] / n0, mu[None, :])
            for ci in range(n_cfg)
        ]
    else:
        tp = [np.broadcast_to(theta_hat0, (n, J)).copy() for _ in truths]
    T = [np.zeros(n, dtype=np.int64) for _ in truths]
    fp = [np.zeros(n, dtype=np.int64) for _ in truths]
    fn = [np.zeros(n, dtype=np.int64) for _ in truths]
    ab = [np.zeros(n, dtype=bool) for _ in truths]
    dmat = [np.zeros((n, J), dtype=bool) if want_paths else None for _ in truths]
    signals = [(th >= mu).astype(np.float64) for th in truths]

    def hypothesis_logliks(S_arr: np.ndarray, t_arr: np.ndarray):
        xb = S_arr / t_arr
        half = 0.5 * t_arr * xb * xb
        e0 = np.where(xb <= 0.0, half, 0.0)
        e1 = np.where(xb >= mu, half, t_arr * (mu * xb - 0.5 * mu * mu))
        return e0, e1

    chunk = 0
    while True:
        live = [a for a in active if len(a)]
        if not live:
            break
        union = np.unique(np.concatenate(live))
        start = chunk_start(chunk)
        w = chunk_width(chunk)
        Z = _gen_blocks(key_n, trial_ids[union], chunk, J, "n")
        tvec = (start + np.arange(1, w + 1, dtype=np.float64))[None, :, None]
        for ci in range(n_cfg):
            act = active[ci]
            if len(act) == 0:
                continue
            rows = np.searchsorted(union, act)
            x = truths[ci][None, None, :] + Z[rows]
            S_cum = S[ci][:, None, :] + np.cumsum(x, axis=1)
            th_hat = _project_estimates(
                (init_sum[ci][act][:, None, :] + S_cum) / (n0 + tvec),
                mu[None, None, :],
            )
            tprev = np.concatenate([tp[ci][:, None, :], th_hat[:, :-1, :]], axis=1)
            ell_cum = ell[ci][:, None, :] + np.cumsum(
                x * tprev - 0.5 * tprev * tprev, axis=1
            )
            e0, e1 = hypothesis_logliks(S_cum, tvec)
            pos_def = (e0 < e1) & (e0 < ell_cum)
            neg_def = (e1 < e0) & (e1 < ell_cum)
            lam_star = np.where(pos_def, ell_cum - e0, 0.0)
            lam_star = np.where(neg_def, -(ell_cum - e1), lam_star)
            all_def = (pos_def | neg_def).all(axis=2)
            cond = _stop_cond(procedure, lam_star) & all_def
            fired = cond.any(axis=1)
            if fired.any():
                fr = np.nonzero(fired)[0]
                tsel = np.argmax(cond[fr], axis=1)
                decision = _decide(procedure, lam_star[fr, tsel, :])
                _record_stops(
                    T[ci], fp[ci], fn[ci], act[fr],
                    start + tsel + 1, decision, signals[ci], dmat[ci],
                )
            keep = ~fired
            S[ci] = S_cum[keep, -1, :]
            ell[ci] = ell_cum[keep, -1, :]
            tp[ci] = th_hat[keep, -1, :]
            active[ci] = act[keep]
        chunk += 1
        if chunk_start(chunk) >= cap_eff:
            t_end = np.float64(cap_eff)
            for ci in range(n_cfg):
                act = active[ci]
                if len(act) == 0:
                    continue
                e0, e1 = hypothesis_logliks(S[ci], t_end)
                decision = e1 > e0
                _record_stops(
                    T[ci], fp[ci], fn[ci], act,
                    np.full(len(act), cap_eff, dtype=np.int64),
                    decision, signals[ci], dmat[ci],
                )
                ab[ci][act] = True
                active[ci] = act[:0]
                S[ci] = S[ci][:0]
            break
    hist_len = cap_eff + 1 if want_hist else 0
    return [
        _counters(T[ci], fp[ci], fn[ci], ab[ci], ks, hist_len)
        + ((T[ci], ab[ci], dmat[ci]) if want_paths else ())
        for ci in range(n_cfg)
    ]


def _run_cohort_mnp(
    bank: StreamBank,
    procedure: Mnp,
    truths: list[np.ndarray],
    seed: int,
    ks: tuple[int, int, int],
    want_hist: bool,
    want_paths: bool,
    trial_ids: np.ndarray,
) -> list[tuple]:
    J = bank.J
    n_paths = len(trial_ids)
    n_obs = procedure.n
    h = np.asarray(procedure.h)
    composite = bank.is_composite
    if composite:
        mu = np.array([m.mu for m in bank.models])  # type: ignore[union-attr]
        signals = [(th >= mu).astype(np.float64) for th in truths]
        key = _domain_key(seed, DOMAIN_NORMAL)
    else:
        arr = _simple_arrays(bank)
        signals = truths
        key_n = _domain_key(seed, DOMAIN_NORMAL)
        key_u = _domain_key(seed, DOMAIN_UNIFORM)

    acc = [np.zeros((n_paths, J)) for _ in truths]
    chunk = 0
    while chunk_start(chunk) < n_obs:
        w_eff = min(chunk_width(chunk), n_obs - chunk_start(chunk))
        if composite:
            Z = _gen_blocks(key, trial_ids, chunk, J, "n")
            for ci, th in enumerate(truths):
                x = th[None, None, :] + Z[:, :w_eff, :]
                acc[ci] = acc[ci] + np.cumsum(x, axis=1)[:, -1, :]
        else:
            Z = _gen_blocks(key_n, trial_ids, chunk, J, "n") if arr.gauss.any() else None
            U = _gen_blocks(key_u, trial_ids, chunk, J, "u") if not arr.gauss.all() else None
            for ci, signal in enumerate(truths):
                inc = _increments(
                    arr, signal,
                    Z[:, :w_eff, :] if Z is not None else None,
                    U[:, :w_eff, :] if U is not None else None,
                )
                acc[ci] = acc[ci] + np.cumsum(inc, axis=1)[:, -1, :]
        chunk += 1

    out = []
    hist_len = n_obs + 1 if want_hist else 0
    T = np.full(n_paths, n_obs, dtype=np.int64)
    ab = np.zeros(n_paths, dtype=bool)
    for ci in range(len(truths)):
        stat = acc[ci] / n_obs if composite else acc[ci]
        bar = h[None, :] if composite else n_obs * h[None, :]
        decision = stat > bar
        fp_c = np.zeros(n_paths, dtype=np.int64)
        fn_c = np.zeros(n_paths, dtype=np.int64)
        _record_stops(T, fp_c, fn_c, np.arange(n_paths), T, decision, signals[ci])
        extra = (T, ab, decision) if want_paths else ()
        out.append(_counters(T, fp_c, fn_c, ab, ks, hist_len) + extra)
    return out


def _cohort_job(args: tuple) -> list[tuple]:
    (bank, procedure, truths, seed, cap, ks, want_hist, want_paths, first, count) = args
    trial_ids = np.arange(first, first + count, dtype=np.int64)
    if isinstance(procedure, Mnp):
        return _run_cohort_mnp(
            bank, procedure, truths, seed, ks, want_hist, want_paths, trial_ids
        )
    if bank.is_composite:
        return _run_cohort_composite(
            bank, procedure, truths, seed, cap, ks, want_hist, want_paths, trial_ids
        )
    return _run_cohort_simple(
        bank, procedure, truths, seed, cap, ks, want_hist, want_paths, trial_ids
    )


def _check_compat(bank: StreamBank, procedure: ProcedureSpec) -> None:
    if isinstance(procedure, Mnp):
        if len(procedure.h) != bank.J:
            raise ValueError("h must have one entry per stream")
        return
    if bank.is_composite:
        if not isinstance(procedure, (LeapStar, Intersection)):
            raise TypeError(
                f"{type(procedure).__name__} is not defined on composite streams"
            )
    else:
        if isinstance(procedure, LeapStar):
            raise TypeError("the adaptive leap rule needs composite streams")


def simulate(
    bank: StreamBank,
    procedure: ProcedureSpec,
    truths: list[np.ndarray],
    trials: int,
    seed: int,
    cap: int,
    *,
    k_mistakes: int = 0,
    k_fp: int = 0,
    k_fn: int = 0,
    workers: int = 1,
    want_hist: bool = False,
) -> list[TrialCounters]:
    """Run `trials` seeded paths under every truth in lockstep.

    Truths are float vectors: 0/1 signal indicators for simple banks,
    parameter values for composite banks.  Error events are counted at
    the requested thresholds (0 disables a counter).  The result is
    independent of `workers`.
    """
    parts, truths = _fan_out(
        bank, procedure, truths, trials, seed, cap,
        (k_mistakes, k_fp, k_fn), workers, want_hist, False,
    )
    out: list[TrialCounters] = []
    for ci in range(len(truths)):
        tr = sum(p[ci][0] for p in parts)
        st = sum(p[ci][1] for p in parts)
        st2 = sum(p[ci][2] for p in parts)
        abn = sum(p[ci][3] for p in parts)
        mi = sum(p[ci][4] for p in parts)
        nfp = sum(p[ci][5] for p in parts)
        nfn = sum(p[ci][6] for p in parts)
        hist = None
        if want_hist:
            lengths = [len(p[ci][7]) for p in parts]
            hist = np.zeros(max(lengths), dtype=np.int64)
            for p in parts:
                hist[: len(p[ci][7])] += p[ci][7]
        out.append(TrialCounters(tr, st, st2, abn, mi, nfp, nfn, hist))
    return out


def simulate_paths(
    bank: StreamBank,
    procedure: ProcedureSpec,
    truths: list[np.ndarray],
    trials: int,
    seed: int,
    cap: int,
) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Per-trial (T, aborted, decision matrix) for every truth; test hook."""
    parts, truths = _fan_out(
        bank, procedure, truths, trials, seed, cap, (0, 0, 0), 1, False, True,
    )
    out = []
    for ci in range(len(truths)):
        t_all = np.concatenate([p[ci][8] for p in parts])
        ab_all = np.concatenate([p[ci][9] for p in parts])
        d_all = np.concatenate([p[ci][10] for p in parts])
        out.append((t_all, ab_all, d_all))
    return out


def _fan_out(
    bank: StreamBank,
    procedure: ProcedureSpec,
    truths: list[np.ndarray],
    trials: int,
    seed: int,
    cap: int,
    ks: tuple[int, int, int],
    workers: int,
    want_hist: bool,
    want_paths: bool,
) -> tuple[list[list[tuple]], list[np.ndarray]]:
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if not truths:
        raise ValueError("at least one truth configuration is required")
    _check_compat(bank, procedure)
    truths = [np.asarray(t, dtype=np.float64) for t in truths]
    for t in truths:
        if t.shape != (bank.J,):
            raise ValueError(f"each truth must have shape ({bank.J},)")
    jobs = []
    first = 0
    while first < trials:
        count = min(COHORT_TRIALS, trials - first)
        jobs.append(
            (bank, procedure, truths, seed, cap, ks, want_hist, want_paths, first, count)
        )
        first += count
    if workers <= 1 or len(jobs) == 1:
        parts = [_cohort_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_cohort_job, jobs))
    return parts, truths
