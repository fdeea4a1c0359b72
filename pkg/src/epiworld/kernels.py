"""Hot numeric kernels with two interchangeable backends.

Every kernel exists twice: a pure-numpy vectorized version (``*_np``) and a
numba ``@njit`` version (``*_nb``). The active backend is chosen at import
time from the ``EPIWORLD_NUMBA`` env var ("1" default: numba when importable,
"0": numpy). Both backends implement the same arithmetic in the same order;
they agree to ~1 ulp per operation (numba binds libm, numpy uses its own SIMD
transcendentals), so results are bit-reproducible per backend but compared at
rtol=1e-12 across backends.

State batches are (P, NCOLS) float64 matrices, one row per particle. Random
draws never happen inside kernels; callers sample via explicit numpy
Generators and pass the draws in, which keeps streams splittable and the
kernels deterministic.
"""

from __future__ import annotations

import math
import os

import numpy as np

# State matrix column layout. Pipeline columns (admissions due k weeks from
# now) follow the fixed block, so NCOLS = N_FIXED_COLS + hosp_lag.
COL_S = 0
COL_E = 1
COL_I = 2
COL_R = 3
COL_H = 4
COL_NEWINF = 5
COL_ADMIT = 6
COL_W = 7
COL_MIX = 8
COL_B = 9
COL_F = 10
COL_M = 11
COL_PHASE = 12
N_FIXED_COLS = 13

_TWO_PI = 2.0 * math.pi
_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _env_flag(name: str, default: str) -> bool:
    return os.environ.get(name, default) not in ("0", "false", "False", "no")


_WANT_NUMBA = _env_flag("EPIWORLD_NUMBA", "1")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    numba = None
    HAVE_NUMBA = False

NUMBA_ACTIVE = _WANT_NUMBA and HAVE_NUMBA

if HAVE_NUMBA:
    _threads = os.environ.get("EPIWORLD_THREADS")
    if _threads:
        try:
            numba.set_num_threads(max(1, min(int(_threads), numba.config.NUMBA_NUM_THREADS)))
        except ValueError:
            pass


# ---------------------------------------------------------------------------
# Transition kernels
# ---------------------------------------------------------------------------


def transition_pre_np(states, s, beta0, kappa, lam_p, lam_r, lam_d, risk_scale,
                      fat_gain, fat_decay, season_amp):
    """Behavior response and infection pressure for a state batch.

    Returns (bprime, fprime, mult, beta_eff, p_inf).
    """
    I = states[:, COL_I]
    b = states[:, COL_B]
    f = states[:, COL_F]
    m = states[:, COL_M]
    mix = states[:, COL_MIX]
    phase = states[:, COL_PHASE]

    risk = np.minimum(1.0, I / risk_scale)
    bprime = np.clip(b + lam_p * s + lam_r * risk - lam_d * f, 0.0, 1.0)
    fprime = np.clip(f + fat_gain * s - fat_decay, 0.0, 1.0)
    mult = 1.0 - kappa * bprime
    season = 1.0 + season_amp * np.sin(_TWO_PI * phase)
    beta_eff = beta0 * season * m * mix * mult
    p_inf = 1.0 - np.exp(-beta_eff * I)
    return bprime, fprime, mult, beta_eff, p_inf


def transition_post_np(states, new_inf, e_out, i_rec, h_out, r_out, admit,
                       vacc, bprime, fprime, m_new, ihr, w_keep, phase_step, lag):
    """Apply sampled flows and bookkeeping; returns the next state batch."""
    out = np.empty_like(states)
    S = states[:, COL_S]
    E = states[:, COL_E]
    I = states[:, COL_I]
    R = states[:, COL_R]
    H = states[:, COL_H]
    w = states[:, COL_W]

    s_mid = S - new_inf + r_out
    v = np.minimum(vacc, s_mid)
    out[:, COL_S] = s_mid - v
    out[:, COL_E] = E + new_inf - e_out
    # outflows (each clamped to its stock) come off first so the result can
    # never round below zero
    out[:, COL_I] = I - admit - i_rec + e_out
    out[:, COL_H] = H + admit - h_out

    r_stay = R - r_out
    inflow = i_rec + h_out + v
    r_next = r_stay + inflow
    w_raw = np.where(r_next > 1e-300, (w * w_keep * r_stay + inflow) / np.maximum(r_next, 1e-300), 1.0)
    out[:, COL_R] = r_next
    out[:, COL_W] = np.clip(w_raw, 0.0, 1.0)

    out[:, COL_NEWINF] = new_inf
    out[:, COL_ADMIT] = admit
    out[:, COL_MIX] = states[:, COL_MIX]
    out[:, COL_B] = bprime
    out[:, COL_F] = fprime
    out[:, COL_M] = m_new
    out[:, COL_PHASE] = np.mod(states[:, COL_PHASE] + phase_step, 1.0)

    if lag > 0:
        out[:, N_FIXED_COLS:N_FIXED_COLS + lag - 1] = states[:, N_FIXED_COLS + 1:N_FIXED_COLS + lag]
        out[:, N_FIXED_COLS + lag - 1] = ihr * new_inf
    return out


# ---------------------------------------------------------------------------
# Observation log-density kernels (per-particle weights)
# ---------------------------------------------------------------------------


def lognormal_logpdf_np(obs, pred, sigma, floor):
    """Log density of a lognormal count channel, vectorized over pred."""
    d = np.log(obs + floor) - np.log(pred + floor)
    return -np.log(obs + floor) - math.log(sigma) - _LOG_SQRT_2PI - 0.5 * (d / sigma) ** 2


def truncnorm01_logpdf_np(obs, loc, sigma):
    """Log density of a normal truncated to [0, 1], vectorized over loc."""
    from scipy.special import erf

    z = (obs - loc) / sigma
    lo = (0.0 - loc) / sigma
    hi = (1.0 - loc) / sigma
    mass = 0.5 * (erf(hi / _SQRT2) - erf(lo / _SQRT2))
    return -math.log(sigma) - _LOG_SQRT_2PI - 0.5 * z * z - np.log(mass)


def systematic_resample_np(weights, u):
    """Systematic resampling indices for normalized weights and u in [0, 1)."""
    n = weights.shape[0]
    positions = (np.arange(n) + u) / n
    cumw = np.cumsum(weights)
    idx = np.searchsorted(cumw, positions, side="left")
    return np.minimum(idx, n - 1).astype(np.int64)


# ---------------------------------------------------------------------------
# Numba variants (same arithmetic, explicit loops)
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def transition_pre_nb(states, s, beta0, kappa, lam_p, lam_r, lam_d, risk_scale,
                          fat_gain, fat_decay, season_amp):
        n = states.shape[0]
        bprime = np.empty(n)
        fprime = np.empty(n)
        mult = np.empty(n)
        beta_eff = np.empty(n)
        p_inf = np.empty(n)
        for i in range(n):
            I = states[i, COL_I]
            risk = I / risk_scale
            if risk > 1.0:
                risk = 1.0
            b2 = states[i, COL_B] + lam_p * s + lam_r * risk - lam_d * states[i, COL_F]
            if b2 < 0.0:
                b2 = 0.0
            elif b2 > 1.0:
                b2 = 1.0
            f2 = states[i, COL_F] + fat_gain * s - fat_decay
            if f2 < 0.0:
                f2 = 0.0
            elif f2 > 1.0:
                f2 = 1.0
            mu = 1.0 - kappa * b2
            season = 1.0 + season_amp * np.sin(_TWO_PI * states[i, COL_PHASE])
            be = beta0 * season * states[i, COL_M] * states[i, COL_MIX] * mu
            bprime[i] = b2
            fprime[i] = f2
            mult[i] = mu
            beta_eff[i] = be
            p_inf[i] = 1.0 - np.exp(-be * I)
        return bprime, fprime, mult, beta_eff, p_inf

    @njit(cache=True)
    def transition_post_nb(states, new_inf, e_out, i_rec, h_out, r_out, admit,
                           vacc, bprime, fprime, m_new, ihr, w_keep, phase_step, lag):
        n = states.shape[0]
        out = np.empty_like(states)
        for i in range(n):
            s_mid = states[i, COL_S] - new_inf[i] + r_out[i]
            v = vacc
            if v > s_mid:
                v = s_mid
            out[i, COL_S] = s_mid - v
            out[i, COL_E] = states[i, COL_E] + new_inf[i] - e_out[i]
            out[i, COL_I] = states[i, COL_I] - admit[i] - i_rec[i] + e_out[i]
            out[i, COL_H] = states[i, COL_H] + admit[i] - h_out[i]

            r_stay = states[i, COL_R] - r_out[i]
            inflow = i_rec[i] + h_out[i] + v
            r_next = r_stay + inflow
            if r_next > 1e-300:
                denom = r_next
                if denom < 1e-300:
                    denom = 1e-300
                w_raw = (states[i, COL_W] * w_keep * r_stay + inflow) / denom
            else:
                w_raw = 1.0
            if w_raw < 0.0:
                w_raw = 0.0
            elif w_raw > 1.0:
                w_raw = 1.0
            out[i, COL_R] = r_next
            out[i, COL_W] = w_raw

            out[i, COL_NEWINF] = new_inf[i]
            out[i, COL_ADMIT] = admit[i]
            out[i, COL_MIX] = states[i, COL_MIX]
            out[i, COL_B] = bprime[i]
            out[i, COL_F] = fprime[i]
            out[i, COL_M] = m_new[i]
            out[i, COL_PHASE] = np.mod(states[i, COL_PHASE] + phase_step, 1.0)

            if lag > 0:
                for k in range(lag - 1):
                    out[i, N_FIXED_COLS + k] = states[i, N_FIXED_COLS + k + 1]
                out[i, N_FIXED_COLS + lag - 1] = ihr * new_inf[i]
        return out

    @njit(cache=True)
    def lognormal_logpdf_nb(obs, pred, sigma, floor):
        n = pred.shape[0]
        out = np.empty(n)
        lo = np.log(obs + floor)
        for i in range(n):
            d = lo - np.log(pred[i] + floor)
            out[i] = -lo - np.log(sigma) - _LOG_SQRT_2PI - 0.5 * (d / sigma) ** 2
        return out

    @njit(cache=True)
    def truncnorm01_logpdf_nb(obs, loc, sigma):
        n = loc.shape[0]
        out = np.empty(n)
        for i in range(n):
            z = (obs - loc[i]) / sigma
            lo = (0.0 - loc[i]) / sigma
            hi = (1.0 - loc[i]) / sigma
            mass = 0.5 * (math.erf(hi / _SQRT2) - math.erf(lo / _SQRT2))
            out[i] = -np.log(sigma) - _LOG_SQRT_2PI - 0.5 * z * z - np.log(mass)
        return out

    @njit(cache=True)
    def systematic_resample_nb(weights, u):
        n = weights.shape[0]
        idx = np.empty(n, dtype=np.int64)
        cum = weights[0]
        j = 0
        for i in range(n):
            pos = (i + u) / n
            while pos > cum and j < n - 1:
                j += 1
                cum += weights[j]
            idx[i] = j
        return idx


# ---------------------------------------------------------------------------
# Backend selection
# ---------------------------------------------------------------------------

if NUMBA_ACTIVE:
    transition_pre = transition_pre_nb
    transition_post = transition_post_nb
    lognormal_logpdf = lognormal_logpdf_nb
    truncnorm01_logpdf = truncnorm01_logpdf_nb
    systematic_resample = systematic_resample_nb
else:
    transition_pre = transition_pre_np
    transition_post = transition_post_np
    lognormal_logpdf = lognormal_logpdf_np
    truncnorm01_logpdf = truncnorm01_logpdf_np
    systematic_resample = systematic_resample_np


def active_backend() -> str:
    return "numba" if NUMBA_ACTIVE else "numpy"
