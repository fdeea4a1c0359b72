"""Weekly latent transition dynamics.

Chain-binomial SEIR with a hospitalization pipeline, behavior feedback, a
jump regime on transmissibility, seasonality, and waning immunity. One call
advances a batch of particles one week under a single action.

Flow model (all per-capita, computed from begin-of-week stocks and applied
simultaneously, so population mass is conserved to float rounding):

    p_inf = 1 - exp(-beta_eff * I)     S -> E
    p_EI  = 1 - exp(-sigma)            E -> I
    p_IR  = 1 - exp(-gamma)            I -> R   (on I net of admissions)
    p_HO  = 1 - exp(-1 / hosp_stay)    Hosp -> R
    p_WS  = 1 - exp(-waning_rate * (1 - w))   R -> S

beta_eff = beta0 * season * m * mixing_scale * (1 - kappa * b'), where b' is
this week's compliance after policy, perceived-risk, and fatigue updates.
Admissions withdraw ihr * new_infections from I after hosp_lag weeks via an
explicit pipeline. Stochastic flows are Binomial draws at grain n_sim,
clamped to their source stock; deterministic mode propagates expectations
and suppresses regime jumps.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .core import Action, LatentState, ModelParams, RngStream, ValidationError, stringency
from .kernels import (
    COL_ADMIT,
    COL_B,
    COL_E,
    COL_F,
    COL_H,
    COL_I,
    COL_M,
    COL_MIX,
    COL_NEWINF,
    COL_PHASE,
    COL_R,
    COL_S,
    COL_W,
    N_FIXED_COLS,
)


def n_state_cols(hosp_lag: int) -> int:
    return N_FIXED_COLS + int(hosp_lag)


def state_to_row(state: LatentState, hosp_lag: int) -> np.ndarray:
    """Pack a LatentState into one row of the particle matrix layout."""
    if len(state.hosp_pipeline) != hosp_lag:
        raise ValidationError(
            f"hosp_pipeline length {len(state.hosp_pipeline)} != hosp_lag {hosp_lag}")
    row = np.empty(n_state_cols(hosp_lag))
    row[COL_S] = state.S
    row[COL_E] = state.E
    row[COL_I] = state.I
    row[COL_R] = state.R
    row[COL_H] = state.Hosp
    row[COL_NEWINF] = state.new_infections
    row[COL_ADMIT] = state.hosp_admissions
    row[COL_W] = state.w
    row[COL_MIX] = state.mixing_scale
    row[COL_B] = state.b
    row[COL_F] = state.f
    row[COL_M] = state.m
    row[COL_PHASE] = state.season_phase
    row[N_FIXED_COLS:] = state.hosp_pipeline
    return row


def row_to_state(row: np.ndarray, hosp_lag: int) -> LatentState:
    row = np.asarray(row, dtype=np.float64)
    if row.shape != (n_state_cols(hosp_lag),):
        raise ValidationError(f"row shape {row.shape} != ({n_state_cols(hosp_lag)},)")
    return LatentState(
        S=float(row[COL_S]), E=float(row[COL_E]), I=float(row[COL_I]),
        R=float(row[COL_R]), Hosp=float(row[COL_H]),
        new_infections=float(row[COL_NEWINF]),
        hosp_admissions=float(row[COL_ADMIT]),
        hosp_pipeline=tuple(float(v) for v in row[N_FIXED_COLS:]),
        w=float(row[COL_W]), mixing_scale=float(row[COL_MIX]),
        b=float(row[COL_B]), f=float(row[COL_F]), m=float(row[COL_M]),
        season_phase=float(row[COL_PHASE]))


def replicate_state(state: LatentState, n: int, hosp_lag: int) -> np.ndarray:
    """Particle matrix holding n copies of one state."""
    return np.tile(state_to_row(state, hosp_lag), (int(n), 1))


def total_mass(states: np.ndarray) -> np.ndarray:
    """Per-particle population mass (should stay within MASS_TOL of 1)."""
    return (states[:, COL_S] + states[:, COL_E] + states[:, COL_I]
            + states[:, COL_R] + states[:, COL_H])


def behavior_response(state: LatentState, action: Action, params: ModelParams):
    """This week's (compliance, fatigue) under the given action."""
    s = stringency(action)
    risk = min(1.0, state.I / params.risk_scale)
    b2 = state.b + params.lambda_policy * s + params.lambda_risk * risk \
        - params.lambda_fatigue * state.f
    f2 = state.f + params.fatigue_gain * s - params.fatigue_decay
    return min(1.0, max(0.0, b2)), min(1.0, max(0.0, f2))


def effective_beta(state: LatentState, action: Action, params: ModelParams) -> float:
    """Transmission rate after behavior, regime, season, and mixing effects."""
    b2, _ = behavior_response(state, action, params)
    season = 1.0 + params.season_amplitude * math.sin(2.0 * math.pi * state.season_phase)
    return params.beta0 * season * state.m * state.mixing_scale * (1.0 - params.kappa * b2)


def effective_R(state: LatentState, action: Action, params: ModelParams) -> float:
    """Expected offspring per infection this week: beta_eff * S / gamma.

    Treats recovery as the dominant exit from I; admissions (a few percent
    of exits) are ignored, which biases the estimate slightly upward.
    """
    if params.gamma <= 0:
        raise ValidationError("gamma must be positive")
    return effective_beta(state, action, params) * state.S / params.gamma


def _as_generator(rng):
    if rng is None:
        return None
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise ValidationError(f"rng must be RngStream or numpy Generator, got {type(rng).__name__}")


def _flow(stock, p, gen, n_sim, deterministic):
    """One clamped binomial (or expectation) flow out of a stock vector."""
    if deterministic:
        flow = stock * p
    else:
        n = np.rint(stock * n_sim).astype(np.int64)
        flow = gen.binomial(n, p) / n_sim
    return np.minimum(flow, stock)


def step_matrix(states: np.ndarray, action: Action, params: ModelParams,
                rng=None, vacc_fraction: float = 0.0) -> np.ndarray:
    """Advance a (P, NCOLS) particle matrix one week. Returns a new matrix.

    rng may be an RngStream, a numpy Generator, or None (deterministic mode
    only). Draw order per call is fixed: new_inf, e_out, i_rec, h_out,
    r_out, regime uniforms, regime normals; callers that pass per-week
    substreams therefore get reproducible, order-independent paths.
    """
    if params.gamma <= 0:
        raise ValidationError("gamma must be positive to step dynamics")
    if params.hosp_stay <= 0:
        raise ValidationError("hosp_stay must be positive to step dynamics")
    if vacc_fraction < 0:
        raise ValidationError("vacc_fraction must be nonnegative")
    lag = params.hosp_lag
    states = np.ascontiguousarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[1] != n_state_cols(lag):
        raise ValidationError(
            f"state matrix must be (P, {n_state_cols(lag)}), got {states.shape}")
    gen = _as_generator(rng)
    det = params.deterministic
    if gen is None and not det:
        raise ValidationError("stochastic step requires an rng")

    s = stringency(action)
    bprime, fprime, mult, beta_eff, p_inf = kernels.transition_pre(
        states, s, params.beta0, params.kappa, params.lambda_policy,
        params.lambda_risk, params.lambda_fatigue, params.risk_scale,
        params.fatigue_gain, params.fatigue_decay, params.season_amplitude)

    S = states[:, COL_S]
    E = states[:, COL_E]
    I = states[:, COL_I]
    R = states[:, COL_R]
    H = states[:, COL_H]
    w = states[:, COL_W]

    p_ei = 1.0 - math.exp(-params.sigma)
    p_ir = 1.0 - math.exp(-params.gamma)
    p_ho = 1.0 - math.exp(-1.0 / params.hosp_stay)
    p_ws = 1.0 - np.exp(-params.waning_rate * (1.0 - w))

    new_inf = _flow(S, p_inf, gen, params.n_sim, det)
    if lag > 0:
        admit = np.minimum(states[:, N_FIXED_COLS], I)
    else:
        admit = np.minimum(params.ihr * new_inf, I)
    e_out = _flow(E, p_ei, gen, params.n_sim, det)
    i_rec = _flow(I - admit, p_ir, gen, params.n_sim, det)
    h_out = _flow(H, p_ho, gen, params.n_sim, det)
    r_out = _flow(R, p_ws, gen, params.n_sim, det)

    m = states[:, COL_M]
    if det or params.regime_jump_prob == 0.0:
        m_new = m.copy()
    else:
        u = gen.random(states.shape[0])
        z = gen.standard_normal(states.shape[0])
        factor = np.exp(params.regime_jump_loc + params.regime_jump_scale * z)
        m_new = np.where(u < params.regime_jump_prob, m * factor, m)

    w_keep = math.exp(-params.waning_rate)
    phase_step = 1.0 / params.season_period_weeks
    return kernels.transition_post(
        states, new_inf, e_out, i_rec, h_out, r_out, admit,
        float(vacc_fraction), bprime, fprime, m_new,
        params.ihr, w_keep, phase_step, lag)


def step(state: LatentState, action: Action, params: ModelParams,
         rng=None, vacc_fraction: float = 0.0) -> LatentState:
    """Advance a single LatentState one week."""
    row = state_to_row(state, params.hosp_lag)
    out = step_matrix(row[None, :], action, params, rng, vacc_fraction)
    return row_to_state(out[0], params.hosp_lag)
