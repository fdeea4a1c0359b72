"""Belief state via bootstrap particle filtering.

The belief over the hidden weekly state is a weighted particle set updated
by propagate-weight-resample. With the bootstrap proposal (dynamics as
proposal) the accumulated log of the mean incremental weight is both the
filtering log-likelihood and the sequential variational bound, so the same
quantity drives calibration.

Weights are kept in log space and renormalized every step; systematic
resampling fires when the effective sample size drops below a threshold
fraction of P. All randomness flows through explicit generators.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .core import (
    Action,
    EpiworldError,
    LatentState,
    ModelParams,
    RngStream,
    ValidationError,
    stringency,
)
from .dynamics import n_state_cols, row_to_state, step_matrix
from .kernels import COL_ADMIT, COL_B, COL_I, COL_M, COL_NEWINF, COL_S
from .observation import (
    MisreportingRegime,
    Observation,
    REPORT_SCALE,
    ascertainment,
    count_channel_logpdf,
    survey_channel_logpdf,
)

DEFAULT_RESAMPLE_THRESHOLD = 0.5
ALL_CHANNELS = ("cases", "hosp", "survey")


class ObservationImpossibleError(EpiworldError):
    """Every particle carries zero likelihood; the model cannot explain o."""


def _as_generator(rng):
    if rng is None:
        return None
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise ValidationError(f"rng must be RngStream or numpy Generator, got {type(rng).__name__}")


@dataclass(frozen=True)
class PriorConfig:
    """Uniform prior box over the uncertain initial-state coordinates.

    Ranges are inclusive (lo, hi) pairs; a point prior has lo = hi. The
    remaining coordinates start at the fixed values below.
    """

    i_range: tuple[float, float] = (5e-4, 5e-3)
    e_range: tuple[float, float] = (0.0, 0.0)
    b_range: tuple[float, float] = (0.0, 0.0)
    m_range: tuple[float, float] = (1.0, 1.0)
    r_init: float = 0.0
    hosp_init: float = 0.0
    w_init: float = 1.0
    mixing_scale: float = 1.0
    season_phase: float = 0.0

    def __post_init__(self):
        for name in ("i_range", "e_range", "b_range", "m_range"):
            rng_pair = tuple(float(v) for v in getattr(self, name))
            object.__setattr__(self, name, rng_pair)
            if len(rng_pair) != 2 or not all(math.isfinite(v) for v in rng_pair):
                raise ValidationError(f"{name} must be a finite (lo, hi) pair")
            if rng_pair[0] > rng_pair[1]:
                raise ValidationError(f"{name} is empty: lo {rng_pair[0]} > hi {rng_pair[1]}")
        for name in ("i_range", "e_range", "b_range"):
            lo, hi = getattr(self, name)
            if lo < 0.0 or hi > 1.0:
                raise ValidationError(f"{name} must lie in [0, 1]")
        if self.m_range[0] <= 0.0:
            raise ValidationError("m_range must be positive")
        if self.r_init < 0 or self.hosp_init < 0:
            raise ValidationError("r_init and hosp_init must be nonnegative")

    def to_json_dict(self) -> dict:
        return {
            "i_range": list(self.i_range), "e_range": list(self.e_range),
            "b_range": list(self.b_range), "m_range": list(self.m_range),
            "r_init": self.r_init, "hosp_init": self.hosp_init,
            "w_init": self.w_init, "mixing_scale": self.mixing_scale,
            "season_phase": self.season_phase,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "PriorConfig":
        kw = dict(d)
        for name in ("i_range", "e_range", "b_range", "m_range"):
            if name in kw:
                kw[name] = tuple(kw[name])
        return cls(**kw)


@dataclass(frozen=True)
class Belief:
    """Weighted particle representation of p(x_t | o_{1:t}, a_{1:t-1}).

    log_weights are normalized (logsumexp = 0). cum_loglik is the filtering
    log-likelihood of everything observed so far.
    """

    states: np.ndarray
    log_weights: np.ndarray
    cum_loglik: float
    week_index: int
    hosp_lag: int

    def __post_init__(self):
        states = np.ascontiguousarray(self.states, dtype=np.float64)
        logw = np.ascontiguousarray(self.log_weights, dtype=np.float64)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "log_weights", logw)
        if states.ndim != 2 or states.shape[1] != n_state_cols(self.hosp_lag):
            raise ValidationError(f"belief states shape {states.shape} invalid")
        if states.shape[0] < 1:
            raise ValidationError("belief needs at least one particle")
        if logw.shape != (states.shape[0],):
            raise ValidationError("log_weights shape mismatch")
        total = float(np.exp(logsumexp(logw)))
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"weights not normalized: sum {total!r}")

    @property
    def particle_count(self) -> int:
        return self.states.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def particles(self) -> list[LatentState]:
        return [row_to_state(row, self.hosp_lag) for row in self.states]


def ess(bel: Belief) -> float:
    """Effective sample size 1 / sum of squared normalized weights."""
    w = bel.weights
    return float(1.0 / np.sum(w * w))


def init_belief(prior: PriorConfig, P: int, rng, hosp_lag: int = 0) -> Belief:
    """Draw P particles from the prior box with uniform weights."""
    if P < 1:
        raise ValidationError("P must be >= 1")
    gen = _as_generator(rng)
    if gen is None:
        raise ValidationError("init_belief requires an rng")

    def draw(pair):
        lo, hi = pair
        if lo == hi:
            return np.full(P, lo)
        return gen.uniform(lo, hi, size=P)

    i0 = draw(prior.i_range)
    e0 = draw(prior.e_range)
    b0 = draw(prior.b_range)
    m0 = draw(prior.m_range)
    s0 = 1.0 - i0 - e0 - prior.r_init - prior.hosp_init
    if np.any(s0 < 0):
        raise ValidationError("prior box allows negative S")

    states = np.zeros((P, n_state_cols(hosp_lag)))
    states[:, COL_S] = s0
    states[:, kernels.COL_E] = e0
    states[:, COL_I] = i0
    states[:, kernels.COL_R] = prior.r_init
    states[:, kernels.COL_H] = prior.hosp_init
    states[:, kernels.COL_W] = prior.w_init
    states[:, kernels.COL_MIX] = prior.mixing_scale
    states[:, COL_B] = b0
    states[:, kernels.COL_F] = 0.0
    states[:, COL_M] = m0
    states[:, kernels.COL_PHASE] = prior.season_phase
    logw = np.full(P, -math.log(P))
    return Belief(states=states, log_weights=logw, cum_loglik=0.0,
                  week_index=0, hosp_lag=hosp_lag)


# ---------------------------------------------------------------------------
# Shared weight / resample bookkeeping (also drives the toy-model tests)
# ---------------------------------------------------------------------------


def weight_and_resample(states, log_weights, log_g, gen,
                        threshold=DEFAULT_RESAMPLE_THRESHOLD):
    """One weight update + conditional systematic resample.

    log_weights must be normalized. Returns (states, log_weights, increment)
    where increment = log sum_i w_i g_i is the step's likelihood
    contribution. Raises ObservationImpossibleError if no particle has
    positive likelihood.
    """
    logw_un = log_weights + log_g
    increment = float(logsumexp(logw_un))
    if not math.isfinite(increment):
        raise ObservationImpossibleError("observation impossible under model")
    logw = logw_un - increment
    w = np.exp(logw)
    ess_val = 1.0 / float(np.sum(w * w))
    P = states.shape[0]
    if ess_val < threshold * P:
        u = float(gen.random()) if gen is not None else 0.5
        idx = kernels.systematic_resample(w, u)
        states = np.ascontiguousarray(states[idx])
        logw = np.full(P, -math.log(P))
    return states, logw, increment


def generic_pf_loglik(init_states, transition_fn, logpdf_fn, n_steps, rng,
                      threshold=DEFAULT_RESAMPLE_THRESHOLD) -> float:
    """Bootstrap PF log-likelihood for an arbitrary state-batch model.

    transition_fn(states, t, gen) -> states; logpdf_fn(states, t) -> per-
    particle observation log-density at step t (t = 1..n_steps).
    """
    gen = _as_generator(rng)
    states = np.ascontiguousarray(init_states, dtype=np.float64)
    P = states.shape[0]
    logw = np.full(P, -math.log(P))
    total = 0.0
    for t in range(1, n_steps + 1):
        states = transition_fn(states, t, gen)
        log_g = logpdf_fn(states, t)
        states, logw, inc = weight_and_resample(states, logw, log_g, gen, threshold)
        total += inc
    return total


# ---------------------------------------------------------------------------
# Epidemic filter step
# ---------------------------------------------------------------------------


def predicted_channels(states: np.ndarray, action: Action, params: ModelParams,
                       regime: MisreportingRegime):
    """Per-particle noise-free channel predictions after a step under action."""
    rho = ascertainment(action, params)
    cases = states[:, COL_NEWINF] * rho * REPORT_SCALE
    hosp = states[:, COL_ADMIT] * REPORT_SCALE
    b = states[:, COL_B]
    survey = (1.0 - regime.fr) * b + regime.fr * np.minimum(1.0, b + regime.delta)
    return cases, hosp, survey


def filter_step(bel: Belief, a: Action, o: Observation, params: ModelParams,
                regime: MisreportingRegime, rng,
                threshold: float = DEFAULT_RESAMPLE_THRESHOLD,
                channels=ALL_CHANNELS) -> Belief:
    """Advance the belief one week: propagate under a, condition on o."""
    if o.week_index != bel.week_index + 1:
        raise ValidationError(
            f"observation week {o.week_index} != belief week {bel.week_index} + 1")
    if params.hosp_lag != bel.hosp_lag:
        raise ValidationError("params.hosp_lag differs from belief pipeline length")
    gen = _as_generator(rng)
    states = step_matrix(bel.states, a, params, gen)

    cases_pred, hosp_pred, survey_pred = predicted_channels(states, a, params, regime)
    log_g = np.zeros(states.shape[0])
    if "cases" in channels:
        log_g = log_g + count_channel_logpdf(
            o.reported_cases_per_100k, cases_pred, params.case_noise_sigma)
    if "hosp" in channels:
        log_g = log_g + count_channel_logpdf(
            o.hosp_per_100k, hosp_pred, params.hosp_noise_sigma)
    if "survey" in channels:
        log_g = log_g + survey_channel_logpdf(
            o.survey_compliance, survey_pred, params.survey_noise_sigma)

    states, logw, inc = weight_and_resample(states, bel.log_weights, log_g, gen, threshold)
    return Belief(states=states, log_weights=logw,
                  cum_loglik=bel.cum_loglik + inc,
                  week_index=o.week_index, hosp_lag=bel.hosp_lag)


# ---------------------------------------------------------------------------
# Posterior summaries
# ---------------------------------------------------------------------------


def weighted_quantile(values: np.ndarray, weights: np.ndarray, q: float) -> float:
    """Quantile of a weighted sample (inverse of the weighted ECDF)."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    cw = np.cumsum(weights[order])
    cw = cw / cw[-1]
    return float(v[np.searchsorted(cw, q, side="left").clip(0, len(v) - 1)])


def belief_summary(bel: Belief, action: Action, params: ModelParams) -> dict:
    """Posterior mean / 5th / 95th of I, b, m, and effective_R this week."""
    w = bel.weights
    s = stringency(action)
    _, _, _, beta_eff, _ = kernels.transition_pre(
        bel.states, s, params.beta0, params.kappa, params.lambda_policy,
        params.lambda_risk, params.lambda_fatigue, params.risk_scale,
        params.fatigue_gain, params.fatigue_decay, params.season_amplitude)
    r_eff = beta_eff * bel.states[:, COL_S] / params.gamma
    row = {"week": bel.week_index, "ess": ess(bel)}
    for name, vals in (("I", bel.states[:, COL_I]), ("b", bel.states[:, COL_B]),
                       ("m", bel.states[:, COL_M]), ("effective_R", r_eff)):
        row[f"{name}_mean"] = float(np.sum(w * vals))
        row[f"{name}_q05"] = weighted_quantile(vals, w, 0.05)
        row[f"{name}_q95"] = weighted_quantile(vals, w, 0.95)
    return row


BELIEF_CSV_FIELDS = ("week", "ess",
                     "I_mean", "I_q05", "I_q95",
                     "b_mean", "b_q05", "b_q95",
                     "m_mean", "m_q05", "m_q95",
                     "effective_R_mean", "effective_R_q05", "effective_R_q95")


def write_belief_summary_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(BELIEF_CSV_FIELDS)
        for r in rows:
            wr.writerow([r["week"]] + [repr(float(r[k])) for k in BELIEF_CSV_FIELDS[1:]])
