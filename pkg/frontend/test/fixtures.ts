/**
 * Hand-written server response fixtures. Tests treat these as the ground
 * truth the UI must reproduce verbatim, so values are chosen to be
 * distinctive: exact decimals, one full-precision double, and a ranking
 * where submission order, score order, and rank order all disagree.
 */

import {
  BeliefSummary,
  CandidateResult,
  FanSeries,
  HistoryResponse,
  HistoryWeek,
  RolloutsResponse,
  SessionPayload,
  StepResponse,
} from "../src/api.js";

export const CONFIG_HASH = "a1".repeat(32);
export const HASH_W0 = "b2".repeat(32);
export const HASH_W1 = "c3".repeat(32);

export const BELIEF_W0: BeliefSummary = {
  week: 0,
  ess: 64,
  I_mean: 0.0025,
  I_q05: 0.001,
  I_q95: 0.004,
  b_mean: 0,
  b_q05: 0,
  b_q95: 0,
  m_mean: 1,
  m_q05: 1,
  m_q95: 1,
  effective_R_mean: 2.125,
  effective_R_q05: 1.75,
  effective_R_q95: 2.5,
};

export const BELIEF_W1: BeliefSummary = {
  ...BELIEF_W0,
  week: 1,
  ess: 51.5,
  I_mean: 0.0055,
  I_q05: 0.003,
  I_q95: 0.0085,
  b_mean: 0.15,
  b_q05: 0.1,
  b_q95: 0.2,
  effective_R_mean: 1.9375,
  effective_R_q05: 1.5,
  effective_R_q95: 2.25,
};

export const BELIEF_W2: BeliefSummary = {
  ...BELIEF_W1,
  week: 2,
  I_mean: 0.011,
  I_q05: 0.007,
  I_q95: 0.016,
  effective_R_mean: 1.8125,
};

export const SESSION_NEW: SessionPayload = {
  id: "ses-01",
  week: 0,
  config_hash: CONFIG_HASH,
  state_hash: HASH_W0,
  belief: BELIEF_W0,
  seed_ledger: ["belief-init"],
  twin: false,
  particles: 64,
};

export const STEP_W1: StepResponse = {
  id: "ses-01",
  week: 1,
  observation: {
    week: 1,
    reported_cases_per_100k: 41.25,
    hosp_per_100k: 3.875,
    survey_compliance: 0.4375,
  },
  belief: BELIEF_W1,
  config_hash: CONFIG_HASH,
  state_hash: HASH_W1,
  streams_used: ["truth/1", "obs/1", "filter/1"],
  seed_ledger: ["belief-init", "truth/1", "obs/1", "filter/1"],
};

export const WEEK_1: HistoryWeek = {
  week: 1,
  action: { week: 1, dims: [2, 2, 2, 2, 2, 2, 2, 2, 0, 0, 1, 3, 4] },
  observation: STEP_W1.observation,
  belief: BELIEF_W1,
};

export const WEEK_2: HistoryWeek = {
  week: 2,
  action: { week: 2, dims: [3, 3, 3, 3, 3, 3, 3, 3, 1, 1, 2, 4, 4] },
  observation: {
    week: 2,
    reported_cases_per_100k: 97.5,
    hosp_per_100k: 8.125,
    survey_compliance: 0.5625,
  },
  belief: BELIEF_W2,
};

export const HISTORY_2W: HistoryResponse = {
  id: "ses-01",
  weeks: [WEEK_1, WEEK_2],
  config_hash: CONFIG_HASH,
  seed_ledger: STEP_W1.seed_ledger,
};

/** Same history with latent truth attached (debug-mode sessions only). */
export const HISTORY_2W_DEBUG: HistoryResponse = {
  ...HISTORY_2W,
  weeks: HISTORY_2W.weeks.map((w, i) => ({
    ...w,
    truth: {
      S: 0.9,
      E: 0.002,
      I: i === 0 ? 0.0123 : 0.0234,
      R: 0.08,
      Hosp: 0.0005,
      new_infections: 0.004,
      hosp_admissions: 0.0002,
      b: i === 0 ? 0.171 : 0.305,
      f: 0.01,
      m: 1.05,
      w: 0.97,
    },
  })),
};

function fan(base: number[], spread: number): FanSeries {
  return {
    mean: base,
    q05: base.map((v) => v - 2 * spread),
    q25: base.map((v) => v - spread),
    q50: base,
    q75: base.map((v) => v + spread),
    q95: base.map((v) => v + 2 * spread),
  };
}

/**
 * Submission order, score order, and rank order all differ: candidate 0
 * has the better score but violates the ICU constraint, so the server
 * ranks it second. A client that re-derives ranking from score gets this
 * wrong; only echoing the server's rank field passes.
 */
export const CAND_0: CandidateResult = {
  index: 0,
  weeks: [2, 3, 4],
  fan: {
    hosp: fan([10.5, 14.25, 12.75], 1.25),
    cases: fan([120.5, 150.25, 130.75], 10.5),
    census: fan([30.25, 38.5, 35.75], 2.5),
  },
  metrics_mean: {
    cumulative_infections: 0.125,
    peak_hosp_per_100k: 14.25,
    peak_week: 3,
    icu_violation_weeks: 1.5,
    end_hosp_per_100k: 12.75,
  },
  score: -1.0,
  violating: true,
  rank: 2,
};

export const CAND_1: CandidateResult = {
  index: 1,
  weeks: [2, 3, 4],
  fan: {
    hosp: fan([8.5, 9.75, 7.25], 0.75),
    cases: fan([90.5, 98.25, 82.75], 6.25),
    census: fan([22.25, 26.5, 24.75], 1.75),
  },
  metrics_mean: {
    cumulative_infections: 0.09375,
    peak_hosp_per_100k: 207.44204426372792,
    peak_week: 4,
    icu_violation_weeks: 0,
    end_hosp_per_100k: 7.25,
  },
  score: -2.25,
  violating: false,
  rank: 1,
};

export const ROLLOUTS_MIXED: RolloutsResponse = {
  candidates: [CAND_0, CAND_1],
  samples: 6,
  week: 1,
  config_hash: CONFIG_HASH,
  state_hash: HASH_W1,
  seed_ledger: STEP_W1.seed_ledger,
};

/** Two identical candidates: their charts must overlap exactly. */
export const ROLLOUTS_TWINS: RolloutsResponse = {
  ...ROLLOUTS_MIXED,
  candidates: [
    { ...CAND_1, index: 0, rank: 1 },
    { ...CAND_1, index: 1, rank: 2 },
  ],
};

export function jsonResponse(doc: unknown, status = 200): Response {
  return new Response(JSON.stringify(doc), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}
