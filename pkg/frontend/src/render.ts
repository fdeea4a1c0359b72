/**
 * Pure renderers: (server data) -> HTML string.
 *
 * No DOM access and no side effects, so the whole surface is testable as
 * string snapshots. Two rules hold everywhere:
 *  - every number printed is a server response field, stringified verbatim
 *    (never recomputed or rounded), so what the analyst reads is exactly
 *    what the API returned;
 *  - SVG coordinates are layout geometry, not displayed numbers, and are
 *    rounded for stable markup.
 */

import {
  CandidateResult,
  FanSeries,
  HistoryWeek,
  MAX_LEVEL,
} from "./api.js";
import { ErrorView, SessionView } from "./state.js";

export const DIM_NAMES = [
  "school_closing",
  "workplace_closing",
  "cancel_events",
  "gathering_restrictions",
  "close_transport",
  "stay_home",
  "internal_movement",
  "intl_travel",
  "income_support",
  "debt_relief",
  "public_info",
  "testing_policy",
  "facial_coverings",
] as const;

/** Verbatim display: the string form of exactly what the server sent. */
export function num(x: number): string {
  return String(x);
}

export function esc(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/**
 * Guard the rendering invariants: per-week records must agree on their
 * week index, and candidate fan series must match their week axis.
 * Throws instead of rendering inconsistent data.
 */
export function validateView(view: SessionView): void {
  for (const row of view.history) {
    if (row.observation.week !== row.week || row.belief.week !== row.week) {
      throw new Error(
        `history week ${row.week} carries observation week ` +
          `${row.observation.week} and belief week ${row.belief.week}`,
      );
    }
    if (row.action.dims.length !== DIM_NAMES.length) {
      throw new Error(`history week ${row.week} action has ${row.action.dims.length} dims`);
    }
  }
  const ses = view.session;
  if (ses && view.history.length !== ses.week) {
    throw new Error(`session is at week ${ses.week} but history has ${view.history.length} rows`);
  }
  if (view.compare) {
    for (const cand of view.compare.candidates) {
      const n = cand.weeks.length;
      for (const channel of ["hosp", "cases", "census"] as const) {
        const fan = cand.fan[channel];
        for (const series of [fan.mean, fan.q05, fan.q25, fan.q50, fan.q75, fan.q95]) {
          if (series.length !== n) {
            throw new Error(
              `candidate ${cand.index} ${channel} fan length ${series.length} != ${n} weeks`,
            );
          }
        }
      }
    }
  }
}

export function renderStatus(view: SessionView): string {
  const ses = view.session;
  if (!ses) return `<p class="status empty">No session. Create one to begin.</p>`;
  const twin = ses.twin ? ` <span class="badge twin">twin params</span>` : "";
  const debug = view.debug ? ` <span class="badge debug">debug</span>` : "";
  return [
    `<dl class="status">`,
    `<dt>session</dt><dd>${esc(ses.id)}</dd>`,
    `<dt>week</dt><dd>${num(ses.week)}</dd>`,
    `<dt>particles</dt><dd>${num(ses.particles)}</dd>`,
    `<dt>config</dt><dd class="hash">${esc(ses.config_hash.slice(0, 12))}</dd>`,
    `<dt>state</dt><dd class="hash">${esc(ses.state_hash.slice(0, 12))}</dd>`,
    `</dl>${twin}${debug}`,
  ].join("");
}

/** One row per committed week; latent truth renders only in debug mode. */
export function renderTimeline(history: HistoryWeek[], debug: boolean): string {
  if (history.length === 0) return `<p class="timeline empty">No weeks committed yet.</p>`;
  const truthCols = debug ? `<th>true I</th><th>true b</th>` : "";
  const head =
    `<tr><th>week</th><th>action</th><th>cases/100k</th><th>hosp/100k</th>` +
    `<th>survey b</th><th>belief I (5..95%)</th><th>belief R_eff (5..95%)</th>` +
    `<th>belief b (5..95%)</th>${truthCols}</tr>`;
  const rows = history.map((row) => {
    const b = row.belief;
    const truth =
      debug && row.truth !== undefined
        ? `<td>${num(row.truth.I)}</td><td>${num(row.truth.b)}</td>`
        : debug
          ? `<td></td><td></td>`
          : "";
    return (
      `<tr><td>${num(row.week)}</td>` +
      `<td class="dims">${row.action.dims.map(num).join(" ")}</td>` +
      `<td>${num(row.observation.reported_cases_per_100k)}</td>` +
      `<td>${num(row.observation.hosp_per_100k)}</td>` +
      `<td>${num(row.observation.survey_compliance)}</td>` +
      `<td>${num(b.I_mean)} (${num(b.I_q05)}..${num(b.I_q95)})</td>` +
      `<td>${num(b.effective_R_mean)} (${num(b.effective_R_q05)}..${num(b.effective_R_q95)})</td>` +
      `<td>${num(b.b_mean)} (${num(b.b_q05)}..${num(b.b_q95)})</td>${truth}</tr>`
    );
  });
  return `<table class="timeline">${head}${rows.join("")}</table>`;
}

function round2(x: number): number {
  return Math.round(x * 100) / 100;
}

interface Scale {
  (v: number): number;
}

function linearScale(d0: number, d1: number, r0: number, r1: number): Scale {
  const span = d1 - d0;
  return (v) => (span === 0 ? (r0 + r1) / 2 : r0 + ((v - d0) / span) * (r1 - r0));
}

function polylinePoints(xs: number[], ys: number[], sx: Scale, sy: Scale): string {
  return xs.map((x, i) => `${round2(sx(x))},${round2(sy(ys[i] ?? 0))}`).join(" ");
}

function bandPath(xs: number[], lo: number[], hi: number[], sx: Scale, sy: Scale): string {
  const upper = polylinePoints(xs, hi, sx, sy);
  const lower = polylinePoints([...xs].reverse(), [...lo].reverse(), sx, sy);
  return `${upper} ${lower}`;
}

const RIBBON_W = 360;
const RIBBON_H = 120;
const PAD = 8;

export type BeliefChannel = "I" | "effective_R" | "b";

/**
 * Posterior ribbon of one belief channel over the committed weeks:
 * shaded 5..95% band plus the posterior-mean line. Axis endpoint labels
 * quote the server values verbatim.
 */
export function renderBeliefRibbon(history: HistoryWeek[], channel: BeliefChannel): string {
  if (history.length === 0) {
    return `<svg class="ribbon ${channel}" viewBox="0 0 ${RIBBON_W} ${RIBBON_H}" role="img"><text x="8" y="20">no data</text></svg>`;
  }
  const weeks = history.map((r) => r.week);
  const mean = history.map((r) => r.belief[`${channel}_mean`]);
  const lo = history.map((r) => r.belief[`${channel}_q05`]);
  const hi = history.map((r) => r.belief[`${channel}_q95`]);
  const ymax = Math.max(...hi);
  const ymin = Math.min(0, ...lo);
  const sx = linearScale(weeks[0] ?? 1, weeks[weeks.length - 1] ?? 1, PAD, RIBBON_W - PAD);
  const sy = linearScale(ymin, ymax, RIBBON_H - PAD, PAD);
  return [
    `<svg class="ribbon ${channel}" viewBox="0 0 ${RIBBON_W} ${RIBBON_H}" role="img">`,
    `<title>${channel} posterior, weeks ${num(weeks[0] ?? 0)}..${num(weeks[weeks.length - 1] ?? 0)}, band max ${num(ymax)}</title>`,
    `<polygon class="band" points="${bandPath(weeks, lo, hi, sx, sy)}"></polygon>`,
    `<polyline class="mean" fill="none" points="${polylinePoints(weeks, mean, sx, sy)}"></polyline>`,
    `</svg>`,
  ].join("");
}

export function renderDials(dials: number[], inFlight: boolean): string {
  const rows = DIM_NAMES.map((name, i) => {
    const buttons = Array.from({ length: MAX_LEVEL + 1 }, (_, level) => {
      const on = dials[i] === level ? ` class="on"` : "";
      return `<button type="button"${on} data-dim="${i}" data-level="${level}">${level}</button>`;
    }).join("");
    return `<tr><td>${name}</td><td class="levels">${buttons}</td></tr>`;
  }).join("");
  const disabled = inFlight ? " disabled" : "";
  const label = inFlight ? "committing..." : "Commit week";
  return (
    `<table class="dials">${rows}</table>` +
    `<button type="button" id="commit"${disabled}>${label}</button>`
  );
}

/** Server errors verbatim: code, message, details, and a retry affordance. */
export function renderError(error: ErrorView | null): string {
  if (!error) return "";
  const details = error.details.length
    ? `<ul>${error.details.map((d) => `<li>${esc(d)}</li>`).join("")}</ul>`
    : "";
  return (
    `<div class="error banner"><strong>${esc(error.code)}</strong> ` +
    `${esc(error.message)}${details}` +
    `<button type="button" id="retry">Retry</button></div>`
  );
}

const FAN_W = 280;
const FAN_H = 140;

/**
 * Fan chart of one channel: 5..95% and 25..75% bands, median line, dashed
 * mean. ymax is shared across the compared candidates so their charts are
 * on identical axes.
 */
export function renderFanChart(
  fan: FanSeries,
  weeks: number[],
  ymax: number,
  channel: string,
): string {
  if (weeks.length === 0) {
    return `<svg class="fan ${channel}" viewBox="0 0 ${FAN_W} ${FAN_H}" role="img"><text x="8" y="20">empty horizon</text></svg>`;
  }
  const sx = linearScale(weeks[0] ?? 1, weeks[weeks.length - 1] ?? 1, PAD, FAN_W - PAD);
  const sy = linearScale(0, ymax, FAN_H - PAD, PAD);
  return [
    `<svg class="fan ${channel}" viewBox="0 0 ${FAN_W} ${FAN_H}" role="img">`,
    `<title>${channel}, weeks ${num(weeks[0] ?? 0)}..${num(weeks[weeks.length - 1] ?? 0)}, axis max ${num(ymax)}</title>`,
    `<polygon class="band outer" points="${bandPath(weeks, fan.q05, fan.q95, sx, sy)}"></polygon>`,
    `<polygon class="band inner" points="${bandPath(weeks, fan.q25, fan.q75, sx, sy)}"></polygon>`,
    `<polyline class="median" fill="none" points="${polylinePoints(weeks, fan.q50, sx, sy)}"></polyline>`,
    `<polyline class="mean" fill="none" stroke-dasharray="4 3" points="${polylinePoints(weeks, fan.mean, sx, sy)}"></polyline>`,
    `</svg>`,
  ].join("");
}

/** Rank and constraint badges come straight off the server result. */
export function renderBadges(cand: CandidateResult): string {
  const best = cand.rank === 1 ? " best" : "";
  const violation = cand.violating
    ? `<span class="badge violation">ICU violation (${num(cand.metrics_mean.icu_violation_weeks)} wk)</span>`
    : "";
  return `<span class="badge rank${best}">#${num(cand.rank)}</span>${violation}`;
}

function renderCandidateCard(cand: CandidateResult, ymax: Record<string, number>): string {
  const m = cand.metrics_mean;
  return [
    `<article class="candidate" data-index="${num(cand.index)}">`,
    `<header>Candidate ${num(cand.index)} ${renderBadges(cand)}</header>`,
    renderFanChart(cand.fan.hosp, cand.weeks, ymax["hosp"] ?? 1, "hosp"),
    renderFanChart(cand.fan.cases, cand.weeks, ymax["cases"] ?? 1, "cases"),
    renderFanChart(cand.fan.census, cand.weeks, ymax["census"] ?? 1, "census"),
    `<dl class="metrics">`,
    `<dt>score</dt><dd>${num(cand.score)}</dd>`,
    `<dt>cumulative infections</dt><dd>${num(m.cumulative_infections)}</dd>`,
    `<dt>peak hosp/100k</dt><dd>${num(m.peak_hosp_per_100k)}</dd>`,
    `<dt>peak week</dt><dd>${num(m.peak_week)}</dd>`,
    `<dt>end hosp/100k</dt><dd>${num(m.end_hosp_per_100k)}</dd>`,
    `<dt>ICU violation weeks</dt><dd>${num(m.icu_violation_weeks)}</dd>`,
    `</dl>`,
    `</article>`,
  ].join("");
}

/**
 * Side-by-side candidate cards in submission order, on shared axes.
 * Ranking is whatever the server said; the UI never re-scores.
 */
export function renderComparePanel(view: SessionView): string {
  const stagedCount = view.staged.length;
  const disabled = stagedCount === 0 || view.inFlight ? " disabled" : "";
  const controls =
    `<div class="compare-controls">` +
    `<span>${num(stagedCount)} candidate${stagedCount === 1 ? "" : "s"} staged</span>` +
    `<button type="button" id="compare"${disabled}>Compare</button>` +
    `</div>`;
  const doc = view.compare;
  if (!doc) return `<section class="compare">${controls}</section>`;
  const ymax: Record<string, number> = {};
  for (const channel of ["hosp", "cases", "census"] as const) {
    ymax[channel] = Math.max(
      1e-12,
      ...doc.candidates.flatMap((c) => c.fan[channel].q95),
    );
  }
  const cards = doc.candidates.map((c) => renderCandidateCard(c, ymax)).join("");
  return (
    `<section class="compare">${controls}` +
    `<p class="samples">${num(doc.samples)} samples per candidate from week ${num(doc.week)}</p>` +
    `<div class="cards">${cards}</div></section>`
  );
}

/** Whole-page render; app.ts swaps this into the document. */
export function renderApp(view: SessionView): string {
  validateView(view);
  return [
    `<section class="panel status-panel">${renderStatus(view)}</section>`,
    renderError(view.error),
    `<section class="panel dials-panel">${renderDials(view.dials, view.inFlight)}</section>`,
    `<section class="panel timeline-panel">${renderTimeline(view.history, view.debug)}</section>`,
    `<section class="panel ribbons-panel">`,
    renderBeliefRibbon(view.history, "I"),
    renderBeliefRibbon(view.history, "effective_R"),
    renderBeliefRibbon(view.history, "b"),
    `</section>`,
    renderComparePanel(view),
  ].join("\n");
}
