/**
 * Session store: the single mutable state behind the page.
 *
 * The server is the source of truth; this store only remembers what the
 * server said plus the analyst's uncommitted inputs (dial settings and
 * staged comparison candidates). Commits are guarded twice against the
 * double-click problem: an in-flight flag swallows re-entrant calls
 * locally, and an idempotency key lets the server dedupe retries of the
 * same body after a network failure.
 */

import {
  ACTION_DIMS,
  ApiClient,
  ApiError,
  HistoryWeek,
  RolloutsResponse,
  SessionPayload,
  StepResponse,
  validateDims,
} from "./api.js";

export interface ErrorView {
  status: number;
  code: string;
  message: string;
  details: string[];
}

export interface SessionView {
  session: SessionPayload | null;
  history: HistoryWeek[];
  dials: number[];
  inFlight: boolean;
  error: ErrorView | null;
  staged: number[][][]; // candidate plans: plan -> week -> 13 dial levels
  compare: RolloutsResponse | null;
  debug: boolean;
}

export type CommitOutcome =
  | { kind: "committed"; response: StepResponse }
  | { kind: "ignored"; reason: string }
  | { kind: "failed"; error: ErrorView };

function toErrorView(e: unknown): ErrorView {
  if (e instanceof ApiError) {
    return { status: e.status, code: e.code, message: e.message, details: e.details };
  }
  return { status: 0, code: "error", message: String(e), details: [] };
}

let keyCounter = 0;

/** Unique enough for one browser tab; the server scopes keys per session. */
export function newIdempotencyKey(): string {
  keyCounter += 1;
  return `ui-${Date.now().toString(36)}-${keyCounter}`;
}

export class SessionStore {
  readonly view: SessionView = {
    session: null,
    history: [],
    dials: new Array(ACTION_DIMS).fill(0),
    inFlight: false,
    error: null,
    staged: [],
    compare: null,
    debug: false,
  };

  // key reuse is tied to the exact request body: retrying the same dials
  // replays server-side, while edited dials get a fresh key (the server
  // 409s a reused key with a different body)
  private pendingKey: string | null = null;
  private pendingFingerprint: string | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly makeKey: () => string = newIdempotencyKey,
  ) {}

  async create(req: Parameters<ApiClient["createSession"]>[0]): Promise<void> {
    const session = await this.api.createSession(req);
    this.view.session = session;
    this.view.history = [];
    this.view.compare = null;
    this.view.staged = [];
    this.view.error = null;
    this.view.debug = req.debug === true;
  }

  setDial(index: number, level: number): void {
    if (index < 0 || index >= ACTION_DIMS) return;
    this.view.dials[index] = level;
  }

  /** Commit the staged dials as this week's action. Safe to call twice. */
  async commitWeek(): Promise<CommitOutcome> {
    const ses = this.view.session;
    if (!ses) return { kind: "ignored", reason: "no session" };
    if (this.view.inFlight) return { kind: "ignored", reason: "commit in flight" };

    const dials = [...this.view.dials];
    const problems = validateDims(dials);
    if (problems.length) {
      const error = { status: 0, code: "invalid_dials", message: "dials out of range", details: problems };
      this.view.error = error;
      return { kind: "failed", error };
    }

    const body = { dims: dials, week: ses.week + 1 };
    const fingerprint = JSON.stringify(body);
    if (this.pendingKey === null || this.pendingFingerprint !== fingerprint) {
      this.pendingKey = this.makeKey();
      this.pendingFingerprint = fingerprint;
    }

    this.view.inFlight = true;
    this.view.error = null;
    const dialSnapshot = [...this.view.dials];
    try {
      const resp = await this.api.stepSession(ses.id, {
        action: body,
        idempotency_key: this.pendingKey,
      });
      this.view.session = {
        ...ses,
        week: resp.week,
        state_hash: resp.state_hash,
        belief: resp.belief,
        seed_ledger: resp.seed_ledger,
      };
      const row: HistoryWeek = {
        week: resp.week,
        action: { week: resp.week, dims: dials },
        observation: resp.observation,
        belief: resp.belief,
      };
      if (resp.truth !== undefined) row.truth = resp.truth;
      this.view.history.push(row);
      this.view.compare = null; // stale: scored from the previous belief
      this.pendingKey = null;
      this.pendingFingerprint = null;
      return { kind: "committed", response: resp };
    } catch (e) {
      const error = toErrorView(e);
      this.view.error = error;
      this.view.dials = dialSnapshot;
      // keep pendingKey: an unchanged retry must replay, not double-step
      return { kind: "failed", error };
    } finally {
      this.view.inFlight = false;
    }
  }

  /** Re-sync from the server (the view must never drift from it). */
  async refresh(): Promise<void> {
    const ses = this.view.session;
    if (!ses) return;
    this.view.session = await this.api.getSession(ses.id);
    const hist = await this.api.history(ses.id);
    this.view.history = hist.weeks;
  }

  stageCandidate(plan: number[][]): string[] {
    const problems = plan.flatMap((week, t) =>
      validateDims(week).map((p) => `week ${t + 1}: ${p}`));
    if (problems.length === 0) this.view.staged.push(plan.map((w) => [...w]));
    return problems;
  }

  clearCandidates(): void {
    this.view.staged = [];
    this.view.compare = null;
  }

  get canCompare(): boolean {
    return this.view.session !== null && this.view.staged.length > 0 && !this.view.inFlight;
  }

  async compareCandidates(samples?: number, reward?: Record<string, number>): Promise<RolloutsResponse | null> {
    const ses = this.view.session;
    if (!ses || !this.canCompare) return null;
    const req: Parameters<ApiClient["rollouts"]>[1] = {
      candidates: this.view.staged.map((plan) => plan.map((dims) => ({ dims }))),
    };
    if (samples !== undefined) req.samples = samples;
    if (reward !== undefined) req.reward = reward;
    try {
      const resp = await this.api.rollouts(ses.id, req);
      this.view.compare = resp;
      this.view.error = null;
      return resp;
    } catch (e) {
      this.view.error = toErrorView(e);
      return null;
    }
  }
}
