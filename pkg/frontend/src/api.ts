/**
 * Typed client for the epiworld session API.
 *
 * Every interface here mirrors a server response shape field for field;
 * the UI never derives epidemiological numbers of its own, so these types
 * are the complete vocabulary of what can be displayed.
 */

export const ACTION_DIMS = 13;
export const MAX_LEVEL = 4;

export interface HealthResponse {
  status: string;
  backend: string;
}

/** Posterior summary of the filter at one week. */
export interface BeliefSummary {
  week: number;
  ess: number;
  I_mean: number;
  I_q05: number;
  I_q95: number;
  b_mean: number;
  b_q05: number;
  b_q95: number;
  m_mean: number;
  m_q05: number;
  m_q95: number;
  effective_R_mean: number;
  effective_R_q05: number;
  effective_R_q95: number;
}

export interface ObservationRecord {
  week: number;
  reported_cases_per_100k: number;
  hosp_per_100k: number;
  survey_compliance: number;
}

export interface ActionRecord {
  week: number;
  dims: number[];
}

/** Latent truth; present only when the session was created with debug. */
export interface TruthRecord {
  S: number;
  E: number;
  I: number;
  R: number;
  Hosp: number;
  new_infections: number;
  hosp_admissions: number;
  b: number;
  f: number;
  m: number;
  w: number;
}

export interface SessionPayload {
  id: string;
  week: number;
  config_hash: string;
  state_hash: string;
  belief: BeliefSummary;
  seed_ledger: string[];
  twin: boolean;
  particles: number;
}

export interface StepResponse {
  id: string;
  week: number;
  observation: ObservationRecord;
  belief: BeliefSummary;
  config_hash: string;
  state_hash: string;
  streams_used: string[];
  seed_ledger: string[];
  truth?: TruthRecord;
}

export interface HistoryWeek {
  week: number;
  action: ActionRecord;
  observation: ObservationRecord;
  belief: BeliefSummary;
  truth?: TruthRecord;
}

export interface HistoryResponse {
  id: string;
  weeks: HistoryWeek[];
  config_hash: string;
  seed_ledger: string[];
}

/** Per-week mean and 5/25/50/75/95 quantiles over Monte Carlo paths. */
export interface FanSeries {
  mean: number[];
  q05: number[];
  q25: number[];
  q50: number[];
  q75: number[];
  q95: number[];
}

export interface CandidateMetrics {
  cumulative_infections: number;
  peak_hosp_per_100k: number;
  peak_week: number;
  icu_violation_weeks: number;
  end_hosp_per_100k: number;
}

export interface CandidateResult {
  index: number;
  weeks: number[];
  fan: { hosp: FanSeries; cases: FanSeries; census: FanSeries };
  metrics_mean: CandidateMetrics;
  score: number;
  violating: boolean;
  rank: number;
}

export interface RolloutsResponse {
  candidates: CandidateResult[];
  samples: number;
  week: number;
  config_hash: string;
  state_hash: string;
  seed_ledger: string[];
}

export interface CreateSessionRequest {
  config?: unknown;
  preset?: string;
  particles?: number;
  seed?: number;
  debug?: boolean;
  twin_params?: Record<string, number>;
}

export interface StepRequest {
  action: { dims: number[]; week?: number };
  idempotency_key?: string;
}

export interface RolloutsRequest {
  candidates: { dims: number[] }[][];
  samples?: number;
  reward?: Record<string, number>;
}

/** Error body every endpoint uses: {code, message, details[]}. */
export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
    public readonly details: string[] = [],
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private readonly baseUrl: string;

  constructor(
    baseUrl: string,
    private readonly fetchFn: FetchLike = (...a) => fetch(...a),
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchFn(this.baseUrl + path, {
        method,
        headers: body === undefined ? undefined : { "Content-Type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (e) {
      throw new ApiError(0, "network_error", e instanceof Error ? e.message : String(e));
    }
    const text = await resp.text();
    let doc: unknown = null;
    if (text) {
      try {
        doc = JSON.parse(text);
      } catch {
        doc = null;
      }
    }
    if (!resp.ok) {
      const err = (doc ?? {}) as { code?: string; message?: string; details?: string[] };
      throw new ApiError(
        resp.status,
        err.code ?? "http_error",
        err.message ?? `HTTP ${resp.status}`,
        err.details ?? [],
      );
    }
    return doc as T;
  }

  health(): Promise<HealthResponse> {
    return this.request("GET", "/healthz");
  }

  createSession(req: CreateSessionRequest): Promise<SessionPayload> {
    return this.request("POST", "/sessions", req);
  }

  getSession(id: string): Promise<SessionPayload> {
    return this.request("GET", `/sessions/${id}`);
  }

  stepSession(id: string, req: StepRequest): Promise<StepResponse> {
    return this.request("POST", `/sessions/${id}/step`, req);
  }

  rollouts(id: string, req: RolloutsRequest): Promise<RolloutsResponse> {
    return this.request("POST", `/sessions/${id}/rollouts`, req);
  }

  history(id: string): Promise<HistoryResponse> {
    return this.request("GET", `/sessions/${id}/history`);
  }
}

/** Dial vectors must be 13 integer levels in 0..4; returns human-readable problems. */
export function validateDims(dims: number[]): string[] {
  const problems: string[] = [];
  if (dims.length !== ACTION_DIMS) {
    problems.push(`expected ${ACTION_DIMS} dims, got ${dims.length}`);
    return problems;
  }
  dims.forEach((v, i) => {
    if (!Number.isInteger(v) || v < 0 || v > MAX_LEVEL) {
      problems.push(`dim ${i}: level ${v} outside 0..${MAX_LEVEL}`);
    }
  });
  return problems;
}
