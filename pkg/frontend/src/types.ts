// Payload types mirroring the server's JSON surface. The client renders
// these verbatim; no statistic displayed in the UI is computed locally.

export interface StratumRow {
  ystar: 0 | 1;
  xstar: 0 | 1;
  z: number;
  count: number;
}

export interface StrataDoc {
  strata: StratumRow[];
}

export interface ThetaDoc {
  beta: number;
  eta_ystar: number[];
  eta_xstar: number[];
  eta_y: number[];
  eta_x: number[];
  z_marginal: number[] | null;
}

export interface ModelDoc {
  z_levels: number[][];
  terms: { ystar: string[]; xstar: string[]; y: string[]; x: string[] };
}

export interface ParamsDoc {
  model: ModelDoc;
  theta: ThetaDoc;
}

export interface DesignDoc {
  n: number;
  allocation: number[];
  pis: number[];
  strata: StratumRow[];
}

export interface TopDesign {
  allocation: number[];
  variance: number;
}

export interface TraceIteration {
  step: number;
  rows: number;
  best_allocation: number[];
  best_variance: number | null;
  skipped: number;
  variances: number[];
  top_designs: TopDesign[];
}

export interface SearchTraceDoc {
  iterations: TraceIteration[];
  design: DesignDoc;
  variance: number | null;
}

export interface DesignOutputDoc {
  strategy: string;
  n: number;
  m: number | null;
  seed: number | null;
  design: DesignDoc;
  trace: SearchTraceDoc | null;
}

export interface JobProgress {
  iteration?: number;
  step?: number;
  rows_done?: number;
  rows_total?: number;
  replicate?: number;
  total?: number;
}

export interface JobDoc<R = unknown> {
  id: string;
  status: "queued" | "running" | "done" | "failed";
  progress: JobProgress | null;
  result: R | null;
  error: ApiErrorBody | null;
}

export interface ApiErrorBody {
  type: string;
  message: string;
}

export type SessionState =
  | "created"
  | "wave-planned"
  | "wave-data-ingested"
  | "finalized";

export interface WavePlanDoc {
  wave: number;
  strategy: string;
  size: number;
  incremental: number[];
  cumulative: number[];
  trace: SearchTraceDoc | null;
  seed: number;
}

export interface SessionFitDoc {
  seq: number;
  theta: ThetaDoc;
  loglik: number;
  converged: boolean;
  n_validated: number;
}

export interface SessionDoc {
  id: string;
  state: SessionState;
  version: number;
  n: number;
  m: number;
  waves: number;
  max_rows: number;
  strata: StratumRow[];
  model: ModelDoc;
  prior_theta: ThetaDoc | null;
  plans: WavePlanDoc[];
  ingested: ValidatedRecord[];
  fits: SessionFitDoc[];
  final_fit: Omit<SessionFitDoc, "seq"> | null;
  audit_log: { seq: number; action: string; payload: unknown }[];
}

export interface ValidatedRecord {
  ystar: 0 | 1;
  xstar: 0 | 1;
  z: number;
  y: 0 | 1;
  x: 0 | 1;
}

export interface MetricsRowDoc {
  design: string;
  pct_bias: number | null;
  se: number | null;
  re: number | null;
  ri: number | null;
  failures: number;
  used: number;
}
