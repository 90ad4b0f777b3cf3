/** Payload shapes for the tabsplus session service.
 *
 *  Field names mirror the JSON exactly; nothing here is derived. The studio
 *  treats these as read-only records and renders their values verbatim.
 */

export interface SessionInfo {
  schema: string;
  id: string;
  model: string;
  actors: number;
  vertices: number;
}

export interface ActorInfo {
  id: string;
  name: string;
  credential: string;
}

export interface VertexInfo {
  id: string;
  kind: string;
  actor: string;
  label: string;
  /** topological layer assigned by the server; drives the layout columns */
  rank: number;
}

export interface EdgeInfo {
  id: string;
  source: string;
  target: string;
  kind: string;
}

export interface GraphPayload {
  schema: string;
  model: string;
  actors: ActorInfo[];
  vertices: VertexInfo[];
  edges: EdgeInfo[];
}

export interface Candidate {
  id: string;
  entry: string;
  exit: string;
  members: string[];
  /** id of the enclosing candidate, "" for forest roots */
  parent: string;
}

export interface CandidatesPayload {
  schema: string;
  model: string;
  candidates: Candidate[];
}

export interface PlanInfo {
  schema: string;
  model: string;
  mechanism: string;
  crypto: boolean;
  selection: string[];
  /** child region id -> enclosing selected region id */
  nesting: Record<string, string>;
  participants: Record<string, string[]>;
  warnings: string[];
}

export interface PlanEcho {
  plan: PlanInfo;
  valid: boolean;
}

export interface PlanRequest {
  selection: string[];
  mechanism: string;
  crypto?: boolean;
}

export interface CostRow {
  mechanism: string;
  bytes: number;
  gas: number;
  currency: number;
}

export interface LineFit {
  slope: number;
  intercept: number;
  r2: number;
}

export interface TwopcRow {
  n: number;
  phase1: number;
  phase2: number;
}

export interface CostPayload {
  schema: string;
  schedule: Record<string, number>;
  sizes: number[];
  rows: CostRow[];
  ratios: Record<string, Record<string, number>>;
  fits: Record<string, LineFit>;
  twopc: {
    rows: TwopcRow[];
    fits: { phase1: LineFit; phase2: LineFit; phase_gap: number };
  };
}

export interface TraceItem {
  origin: string;
  actor: string;
  payload: unknown;
}

export interface StepRow {
  i: number;
  kind: string;
  chain?: string;
  gas?: number;
  status?: string;
  txn?: string;
  vertex?: string;
  machine?: string;
  method?: string;
  error?: string;
  children?: string[];
  detail?: Record<string, unknown>;
}

export interface RunReport {
  schema: string;
  run: string;
  model: string;
  mechanism: string;
  accepted: number;
  quiescent: boolean;
  expected_next: string[];
  steps: StepRow[];
  txns: Record<string, string>;
  gas: { by_chain: Record<string, number>; by_method: Record<string, number> };
  phase_gas: Record<string, { phase1: number; phase2: number }>;
  final_states: Record<string, string>;
  blocks: Record<string, string[]>;
}

export interface PackageMethod {
  name: string;
  role: string;
  actor: string;
  region: string;
}

/** The slice of a generated package the studio shows (the response carries
 *  the full serialized package; everything else passes through untouched). */
export interface PackageInfo {
  schema: string;
  name: string;
  methods: PackageMethod[];
}

export interface ErrorInfo {
  code: string;
  message: string;
  detail?: unknown;
}

/** Error envelope returned by every non-2xx route. */
export interface ErrorBody {
  error: ErrorInfo;
}

/** Detail attached when a submitted trace is rejected mid-run. */
export interface RejectionDetail {
  failed_at: number;
  origin: string;
  expected: string[];
}

/** Narrow an error detail to a trace rejection, if that is what it is. */
export function rejectionDetail(error: ErrorInfo): RejectionDetail | null {
  const d = error.detail;
  if (typeof d !== "object" || d === null) return null;
  const rec = d as Record<string, unknown>;
  if (typeof rec.failed_at !== "number") return null;
  return {
    failed_at: rec.failed_at,
    origin: typeof rec.origin === "string" ? rec.origin : "",
    expected: Array.isArray(rec.expected) ? rec.expected.map(String) : [],
  };
}
