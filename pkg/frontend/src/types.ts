// Wire-format types mirroring the review service's JSON contracts.

export type Stage = "clone" | "context" | "review" | "priority" | "summary" | "artifacts";

export const ALL_STAGES: Stage[] = ["clone", "context", "review", "priority", "summary", "artifacts"];

export type EventStatus = "started" | "progress" | "completed" | "failed";

export interface ProgressEvent {
  job_id: string;
  seq: number;
  stage: Stage;
  status: EventStatus;
  detail: string;
  current: number | null;
  total: number | null;
  timestamp: string;
}

export type Severity = "critical" | "high" | "medium" | "low" | "info";

export const SEVERITY_ORDER: Severity[] = ["critical", "high", "medium", "low", "info"];

export interface Finding {
  id: string;
  file: string;
  line: number;
  severity: Severity;
  issue: string;
  suggestion: string;
  snippet: string;
}

export interface SkippedFile {
  path: string;
  reason: string;
}

export interface ContextSummary {
  text: string;
  tree_excerpt: string;
  readme_excerpt: string;
  preview_paths: string[];
  truncated: boolean;
}

export interface RunStats {
  files_reviewed: number;
  files_skipped: number;
  provider_calls: number;
  tokens_in: number;
  tokens_out: number;
  est_cost_usd: number;
  duration_s: number;
  parse_failures: number;
  retries: number;
}

export interface ReviewReport {
  schema_version: string;
  source: {
    owner: string;
    name: string;
    pr_number: number | null;
    original_url: string;
  };
  mode: string;
  model_id: string;
  generated_at: string;
  context: ContextSummary | null;
  findings: Finding[];
  skipped: SkippedFile[];
  summary_text: string;
  stats: RunStats;
}

export interface JobSnapshot {
  job_id: string;
  state: "queued" | "running" | "succeeded" | "failed";
  mode: string;
  created_at: string;
  finished_at: string | null;
  error: string | null;
}
