// Pure report-view construction: findings grouped into severity buckets,
// optional file/severity filters, HTML rendering with escaping. The UI never
// mutates the artifact; everything here is a function of review.json.

import { Finding, ReviewReport, Severity, SEVERITY_ORDER } from "./types.js";

export const SUPPORTED_SCHEMA_VERSION = "1";

export interface SeverityBucket {
  severity: Severity;
  count: number;
  findings: Finding[];
}

export interface ReportFilter {
  file?: string;
  severity?: Severity;
}

export function schemaError(report: { schema_version?: unknown }): string | null {
  if (report.schema_version === SUPPORTED_SCHEMA_VERSION) {
    return null;
  }
  return `unsupported artifact version ${JSON.stringify(report.schema_version ?? null)} (expected "${SUPPORTED_SCHEMA_VERSION}")`;
}

export function filterFindings(findings: Finding[], filter: ReportFilter = {}): Finding[] {
  return findings.filter(
    (f) =>
      (filter.file === undefined || f.file === filter.file) &&
      (filter.severity === undefined || f.severity === filter.severity),
  );
}

export function buildBuckets(findings: Finding[]): SeverityBucket[] {
  const buckets: SeverityBucket[] = [];
  for (const severity of SEVERITY_ORDER) {
    const matched = findings.filter((f) => f.severity === severity);
    if (matched.length > 0) {
      buckets.push({ severity, count: matched.length, findings: matched });
    }
  }
  return buckets;
}

export function distinctFiles(findings: Finding[]): string[] {
  return [...new Set(findings.map((f) => f.file))].sort();
}

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function renderFinding(f: Finding): string {
  const suggestion = f.suggestion
    ? `<p class="suggestion">Suggestion: ${escapeHtml(f.suggestion)}</p>`
    : "";
  const snippet = f.snippet ? `<pre class="snippet"><code>${escapeHtml(f.snippet)}</code></pre>` : "";
  return [
    `<article class="finding" data-finding-id="${escapeHtml(f.id)}" data-file="${escapeHtml(f.file)}">`,
    `<p><strong>${escapeHtml(f.file)}:${f.line}</strong> — ${escapeHtml(f.issue)}</p>`,
    suggestion,
    snippet,
    `</article>`,
  ].join("");
}

export function renderReportHtml(report: ReviewReport, filter: ReportFilter = {}): string {
  const error = schemaError(report);
  if (error !== null) {
    return `<section class="error"><p>${escapeHtml(error)}</p></section>`;
  }
  const title =
    `${report.source.owner}/${report.source.name}` +
    (report.source.pr_number !== null ? ` (PR #${report.source.pr_number})` : "");
  const visible = filterFindings(report.findings, filter);
  const buckets = buildBuckets(visible);

  const parts: string[] = [];
  parts.push(`<h1>Review: ${escapeHtml(title)}</h1>`);
  parts.push(
    `<p class="meta">mode ${escapeHtml(report.mode)} · model ${escapeHtml(report.model_id)} · ${escapeHtml(report.generated_at)}</p>`,
  );
  parts.push(`<section class="summary"><h2>Summary</h2><p>${escapeHtml(report.summary_text)}</p></section>`);
  if (buckets.length === 0) {
    parts.push(`<section class="findings"><h2>Findings</h2><p class="empty">No findings</p></section>`);
  } else {
    parts.push(`<section class="findings"><h2>Findings</h2>`);
    for (const bucket of buckets) {
      const label = bucket.severity.charAt(0).toUpperCase() + bucket.severity.slice(1);
      parts.push(
        `<details open data-severity="${bucket.severity}"><summary>${label} (${bucket.count})</summary>`,
      );
      for (const f of bucket.findings) {
        parts.push(renderFinding(f));
      }
      parts.push(`</details>`);
    }
    parts.push(`</section>`);
  }
  if (report.skipped.length > 0) {
    parts.push(`<section class="skipped"><h2>Skipped files (${report.skipped.length})</h2><ul>`);
    for (const s of report.skipped) {
      parts.push(`<li>${escapeHtml(s.path)} — ${escapeHtml(s.reason)}</li>`);
    }
    parts.push(`</ul></section>`);
  }
  return parts.join("\n");
}
