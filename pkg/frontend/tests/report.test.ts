import { describe, expect, it } from "vitest";

import {
  buildBuckets,
  distinctFiles,
  filterFindings,
  renderReportHtml,
  schemaError,
} from "../src/report.js";
import { Finding, ReviewReport, Severity } from "../src/types.js";

function finding(id: string, file: string, line: number, severity: Severity, issue: string): Finding {
  return { id, file, line, severity, issue, suggestion: "", snippet: `${line}: code` };
}

function fixtureReport(findings: Finding[], schemaVersion = "1"): ReviewReport {
  return {
    schema_version: schemaVersion,
    source: { owner: "o", name: "n", pr_number: null, original_url: "https://github.com/o/n" },
    mode: "full",
    model_id: "m",
    generated_at: "2026-08-09T12:00:00Z",
    context: null,
    findings,
    skipped: [{ path: "img.png", reason: "binary" }],
    summary_text: "the summary",
    stats: {
      files_reviewed: 2,
      files_skipped: 1,
      provider_calls: 4,
      tokens_in: 1,
      tokens_out: 1,
      est_cost_usd: 0,
      duration_s: 0,
      parse_failures: 0,
      retries: 0,
    },
  };
}

const THREE_SEVERITIES: Finding[] = [
  finding("f1", "a.py", 1, "high", "first high"),
  finding("f2", "a.py", 9, "high", "second high"),
  finding("f3", "b.py", 3, "info", "an info"),
  finding("f4", "b.py", 5, "critical", "the critical"),
];

describe("report view", () => {
  it("renders every finding exactly once", () => {
    const html = renderReportHtml(fixtureReport(THREE_SEVERITIES));
    for (const f of THREE_SEVERITIES) {
      const occurrences = html.split(`data-finding-id="${f.id}"`).length - 1;
      expect(occurrences).toBe(1);
    }
  });

  it("orders buckets by severity with correct counts", () => {
    const buckets = buildBuckets(THREE_SEVERITIES);
    expect(buckets.map((b) => [b.severity, b.count])).toEqual([
      ["critical", 1],
      ["high", 2],
      ["info", 1],
    ]);
    const html = renderReportHtml(fixtureReport(THREE_SEVERITIES));
    const critical = html.indexOf("Critical (1)");
    const high = html.indexOf("High (2)");
    const info = html.indexOf("Info (1)");
    expect(critical).toBeGreaterThan(-1);
    expect(high).toBeGreaterThan(critical);
    expect(info).toBeGreaterThan(high);
  });

  it("rejects an unsupported schema version gracefully", () => {
    expect(schemaError(fixtureReport([], "1"))).toBeNull();
    expect(schemaError(fixtureReport([], "2"))).toContain("unsupported artifact version");
    const html = renderReportHtml(fixtureReport(THREE_SEVERITIES, "2"));
    expect(html).toContain("unsupported artifact version");
    expect(html).not.toContain("data-finding-id");
  });

  it("shows an empty state for zero findings", () => {
    const html = renderReportHtml(fixtureReport([]));
    expect(html).toContain("No findings");
  });

  it("filters by file and severity", () => {
    expect(filterFindings(THREE_SEVERITIES, { file: "a.py" }).map((f) => f.id)).toEqual([
      "f1",
      "f2",
    ]);
    expect(filterFindings(THREE_SEVERITIES, { severity: "info" }).map((f) => f.id)).toEqual([
      "f3",
    ]);
    expect(
      filterFindings(THREE_SEVERITIES, { file: "b.py", severity: "critical" }).map((f) => f.id),
    ).toEqual(["f4"]);
    const html = renderReportHtml(fixtureReport(THREE_SEVERITIES), { file: "a.py" });
    expect(html).toContain('data-finding-id="f1"');
    expect(html).not.toContain('data-finding-id="f3"');
  });

  it("lists distinct files sorted", () => {
    expect(distinctFiles(THREE_SEVERITIES)).toEqual(["a.py", "b.py"]);
  });

  it("escapes html in model-controlled text", () => {
    const nasty = finding("x1", "a.py", 1, "low", `<script>alert("x")</script>`);
    const html = renderReportHtml(fixtureReport([nasty]));
    expect(html).not.toContain("<script>alert");
    expect(html).toContain("&lt;script&gt;");
  });

  it("includes summary text and skipped files", () => {
    const html = renderReportHtml(fixtureReport(THREE_SEVERITIES));
    expect(html).toContain("the summary");
    expect(html).toContain("img.png");
  });
});
