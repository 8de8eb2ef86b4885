// Dashboard wiring: hash routes #/ (submit form), #/runs/{id} (live staged
// timeline), and the report view once a run succeeds. All data comes from
// the documented service endpoints.

import { ApiClient } from "./api.js";
import { applyEvent, initialView, UiJobView } from "./fold.js";
import { renderReportHtml, ReportFilter, distinctFiles } from "./report.js";
import { subscribeToEvents } from "./sse.js";
import { escapeHtml } from "./report.js";
import { ALL_STAGES, ReviewReport, Severity, SEVERITY_ORDER } from "./types.js";
import { validateRepoUrl } from "./validate.js";

declare global {
  interface Window {
    REPOREVIEWER_API?: string;
  }
}

const api = new ApiClient(window.REPOREVIEWER_API ?? "");
const app = document.getElementById("app")!;

function navigate(hash: string): void {
  window.location.hash = hash;
}

function renderSubmitView(): void {
  app.innerHTML = `
    <h1>reporeviewer</h1>
    <form id="submit-form">
      <label>Repository URL
        <input name="repo_url" placeholder="https://github.com/owner/name" required>
      </label>
      <label>Pull request number (optional)
        <input name="pr_number" type="number" min="1">
      </label>
      <label>Mode
        <select name="mode">
          <option value="full">full</option>
          <option value="single_agent">single_agent</option>
          <option value="no_context">no_context</option>
          <option value="no_priority">no_priority</option>
        </select>
      </label>
      <button type="submit">Start review</button>
      <p id="form-error" class="error" hidden></p>
    </form>`;
  const form = document.getElementById("submit-form") as HTMLFormElement;
  const errorBox = document.getElementById("form-error") as HTMLParagraphElement;
  form.addEventListener("submit", async (e) => {
    e.preventDefault();
    errorBox.hidden = true;
    const data = new FormData(form);
    const repoUrl = String(data.get("repo_url") ?? "");
    const validated = validateRepoUrl(repoUrl);
    if (!validated.ok) {
      errorBox.textContent = validated.error;
      errorBox.hidden = false;
      return; // invalid URL: no request is made
    }
    const body: { repo_url: string; pr_number?: number; mode?: string } = {
      repo_url: repoUrl,
      mode: String(data.get("mode") ?? "full"),
    };
    const pr = String(data.get("pr_number") ?? "");
    if (pr) {
      body.pr_number = Number(pr);
    }
    const result = await api.submitReview(body);
    if (result.ok) {
      navigate(`#/runs/${result.jobId}`);
    } else {
      errorBox.textContent =
        result.status === 429 ? `server busy: ${result.error}` : result.error;
      errorBox.hidden = false;
    }
  });
}

function renderTimeline(view: UiJobView): string {
  const rows = ALL_STAGES.map((stage) => {
    let extra = "";
    if (stage === "review" && view.reviewTotal !== null && view.reviewCurrent !== null) {
      extra = ` <progress max="${view.reviewTotal}" value="${view.reviewCurrent}"></progress> ${view.reviewCurrent}/${view.reviewTotal}`;
    }
    return `<li class="stage-${view.stages[stage]}" data-stage="${stage}">${stage}: ${view.stages[stage]}${extra}</li>`;
  });
  const error = view.lastError
    ? `<p class="error">Run failed: ${escapeHtml(view.lastError)}</p>`
    : "";
  return `<ol class="timeline">${rows.join("")}</ol>${error}`;
}

function renderReportControls(report: ReviewReport, filter: ReportFilter, jobId: string): string {
  const files = distinctFiles(report.findings)
    .map((f) => `<option value="${escapeHtml(f)}"${filter.file === f ? " selected" : ""}>${escapeHtml(f)}</option>`)
    .join("");
  const severities = SEVERITY_ORDER.map(
    (s) => `<option value="${s}"${filter.severity === s ? " selected" : ""}>${s}</option>`,
  ).join("");
  return `
    <div class="controls">
      <label>File <select id="filter-file"><option value="">(all)</option>${files}</select></label>
      <label>Severity <select id="filter-severity"><option value="">(all)</option>${severities}</select></label>
      <a href="${api.artifactUrl(jobId, "review.json")}" download>review.json</a>
      <a href="${api.artifactUrl(jobId, "review.md")}" download>review.md</a>
    </div>`;
}

function showReport(jobId: string, report: ReviewReport, filter: ReportFilter = {}): void {
  app.innerHTML =
    renderReportControls(report, filter, jobId) + renderReportHtml(report, filter);
  const fileSelect = document.getElementById("filter-file") as HTMLSelectElement | null;
  const severitySelect = document.getElementById("filter-severity") as HTMLSelectElement | null;
  const rerender = () => {
    const next: ReportFilter = {};
    if (fileSelect?.value) {
      next.file = fileSelect.value;
    }
    if (severitySelect?.value) {
      next.severity = severitySelect.value as Severity;
    }
    showReport(jobId, report, next);
  };
  fileSelect?.addEventListener("change", rerender);
  severitySelect?.addEventListener("change", rerender);
}

async function renderRunView(jobId: string): Promise<void> {
  try {
    await api.getJob(jobId);
  } catch {
    app.innerHTML = `<h1>Not found</h1><p class="error">No job ${escapeHtml(jobId)}.</p><p><a href="#/">Start a review</a></p>`;
    return;
  }
  let view = initialView();
  app.innerHTML = `<h1>Run ${escapeHtml(jobId)}</h1><div id="timeline">${renderTimeline(view)}</div>`;
  const timeline = document.getElementById("timeline")!;

  subscribeToEvents(api.eventsUrl(jobId), {
    onEvent: (event) => {
      view = applyEvent(view, event);
      timeline.innerHTML = renderTimeline(view);
    },
    onDone: async () => {
      try {
        const report = await api.fetchReport(jobId);
        showReport(jobId, report);
      } catch (error) {
        timeline.innerHTML += `<p class="error">${escapeHtml(String(error))}</p>`;
      }
    },
    onError: (error) => {
      view = { ...view, lastError: error };
      timeline.innerHTML = renderTimeline(view);
    },
  });
}

function route(): void {
  const hash = window.location.hash || "#/";
  const runMatch = hash.match(/^#\/runs\/([A-Za-z0-9_-]+)$/);
  if (runMatch) {
    renderRunView(runMatch[1]);
  } else {
    renderSubmitView();
  }
}

window.addEventListener("hashchange", route);
route();
