// Thin client over the documented service endpoints; no review logic here.

import { JobSnapshot, ReviewReport } from "./types.js";

export interface SubmitRequest {
  repo_url: string;
  pr_number?: number;
  mode?: string;
  model_id?: string;
}

export type SubmitResult =
  | { ok: true; jobId: string }
  | { ok: false; status: number; error: string };

export class ApiClient {
  constructor(private readonly baseUrl: string = "") {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async submitReview(body: SubmitRequest): Promise<SubmitResult> {
    const response = await fetch(this.url("/reviews"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    const payload = await response.json().catch(() => ({}));
    if (response.status === 202 && typeof payload.job_id === "string") {
      return { ok: true, jobId: payload.job_id };
    }
    return {
      ok: false,
      status: response.status,
      error: typeof payload.error === "string" ? payload.error : `HTTP ${response.status}`,
    };
  }

  async getJob(jobId: string): Promise<JobSnapshot> {
    const response = await fetch(this.url(`/reviews/${jobId}`));
    if (!response.ok) {
      throw new Error(`job ${jobId}: HTTP ${response.status}`);
    }
    return (await response.json()) as JobSnapshot;
  }

  eventsUrl(jobId: string): string {
    return this.url(`/reviews/${jobId}/events`);
  }

  artifactUrl(jobId: string, name: "review.json" | "review.md"): string {
    return this.url(`/reviews/${jobId}/artifacts/${name}`);
  }

  async fetchReport(jobId: string): Promise<ReviewReport> {
    const response = await fetch(this.artifactUrl(jobId, "review.json"));
    if (!response.ok) {
      throw new Error(`review.json for ${jobId}: HTTP ${response.status}`);
    }
    return (await response.json()) as ReviewReport;
  }
}
