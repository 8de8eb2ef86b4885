// The run view is a pure fold over the job's progress events: replaying the
// same events (including after a disconnect/resume) always yields the same
// view, and events at or below the last applied seq are ignored.

import { ALL_STAGES, ProgressEvent, Stage } from "./types.js";

export type StageState = "pending" | "running" | "done" | "failed";

export interface UiJobView {
  lastSeq: number;
  stages: Record<Stage, StageState>;
  reviewCurrent: number | null;
  reviewTotal: number | null;
  lastDetail: string;
  lastError: string | null;
}

export function initialView(): UiJobView {
  const stages = {} as Record<Stage, StageState>;
  for (const stage of ALL_STAGES) {
    stages[stage] = "pending";
  }
  return {
    lastSeq: 0,
    stages,
    reviewCurrent: null,
    reviewTotal: null,
    lastDetail: "",
    lastError: null,
  };
}

export function applyEvent(view: UiJobView, event: ProgressEvent): UiJobView {
  if (event.seq <= view.lastSeq) {
    return view; // replayed or duplicate delivery
  }
  const stages = { ...view.stages };
  let { reviewCurrent, reviewTotal, lastError } = view;
  switch (event.status) {
    case "started":
      stages[event.stage] = "running";
      break;
    case "progress":
      stages[event.stage] = "running";
      if (event.stage === "review") {
        reviewCurrent = event.current;
        reviewTotal = event.total;
      }
      break;
    case "completed":
      stages[event.stage] = "done";
      break;
    case "failed":
      stages[event.stage] = "failed";
      lastError = event.detail || "stage failed";
      break;
  }
  return {
    lastSeq: event.seq,
    stages,
    reviewCurrent,
    reviewTotal,
    lastDetail: event.detail,
    lastError,
  };
}

export function foldEvents(events: ProgressEvent[], start?: UiJobView): UiJobView {
  let view = start ?? initialView();
  for (const event of events) {
    view = applyEvent(view, event);
  }
  return view;
}

export function isTerminal(view: UiJobView): boolean {
  return view.stages.artifacts === "done" || Object.values(view.stages).includes("failed");
}
