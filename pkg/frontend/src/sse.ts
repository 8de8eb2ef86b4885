// SSE subscription for job progress. Native EventSource re-sends the
// Last-Event-ID header on its automatic reconnects, and the fold ignores
// already-seen seqs, so replayed prefixes after a resume are harmless.

import { ProgressEvent } from "./types.js";

export interface StreamHandlers {
  onEvent: (event: ProgressEvent) => void;
  onDone: () => void;
  onError: (error: string) => void;
}

export function subscribeToEvents(url: string, handlers: StreamHandlers): EventSource {
  const source = new EventSource(url);
  source.addEventListener("progress", (message) => {
    try {
      handlers.onEvent(JSON.parse((message as MessageEvent).data) as ProgressEvent);
    } catch {
      // Malformed frame: skip; the fold stays consistent.
    }
  });
  source.addEventListener("done", () => {
    source.close();
    handlers.onDone();
  });
  source.addEventListener("error", (message) => {
    const data = (message as MessageEvent).data;
    if (typeof data === "string") {
      // Terminal run failure delivered by the server.
      source.close();
      try {
        handlers.onError(JSON.parse(data));
      } catch {
        handlers.onError(data);
      }
    }
    // Otherwise: transport hiccup; EventSource reconnects with Last-Event-ID.
  });
  return source;
}
