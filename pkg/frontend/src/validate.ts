// Client-side repository URL validation mirroring the server's accepted
// shapes: https://github.com/{owner}/{name} with optional .git suffix,
// trailing slash, or /pull/{n}.

export interface ParsedRepoUrl {
  ok: true;
  owner: string;
  name: string;
  pr: number | null;
}

export interface RepoUrlError {
  ok: false;
  error: string;
}

const SEGMENT = /^[A-Za-z0-9][A-Za-z0-9._-]*$/;

export function validateRepoUrl(raw: string): ParsedRepoUrl | RepoUrlError {
  const url = raw.trim();
  if (!url) {
    return { ok: false, error: "enter a repository URL" };
  }
  let parsed: URL;
  try {
    parsed = new URL(url);
  } catch {
    return { ok: false, error: "not a valid URL" };
  }
  if (parsed.protocol !== "https:" && parsed.protocol !== "http:") {
    return { ok: false, error: `unsupported scheme ${parsed.protocol.replace(":", "")}` };
  }
  if (parsed.hostname !== "github.com" && parsed.hostname !== "www.github.com") {
    return { ok: false, error: `host must be github.com, got ${parsed.hostname}` };
  }
  const segments = parsed.pathname.split("/").filter((s) => s.length > 0);
  if (segments.length < 2) {
    return { ok: false, error: "URL must include owner and repository name" };
  }
  const owner = segments[0];
  let name = segments[1];
  if (name.endsWith(".git")) {
    name = name.slice(0, -4);
  }
  let pr: number | null = null;
  const rest = segments.slice(2);
  if (rest.length === 2 && rest[0] === "pull") {
    if (!/^[0-9]+$/.test(rest[1]) || Number(rest[1]) < 1) {
      return { ok: false, error: `invalid pull request number ${rest[1]}` };
    }
    pr = Number(rest[1]);
  } else if (rest.length > 0) {
    return { ok: false, error: `unrecognized path suffix /${rest.join("/")}` };
  }
  if (!SEGMENT.test(owner)) {
    return { ok: false, error: `invalid owner ${owner}` };
  }
  if (!name || !SEGMENT.test(name)) {
    return { ok: false, error: `invalid repository name ${name}` };
  }
  return { ok: true, owner, name, pr };
}
