/** Shared test plumbing: a scripted fetch and a DOM-to-rows extractor. */

import type { TableRow } from "../src/api";

export interface ScriptedResponse {
  status: number;
  body: unknown;
}

export interface ScriptedFetch {
  fetchFn: (input: string, init?: RequestInit) => Promise<Response>;
  calls: Array<{ url: string; method: string; body: unknown }>;
}

/** Build a Response-shaped object; the JSON round trip isolates the body. */
export function jsonResponse(status: number, body: unknown): Response {
  return {
    ok: status >= 200 && status < 300,
    status,
    json: async () => JSON.parse(JSON.stringify(body)),
  } as Response;
}

/** Serve queued responses in order; record every request made. */
export function scriptedFetch(queue: ScriptedResponse[]): ScriptedFetch {
  const remaining = [...queue];
  const calls: ScriptedFetch["calls"] = [];
  const fetchFn = async (url: string, init?: RequestInit): Promise<Response> => {
    calls.push({
      url,
      method: init?.method ?? "GET",
      body: typeof init?.body === "string" ? JSON.parse(init.body) : null,
    });
    const next = remaining.shift();
    if (!next) throw new Error(`no scripted response left for ${url}`);
    return jsonResponse(next.status, next.body);
  };
  return { fetchFn, calls };
}

/** Read the rendered slot table back out of the DOM. */
export function extractTable(host: Element): TableRow[] {
  return Array.from(host.querySelectorAll<HTMLTableRowElement>("tbody tr")).map((tr) => ({
    label: tr.querySelector(".slot-label")?.textContent ?? "",
    value: tr.querySelector(".slot-value")?.textContent ?? "",
    source_round: Number(tr.querySelector(".slot-round")?.textContent),
  }));
}

export function rowByLabel(host: Element, label: string): HTMLTableRowElement {
  const tr = host.querySelector<HTMLTableRowElement>(`tr[data-label="${label}"]`);
  if (!tr) throw new Error(`no table row for label ${label}`);
  return tr;
}
