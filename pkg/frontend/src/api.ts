/** Typed client for the session service's JSON API. */

export interface TableRow {
  label: string;
  value: string;
  source_round: number;
}

export interface FlightPayload {
  airline: string;
  from: string;
  to: string;
  depart: string;
  return: string;
  type: string;
  fare: string;
}

export interface RoundPayload {
  round: number;
  text: string;
  table: TableRow[];
  flights: FlightPayload[];
  flights_kind: string;
  query_string: string;
}

export interface Transcript {
  id: string;
  round_count: number;
  rounds: RoundPayload[];
}

/**
 * Error raised for any failed request.
 *
 * `errorKind` carries the service's machine-readable kind ("not_found",
 * "conflict", "invalid", "limit", "not_ready", "backend") or a client-side
 * one: "network" for transport failures, "malformed" for responses that do
 * not match the documented shape, "http" for other non-JSON failures.
 */
export class ApiError extends Error {
  constructor(
    readonly errorKind: string,
    message: string,
    readonly status: number,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

function isTableRow(v: unknown): v is TableRow {
  if (typeof v !== "object" || v === null) return false;
  const r = v as Record<string, unknown>;
  return (
    typeof r.label === "string" &&
    typeof r.value === "string" &&
    typeof r.source_round === "number"
  );
}

export function isRoundPayload(v: unknown): v is RoundPayload {
  if (typeof v !== "object" || v === null) return false;
  const r = v as Record<string, unknown>;
  return (
    typeof r.round === "number" &&
    typeof r.text === "string" &&
    Array.isArray(r.table) &&
    r.table.every(isTableRow) &&
    Array.isArray(r.flights) &&
    typeof r.flights_kind === "string" &&
    typeof r.query_string === "string"
  );
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class SessionApi {
  private readonly fetchFn: FetchLike;

  constructor(
    private readonly baseUrl = "",
    fetchFn?: FetchLike,
  ) {
    // wrap the global so the client works where fetch must be called
    // with the correct receiver
    this.fetchFn = fetchFn ?? ((input, init) => globalThis.fetch(input, init));
  }

  async createSession(): Promise<string> {
    const body = await this.requestJson("/api/sessions", { method: "POST" });
    const id = (body as { id?: unknown } | null)?.id;
    if (typeof id !== "string") {
      return this.rejectMalformed(body);
    }
    return id;
  }

  async postQuery(id: string, text: string): Promise<RoundPayload> {
    return this.requestRound(`/api/sessions/${id}/query`, text);
  }

  async postFeedback(id: string, text: string): Promise<RoundPayload> {
    return this.requestRound(`/api/sessions/${id}/feedback`, text);
  }

  async getSession(id: string): Promise<Transcript> {
    const body = await this.requestJson(`/api/sessions/${id}`, { method: "GET" });
    const t = body as Partial<Transcript> | null;
    if (
      typeof t?.id !== "string" ||
      typeof t.round_count !== "number" ||
      !Array.isArray(t.rounds) ||
      !t.rounds.every(isRoundPayload)
    ) {
      return this.rejectMalformed(body);
    }
    return t as Transcript;
  }

  private async requestRound(path: string, text: string): Promise<RoundPayload> {
    const body = await this.requestJson(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ text }),
    });
    if (!isRoundPayload(body)) {
      return this.rejectMalformed(body);
    }
    return body;
  }

  private rejectMalformed(body: unknown): never {
    console.error("malformed service response", body);
    throw new ApiError("malformed", "service response does not match the expected shape", 0);
  }

  private async requestJson(path: string, init: RequestInit): Promise<unknown> {
    let res: Response;
    try {
      res = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError("network", String(err), 0);
    }
    let body: unknown = null;
    try {
      body = await res.json();
    } catch {
      // non-JSON body; the status check below decides what to raise
    }
    if (!res.ok) {
      const e = body as { error_kind?: unknown; message?: unknown } | null;
      if (e && typeof e.error_kind === "string" && typeof e.message === "string") {
        throw new ApiError(e.error_kind, e.message, res.status);
      }
      throw new ApiError("http", `request failed with status ${res.status}`, res.status);
    }
    return body;
  }
}
