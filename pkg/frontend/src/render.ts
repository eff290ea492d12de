/** DOM builders for the transcript, slot table, and flight list. */

import type { FlightPayload, RoundPayload, TableRow } from "./api.js";

/**
 * Render the slot table for one round.
 *
 * Rows appear in the order the service sent them and every cell string is
 * inserted verbatim. When `prev` is given, rows whose label was absent from
 * it get the class "slot-added" and rows whose value differs get
 * "slot-changed", so a round's effect on the table is visible at a glance.
 */
export function renderTable(rows: TableRow[], prev: TableRow[] | null): HTMLElement {
  if (rows.length === 0) {
    const p = document.createElement("p");
    p.className = "placeholder";
    p.textContent = "no slots yet";
    return p;
  }
  const table = document.createElement("table");
  table.className = "slot-table";
  const head = table.createTHead().insertRow();
  for (const title of ["slot", "value", "round"]) {
    const th = document.createElement("th");
    th.textContent = title;
    head.append(th);
  }
  const body = table.createTBody();
  const before = new Map((prev ?? []).map((r) => [r.label, r.value]));
  for (const row of rows) {
    const tr = body.insertRow();
    tr.dataset.label = row.label;
    if (prev !== null && !before.has(row.label)) {
      tr.classList.add("slot-added");
    } else if (before.has(row.label) && before.get(row.label) !== row.value) {
      tr.classList.add("slot-changed");
    }
    const cells: Array<[string, string]> = [
      ["slot-label", row.label],
      ["slot-value", row.value],
      ["slot-round", String(row.source_round)],
    ];
    for (const [cls, text] of cells) {
      const td = tr.insertCell();
      td.className = cls;
      td.textContent = text;
    }
  }
  return table;
}

export function renderFlights(flights: FlightPayload[], kind: string): HTMLElement {
  const box = document.createElement("div");
  box.className = "flights";
  const heading = document.createElement("h2");
  box.append(heading);
  if (kind !== "ok") {
    heading.textContent = "flights";
    const note = document.createElement("p");
    note.className = "flights-note";
    note.textContent = "need both an origin and a destination before searching";
    box.append(note);
    return box;
  }
  heading.textContent = `flights (${flights.length})`;
  if (flights.length === 0) {
    const note = document.createElement("p");
    note.className = "flights-note";
    note.textContent = "no matching flights";
    box.append(note);
    return box;
  }
  const list = document.createElement("ul");
  list.className = "flight-list";
  for (const f of flights) {
    const li = document.createElement("li");
    li.textContent = `${f.airline}: ${f.from} to ${f.to}, out ${f.depart}, back ${f.return}, ${f.type}, fare ${f.fare}`;
    list.append(li);
  }
  box.append(list);
  return box;
}

/** One transcript entry: the user's words and the query the service built. */
export function renderRound(payload: RoundPayload): HTMLElement {
  const el = document.createElement("div");
  el.className = "round";
  el.dataset.round = String(payload.round);
  const user = document.createElement("p");
  user.className = "user-text";
  user.textContent = payload.text;
  const reply = document.createElement("p");
  reply.className = "query-string";
  reply.textContent = payload.query_string;
  el.append(user, reply);
  return el;
}
