#!/usr/bin/env python3
"""Record live service responses into a fixture file for the web client tests.

Scripts the packaged figure1 scenario against a real in-process service (query
plus four feedback rounds: three additions and one overwrite), then captures
each error payload the client must handle.  The web client's tests replay
these byte-for-byte, so regenerate after any service contract change:

    python3 scripts/record_ui_fixtures.py [out.json]
"""

import json
import sys
from pathlib import Path

from fastapi.testclient import TestClient

from multislu.demo import build_demo_model, load_scenario
from multislu.service import SessionService, create_app

DEFAULT_OUT = Path(__file__).resolve().parent.parent / "frontend" / "tests" / "fixtures" / "session.json"


def record() -> dict:
    scenario = load_scenario("figure1")
    model = build_demo_model(scenario, seed=7)
    query = " ".join(scenario.query.tokens)
    feedback = [" ".join(r.text.tokens) for r in scenario.rounds]

    client = TestClient(create_app(SessionService(model)))
    sid = client.post("/api/sessions").json()["id"]
    rounds = [client.post(f"/api/sessions/{sid}/query", json={"text": query}).json()]
    for fb in feedback:
        r = client.post(f"/api/sessions/{sid}/feedback", json={"text": fb})
        r.raise_for_status()
        rounds.append(r.json())
    transcript = client.get(f"/api/sessions/{sid}").json()
    health = client.get("/api/health").json()

    errors = {}
    # round cap: a two-round service rejects the third feedback
    capped = TestClient(create_app(SessionService(model, max_rounds=2)))
    csid = capped.post("/api/sessions").json()["id"]
    capped.post(f"/api/sessions/{csid}/query", json={"text": query})
    for fb in feedback[:2]:
        capped.post(f"/api/sessions/{csid}/feedback", json={"text": fb})
    r = capped.post(f"/api/sessions/{csid}/feedback", json={"text": feedback[2]})
    errors["limit"] = {"status": r.status_code, "body": r.json()}

    r = client.post(f"/api/sessions/{sid}/query", json={"text": query})
    errors["conflict"] = {"status": r.status_code, "body": r.json()}
    r = client.post(f"/api/sessions/{sid}/feedback", json={"text": "   "})
    errors["invalid"] = {"status": r.status_code, "body": r.json()}
    r = client.get("/api/sessions/s-999999")
    errors["not_found"] = {"status": r.status_code, "body": r.json()}

    return {
        "recorded_with": "scripts/record_ui_fixtures.py",
        "scenario": "figure1",
        "texts": {"query": query, "feedback": feedback},
        "create": {"id": sid},
        "rounds": rounds,
        "transcript": transcript,
        "health": health,
        "errors": errors,
    }


def main() -> int:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else DEFAULT_OUT
    out.parent.mkdir(parents=True, exist_ok=True)
    fixture = record()
    out.write_text(json.dumps(fixture, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out} ({len(fixture['rounds'])} rounds, {len(fixture['errors'])} error cases)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
