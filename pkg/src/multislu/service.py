"""Session service: the trained model behind an HTTP + JSON API.

Each session owns an opening query, a recurrent mask state, and a slot
filling table; feedback rounds advance them through exactly the same rollout
functions the offline evaluator uses, so a scripted session and an offline
replay produce bit-identical tables.  Sessions live in memory, serialized per
session by a lock, with optional append-only transcript persistence that a
restarted server replays to restore state.
"""

# No `from __future__ import annotations` here: the request-body model is
# defined inside create_app, and stringified annotations would make the HTTP
# layer silently treat it as a query parameter.
import json
import threading
from pathlib import Path

import numpy as np

from .policy import SampleMode
from .slot_table import (
    FlightBackend,
    FlightBackendError,
    QueryTemplates,
    flight_search,
    load_templates,
    render_query,
)
from .trainer import SluModel, feedback_rollout, start_rollout


class ServiceError(Exception):
    def __init__(self, error_kind: str, message: str, status: int):
        super().__init__(message)
        self.error_kind = error_kind
        self.message = message
        self.status = status


def _not_found(sid: str) -> ServiceError:
    return ServiceError("not_found", f"no session {sid!r}", 404)


class _Session:
    __slots__ = ("id", "lock", "state", "transcript")

    def __init__(self, sid: str):
        self.id = sid
        self.lock = threading.Lock()
        self.state = None  # RolloutState after the opening query
        self.transcript: list[dict] = []


class SessionService:
    """Model-backed session store; safe for concurrent use across sessions."""

    def __init__(
        self,
        model: SluModel | None,
        max_rounds: int = 4,
        sample_mode: bool = False,
        persist_path: str | Path | None = None,
        checkpoint_name: str | None = None,
        backend: FlightBackend | None = None,
        templates: QueryTemplates | None = None,
        seed: int = 0,
    ):
        self.model = model
        self.max_rounds = max_rounds
        self.mode = SampleMode.SAMPLE if sample_mode else SampleMode.GREEDY
        self.checkpoint_name = checkpoint_name
        self._rng = np.random.default_rng(seed) if sample_mode else None
        self._templates = templates or load_templates()
        self._backend = backend if backend is not None else FlightBackend.from_file()
        self._sessions: dict[str, _Session] = {}
        self._store_lock = threading.Lock()
        self._counter = 0
        self._persist_path = Path(persist_path) if persist_path else None
        self._persist_lock = threading.Lock()
        if self._persist_path and self._persist_path.exists():
            self._replay(self._persist_path)

    # -- session lifecycle --------------------------------------------------

    def create_session(self) -> str:
        if self.model is None:
            raise ServiceError("not_ready", "no model checkpoint loaded", 503)
        with self._store_lock:
            self._counter += 1
            sid = f"s-{self._counter:06d}"
            self._sessions[sid] = _Session(sid)
        self._persist({"event": "create", "session": sid})
        return sid

    def _session(self, sid: str) -> _Session:
        with self._store_lock:
            sess = self._sessions.get(sid)
        if sess is None:
            raise _not_found(sid)
        return sess

    def post_query(self, sid: str, text: str) -> dict:
        sess = self._session(sid)
        tokens = self._tokens(text)
        with sess.lock:
            if sess.state is not None:
                raise ServiceError(
                    "conflict", "session already has an opening query", 409
                )
            state, _ = start_rollout(self.model, tokens)
            payload = self._round_payload(0, text, state.table)
            sess.state = state
            sess.transcript.append(payload)
        self._persist({"event": "query", "session": sid, "text": text})
        return payload

    def post_feedback(self, sid: str, text: str) -> dict:
        sess = self._session(sid)
        tokens = self._tokens(text)
        with sess.lock:
            if sess.state is None:
                raise ServiceError("conflict", "post a query before feedback", 409)
            if sess.state.round_index >= self.max_rounds:
                raise ServiceError(
                    "limit", f"round limit of {self.max_rounds} reached", 422
                )
            state, _ = feedback_rollout(self.model, sess.state, tokens, self.mode, self._rng)
            payload = self._round_payload(state.round_index, text, state.table)
            sess.state = state
            sess.transcript.append(payload)
        self._persist({"event": "feedback", "session": sid, "text": text})
        return payload

    def get_session(self, sid: str) -> dict:
        sess = self._session(sid)
        with sess.lock:
            return {
                "id": sess.id,
                "round_count": len(sess.transcript),
                "rounds": list(sess.transcript),
            }

    def health(self) -> dict:
        return {
            "status": "ok" if self.model is not None else "no_model",
            "checkpoint": self.checkpoint_name,
            "max_rounds": self.max_rounds,
            "sessions": len(self._sessions),
        }

    # -- internals ------------------------------------------------------------

    @staticmethod
    def _tokens(text: str) -> list[str]:
        tokens = text.lower().split()
        if not tokens:
            raise ServiceError("invalid", "text must contain at least one token", 422)
        return tokens

    def _round_payload(self, round_index: int, text: str, table) -> dict:
        q = render_query(table, self._templates)
        try:
            result = flight_search(q, self._backend)
        except FlightBackendError as exc:
            raise ServiceError("backend", str(exc), 503) from exc
        return {
            "round": round_index,
            "text": text,
            "table": table.as_payload(),
            "flights": [f.as_payload() for f in result.flights],
            "flights_kind": result.kind,
            "query_string": q.text,
        }

    def _persist(self, event: dict) -> None:
        if self._persist_path is None:
            return
        with self._persist_lock:
            with open(self._persist_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(event, sort_keys=True) + "\n")

    def _replay(self, path: Path) -> None:
        """Rebuild sessions by re-running every persisted event in order."""
        events = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    events.append(json.loads(line))
        saved, self._persist_path = self._persist_path, None  # no re-logging
        try:
            for ev in events:
                sid = ev["session"]
                if ev["event"] == "create":
                    with self._store_lock:
                        num = int(sid.split("-")[1])
                        self._counter = max(self._counter, num)
                        self._sessions[sid] = _Session(sid)
                elif ev["event"] == "query":
                    self.post_query(sid, ev["text"])
                elif ev["event"] == "feedback":
                    self.post_feedback(sid, ev["text"])
        finally:
            self._persist_path = saved


def create_app(service: SessionService, static_dir: str | Path | None = None):
    """FastAPI wrapper translating ServiceError into {error_kind, message} JSON."""
    from fastapi import FastAPI, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.responses import JSONResponse
    from pydantic import BaseModel

    app = FastAPI(title="multislu session service")

    class TextBody(BaseModel):
        text: str

    @app.exception_handler(ServiceError)
    async def _service_error(request: Request, exc: ServiceError):
        return JSONResponse(
            status_code=exc.status,
            content={"error_kind": exc.error_kind, "message": exc.message},
        )

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=422,
            content={"error_kind": "invalid", "message": str(exc.errors())},
        )

    @app.post("/api/sessions")
    def create_session():
        return {"id": service.create_session()}

    @app.post("/api/sessions/{sid}/query")
    def post_query(sid: str, body: TextBody):
        return service.post_query(sid, body.text)

    @app.post("/api/sessions/{sid}/feedback")
    def post_feedback(sid: str, body: TextBody):
        return service.post_feedback(sid, body.text)

    @app.get("/api/sessions/{sid}")
    def get_session(sid: str):
        return service.get_session(sid)

    @app.get("/api/health")
    def health():
        return service.health()

    if static_dir is not None and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(static_dir), html=True))
    return app


def serve_forever(service: SessionService, host: str, port: int, static_dir=None) -> None:
    import uvicorn

    uvicorn.run(create_app(service, static_dir), host=host, port=port, log_level="info")
