"""Live chat engine: sessions, pipeline orchestration, HTTP/WS API.

Sessions live in memory; every turn is also appended to a per-session
transcript log so a restarted service can replay its way back to identical
states. One message is in flight per session (a per-session lock); the
Q-table, model, and indexes are shared read-only across all sessions.
"""

from __future__ import annotations

import json
import secrets
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Callable

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel
from starlette.concurrency import run_in_threadpool

from .config import AppConfig
from .dialogue import DialogueState, Speaker, read_transcript, write_transcript_line
from .encoding import ProjectionMatrix
from .pipeline import CandidateGenerator
from .poetry import load_glossary, load_lexicon, load_templates
from .selector import (
    CandidateScore,
    Hyperparams,
    LexicalRule,
    QTable,
    load_qtable,
    load_rules,
    select,
)
from .seq2seq import load_model
from .topic import EmptyTopic, FetchFailed, OfflineMiss, build_index, load_topic


class UnknownSession(Exception):
    pass


class EmptyMessage(Exception):
    pass


class NoTurnsYet(Exception):
    pass


def utc_clock() -> str:
    return datetime.now(timezone.utc).isoformat()


class FixedClock:
    """Deterministic clock: a fixed start instant plus 1s per reading.

    Lets two runs with the same config produce byte-identical transcript
    logs; never use it for real deployments.
    """

    def __init__(self, start_iso: str):
        self._start = datetime.fromisoformat(start_iso.replace("Z", "+00:00"))
        self._n = 0
        self._lock = threading.Lock()

    def __call__(self) -> str:
        with self._lock:
            ts = self._start + timedelta(seconds=self._n)
            self._n += 1
        return ts.isoformat()


@dataclass
class Session:
    id: str
    state: DialogueState
    created_at: str
    lock: threading.Lock = field(default_factory=threading.Lock)
    debug: list[CandidateScore] | None = None


class Engine:
    def __init__(
        self,
        generator: CandidateGenerator,
        table: QTable,
        rules: list[LexicalRule],
        hp: Hyperparams,
        proj: ProjectionMatrix,
        fallback: str,
        seed: int = 0,
        context_window: int = 4,
        transcript_dir: str | Path | None = None,
        clock: Callable[[], str] | None = None,
    ):
        self.generator = generator
        self.table = table
        self.rules = rules
        self.hp = hp
        self.proj = proj
        self.fallback = fallback
        self.seed = seed
        self.context_window = context_window
        self.transcript_dir = Path(transcript_dir) if transcript_dir else None
        self.clock = clock or utc_clock
        self._sessions: dict[str, Session] = {}
        self._registry_lock = threading.Lock()
        if self.transcript_dir:
            self.transcript_dir.mkdir(parents=True, exist_ok=True)

    # -- sessions ------------------------------------------------------------

    def create_session(self) -> str:
        with self._registry_lock:
            sid = secrets.token_hex(16)
            while sid in self._sessions:  # vanishing odds, cheap to handle
                sid = secrets.token_hex(16)
            self._sessions[sid] = Session(
                id=sid,
                state=DialogueState(context_window=self.context_window),
                created_at=self.clock(),
            )
        return sid

    def _session(self, session_id: str) -> Session:
        sess = self._sessions.get(session_id)
        if sess is None:
            raise UnknownSession(session_id)
        return sess

    def session_ids(self) -> list[str]:
        return list(self._sessions)

    def replay_transcripts(self) -> int:
        """Rebuild sessions from the transcript logs; returns how many."""
        if not self.transcript_dir:
            return 0
        count = 0
        for path in sorted(self.transcript_dir.glob("*.jsonl")):
            with open(path, encoding="utf-8") as fh:
                state = read_transcript(fh, context_window=self.context_window)
            with self._registry_lock:
                self._sessions[path.stem] = Session(
                    id=path.stem, state=state, created_at=self.clock()
                )
            count += 1
        return count

    # -- the pipeline ----------------------------------------------------------

    def post_message(self, session_id: str, text: str) -> tuple[str, int]:
        """USER turn in, SYSTEM turn out; returns (reply, reply turn index).

        All three subsystems run (one failing just means fewer candidates),
        rules and the selector pick the reply, both turns are persisted.
        """
        sess = self._session(session_id)
        if not text.strip():
            raise EmptyMessage("message text is empty")
        with sess.lock:
            state = sess.state.append(Speaker.USER, text)
            poetry_seed = self.seed + state.turns[-1].index
            proposals = self.generator.generate(state, poetry_seed)
            chosen, breakdown = select(
                state, proposals, self.table, self.rules, self.hp, self.proj, self.fallback
            )
            state = state.append(Speaker.SYSTEM, chosen.text)
            sess.state = state
            sess.debug = breakdown
            self._persist(sess, n_new=2)
            return chosen.text, state.turns[-1].index

    def _persist(self, sess: Session, n_new: int) -> None:
        if not self.transcript_dir:
            return
        path = self.transcript_dir / f"{sess.id}.jsonl"
        with open(path, "a", encoding="utf-8") as fh:
            for turn in sess.state.turns[-n_new:]:
                write_transcript_line(fh, turn, self.clock())

    def get_transcript(self, session_id: str) -> list[dict]:
        sess = self._session(session_id)
        return [
            {"index": t.index, "speaker": t.speaker.value, "text": t.text}
            for t in sess.state.turns
        ]

    def get_debug(self, session_id: str) -> list[dict]:
        """Last exchange's candidate breakdown; exactly one entry is chosen."""
        sess = self._session(session_id)
        if sess.debug is None:
            raise NoTurnsYet(session_id)
        return [
            {
                "source": c.proposal.source.value,
                "text": c.proposal.text,
                "certainty": c.proposal.certainty,
                "q": c.q,
                "boost": c.boost,
                "total": c.total,
                "chosen": c.chosen,
            }
            for c in sess.debug
        ]


def build_engine(cfg: AppConfig) -> Engine:
    """Assemble an Engine from a loaded config; missing optional assets
    degrade (no Q-table -> untrained, no model -> no context candidates)."""
    templates = load_templates(cfg.poetry.templates_path)
    lexicon = load_lexicon(cfg.poetry.rhymes_path)
    glossary = load_glossary(cfg.poetry.glossary_path)

    topic_index = None
    try:
        topic_index = load_topic(
            cfg.topic.title,
            cfg.topic.cache_dir,
            offline=cfg.topic.offline,
            base_url=cfg.topic.base_url,
            bundled_dir=cfg.topic.bundled_dir,
        )
    except (OfflineMiss, FetchFailed, EmptyTopic):
        pass

    model = vocab = None
    if cfg.context_model and Path(cfg.context_model).exists():
        model, vocab = load_model(cfg.context_model)

    table = QTable()
    if cfg.qtable and Path(cfg.qtable).exists():
        table = load_qtable(cfg.qtable)
    meta = table.meta
    proj = ProjectionMatrix(
        seed=int(meta.get("seed", cfg.encoding_seed)),
        bits=int(meta.get("k", cfg.encoding_bits)),
        dim=int(meta.get("D", cfg.encoding_dim)),
    )

    rules = load_rules(cfg.rules) if cfg.rules else []
    generator = CandidateGenerator(
        templates=templates,
        lexicon=lexicon,
        glossary=glossary,
        topic_index=topic_index,
        model=model,
        vocab=vocab,
    )
    clock = FixedClock(cfg.fixed_clock) if cfg.fixed_clock else None
    engine = Engine(
        generator=generator,
        table=table,
        rules=rules,
        hp=cfg.hyperparams,
        proj=proj,
        fallback=cfg.fallback,
        seed=cfg.seed,
        context_window=cfg.context_window,
        transcript_dir=cfg.transcript_dir,
        clock=clock,
    )
    engine.replay_transcripts()
    return engine


# --- HTTP / WebSocket API -----------------------------------------------------


class MessageIn(BaseModel):
    text: str = ""


def create_app(engine: Engine, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="storyweaver", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.exception_handler(UnknownSession)
    def _unknown(_, exc: UnknownSession):
        return JSONResponse(status_code=404, content={"error": f"unknown session {exc}"})

    @app.exception_handler(EmptyMessage)
    def _empty(_, exc: EmptyMessage):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(NoTurnsYet)
    def _no_turns(_, exc: NoTurnsYet):
        return JSONResponse(status_code=409, content={"error": "session has no turns yet"})

    @app.post("/api/sessions", status_code=201)
    def create_session():
        return {"session_id": engine.create_session()}

    @app.post("/api/sessions/{session_id}/messages")
    def post_message(session_id: str, message: MessageIn):
        reply, turn_index = engine.post_message(session_id, message.text)
        return {"reply": reply, "turn_index": turn_index}

    @app.get("/api/sessions/{session_id}/transcript")
    def transcript(session_id: str):
        return {"turns": engine.get_transcript(session_id)}

    @app.get("/api/sessions/{session_id}/debug")
    def debug(session_id: str):
        return {"candidates": engine.get_debug(session_id)}

    @app.get("/healthz")
    def healthz():
        return PlainTextResponse("ok")

    @app.websocket("/api/sessions/{session_id}/stream")
    async def stream(websocket: WebSocket, session_id: str):
        await websocket.accept()
        if session_id not in engine.session_ids():
            await websocket.send_json({"error": f"unknown session {session_id}"})
            await websocket.close(code=1008)
            return
        try:
            while True:
                raw = await websocket.receive_text()
                try:
                    frame = json.loads(raw)
                except json.JSONDecodeError:
                    await websocket.send_json({"error": "frame is not valid JSON"})
                    continue
                text = frame.get("text", "") if isinstance(frame, dict) else ""
                if not isinstance(text, str) or not text.strip():
                    await websocket.send_json({"error": "frame needs a non-empty 'text'"})
                    continue
                try:
                    reply, turn_index = await run_in_threadpool(
                        engine.post_message, session_id, text
                    )
                except UnknownSession:
                    await websocket.send_json({"error": f"unknown session {session_id}"})
                    await websocket.close(code=1008)
                    return
                await websocket.send_json({"reply": reply, "turn_index": turn_index})
        except WebSocketDisconnect:
            return

    if static_dir and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    return app
