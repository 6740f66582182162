"""HTTP facade for authoring sessions, backed by any completion backend.

Sessions live in memory (optionally snapshotted to disk on every mutation)
and are independent of one another; within a session, mutations are
serialized behind a lock and stamped with a monotonically increasing
revision. A mutation carrying a stale revision is rejected outright, so
state is never partially applied.

Error bodies are {"code", "message", "detail"} JSON.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .corpus import (
    Corpus,
    canonical_json,
    corpus_to_dict,
    spec_from_dict,
    spec_to_dict,
    tree_to_dict,
    validate_corpus,
)
from .linearize import GenerationTask, linearize
from .model import (
    DialogueSpec,
    DialogueTree,
    FactRef,
    QuestSpec,
    SchemaError,
    UtteranceNode,
    resolve_fact,
    validate_spec,
)
from .prompting import PromptConfig
from .writer import (
    BackendError,
    Candidate,
    CompletionParseError,
    LMBackend,
    MockBackend,
    attach_candidates,
    commit_candidate,
    generate_candidates,
)

__all__ = ["create_app", "ApiError"]


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, detail: Any = None) -> None:
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail


@dataclass
class Session:
    id: str
    spec: DialogueSpec
    config: PromptConfig
    tree: DialogueTree
    committed: list[str]
    rounds_done: int = 0
    open_round: int | None = None
    open_candidates: tuple[str, ...] = ()
    open_parsed: tuple[Candidate, ...] = ()
    round_history: list[tuple[str, ...]] = field(default_factory=list)
    revision: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)


def _candidate_payload(session: Session, node_id: str, candidate: Candidate) -> dict[str, Any]:
    facts: list[dict[str, Any]] = []
    for item in candidate.selected_facts:
        if isinstance(item, FactRef):
            facts.append(
                {
                    "source": item.source,
                    "i": item.index,
                    "text": resolve_fact(session.spec, item).text,
                }
            )
        else:
            facts.append({"raw": item})
    return {
        "id": node_id,
        "speaker": candidate.speaker,
        "text": candidate.text,
        "facts": facts,
        "warnings": list(candidate.warnings),
    }


def _session_payload(session: Session) -> dict[str, Any]:
    open_round = None
    if session.open_round is not None:
        open_round = {
            "index": session.open_round,
            "candidates": [
                _candidate_payload(session, node_id, parsed)
                for node_id, parsed in zip(session.open_candidates, session.open_parsed)
            ],
        }
    return {
        "id": session.id,
        "revision": session.revision,
        "rounds": session.rounds_done,
        "open_round": open_round,
        "committed_path": list(session.committed),
        "spec": spec_to_dict(session.spec),
        "tree": tree_to_dict(session.tree),
        "config": {
            "mode": session.config.mode,
            "token_budget": session.config.token_budget,
            "seed": session.config.seed,
        },
    }


def _export_corpus(session: Session) -> Corpus:
    quest = QuestSpec(quest_name=session.spec.quest_name)
    return Corpus(quests=(quest,), dialogues=((session.spec, session.tree),))


class CreateSessionBody(BaseModel):
    spec: dict
    start_utterance: dict
    config: dict = {}


class RoundBody(BaseModel):
    k: int = 3
    revision: int | None = None


class CommitBody(BaseModel):
    candidate_id: str
    revision: int | None = None


class NodePatchBody(BaseModel):
    text: str | None = None
    speaker: str | None = None
    facts: list[dict] | None = None
    revision: int | None = None


def create_app(
    backend: LMBackend | None = None,
    snapshot_dir: str | Path | None = None,
    cors_origins: tuple[str, ...] = ("*",),
) -> FastAPI:
    """Application factory; one backend serves every session."""
    app = FastAPI(title="questwriter authoring service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.backend = backend or MockBackend()
    app.state.sessions = {}
    app.state.snapshot_dir = Path(snapshot_dir) if snapshot_dir else None

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError) -> JSONResponse:
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "detail": exc.detail},
        )

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError) -> JSONResponse:
        return JSONResponse(
            status_code=422,
            content={"code": "invalid-request", "message": "request body failed validation",
                     "detail": exc.errors()},
        )

    def _session(session_id: str) -> Session:
        session = app.state.sessions.get(session_id)
        if session is None:
            raise ApiError(404, "unknown-session", f"no session {session_id!r}")
        return session

    def _check_revision(session: Session, revision: int | None) -> None:
        if revision is not None and revision != session.revision:
            raise ApiError(
                409,
                "stale-revision",
                f"revision {revision} is stale (current {session.revision})",
            )

    def _snapshot(session: Session) -> None:
        directory = app.state.snapshot_dir
        if directory is None:
            return
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"{session.id}.json"
        path.write_text(canonical_json(_session_payload(session)), encoding="utf-8", newline="\n")

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody) -> dict[str, Any]:
        try:
            spec = spec_from_dict(body.spec)
        except (SchemaError, KeyError, TypeError, ValueError) as exc:
            raise ApiError(422, "invalid-spec", f"spec failed to parse: {exc}")
        report = validate_spec(spec)
        if not report.ok:
            raise ApiError(
                422, "invalid-spec", "spec failed validation",
                [f.message for f in report.errors()],
            )
        start_raw = body.start_utterance
        speaker = start_raw.get("speaker", "")
        if speaker not in spec.participant_names:
            raise ApiError(422, "unknown-speaker", f"start speaker {speaker!r} not a participant")
        try:
            start = UtteranceNode(
                id=start_raw.get("id", "n0"),
                speaker=speaker,
                text=start_raw.get("text", ""),
            )
            config = PromptConfig(
                mode=body.config.get("mode", "full"),
                token_budget=int(body.config.get("token_budget", 4000)),
                allow_few_shot=bool(body.config.get("allow_few_shot", False)),
                seed=int(body.config.get("seed", 0)),
            )
        except (SchemaError, ValueError) as exc:
            raise ApiError(422, "invalid-session", str(exc))
        session = Session(
            id=uuid.uuid4().hex,
            spec=spec,
            config=config,
            tree=DialogueTree(nodes={start.id: start}, edges=(), start_id=start.id),
            committed=[start.id],
        )
        app.state.sessions[session.id] = session
        _snapshot(session)
        return {"session_id": session.id, "revision": session.revision}

    @app.post("/sessions/{session_id}/rounds")
    def open_round(session_id: str, body: RoundBody) -> dict[str, Any]:
        session = _session(session_id)
        with session.lock:
            _check_revision(session, body.revision)
            if session.open_round is not None:
                raise ApiError(409, "round-pending", "previous round has not been committed")
            if body.k < 1:
                raise ApiError(422, "invalid-round", "k must be at least 1")
            most_recent = session.committed[-1]
            task = GenerationTask(
                spec=session.spec,
                subtree=session.tree,
                most_recent=most_recent,
                history=linearize(session.tree, most_recent),
            )
            try:
                _, candidates = generate_candidates(
                    task, session.config, body.k, app.state.backend
                )
            except (BackendError, CompletionParseError) as exc:
                raise ApiError(502, "backend-failure", str(exc))
            round_index = session.rounds_done + 1
            session.tree, ids = attach_candidates(
                session.tree, most_recent, round_index, candidates
            )
            session.open_round = round_index
            session.open_candidates = ids
            session.open_parsed = tuple(candidates)
            session.revision += 1
            _snapshot(session)
            return {
                "revision": session.revision,
                "round": round_index,
                "candidates": [
                    _candidate_payload(session, node_id, parsed)
                    for node_id, parsed in zip(ids, candidates)
                ],
            }

    @app.post("/sessions/{session_id}/commit")
    def commit(session_id: str, body: CommitBody) -> dict[str, Any]:
        session = _session(session_id)
        with session.lock:
            _check_revision(session, body.revision)
            if session.open_round is None:
                raise ApiError(409, "no-open-round", "no round is awaiting a commit")
            if body.candidate_id not in session.open_candidates:
                raise ApiError(
                    409, "not-a-candidate",
                    f"{body.candidate_id!r} is not among this round's candidates",
                )
            session.tree = commit_candidate(session.tree, body.candidate_id)
            session.committed.append(body.candidate_id)
            session.round_history.append(session.open_candidates)
            session.rounds_done += 1
            session.open_round = None
            session.open_candidates = ()
            session.open_parsed = ()
            session.revision += 1
            _snapshot(session)
            return {
                "revision": session.revision,
                "rounds": session.rounds_done,
                "committed_path": list(session.committed),
                "node_count": len(session.tree.nodes),
            }

    @app.patch("/sessions/{session_id}/nodes/{node_id}")
    def patch_node(session_id: str, node_id: str, body: NodePatchBody) -> dict[str, Any]:
        session = _session(session_id)
        with session.lock:
            _check_revision(session, body.revision)
            node = session.tree.nodes.get(node_id)
            if node is None:
                raise ApiError(404, "unknown-node", f"no node {node_id!r}")
            speaker = body.speaker if body.speaker is not None else node.speaker
            text = body.text if body.text is not None else node.text
            if speaker not in session.spec.participant_names:
                raise ApiError(422, "unknown-speaker", f"{speaker!r} is not a participant")
            if not text.strip():
                raise ApiError(422, "empty-text", "node text must be non-empty")
            facts = node.support_facts
            if body.facts is not None:
                try:
                    refs = tuple(FactRef(f["source"], f["i"]) for f in body.facts)
                    for ref in refs:
                        resolve_fact(session.spec, ref)
                except (KeyError, TypeError) as exc:
                    raise ApiError(422, "bad-fact", f"unresolvable fact reference: {exc}")
                facts = refs
            nodes = dict(session.tree.nodes)
            nodes[node_id] = UtteranceNode(
                id=node_id, speaker=speaker, text=text,
                support_facts=facts, origin=node.origin,
            )
            session.tree = DialogueTree(
                nodes=nodes, edges=session.tree.edges, start_id=session.tree.start_id
            )
            session.revision += 1
            _snapshot(session)
            return {"revision": session.revision, "node": _node_payload(session, node_id)}

    def _node_payload(session: Session, node_id: str) -> dict[str, Any]:
        node = session.tree.nodes[node_id]
        return {
            "id": node.id,
            "speaker": node.speaker,
            "text": node.text,
            "facts": [{"source": f.source, "i": f.index} for f in node.support_facts],
            "origin": node.origin,
        }

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str) -> dict[str, Any]:
        return _session_payload(_session(session_id))

    @app.get("/sessions/{session_id}/export")
    def export_session(session_id: str) -> JSONResponse:
        session = _session(session_id)
        corpus = _export_corpus(session)
        report = validate_corpus(corpus)
        if not report.ok:
            raise ApiError(
                500, "invalid-export", "exported document failed validation",
                [f.message for f in report.errors()],
            )
        return JSONResponse(content=corpus_to_dict(corpus))

    return app
