"""HTTP API over the review store, consumed by the curation UI."""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .errors import MateriaError
from .extraction import QAPair
from .review import (
    EmptyAnswer,
    InvalidEdit,
    InvalidState,
    ReviewDecision,
    ReviewStore,
    SessionNotFinalized,
    SessionNotOpen,
    TooFewAnswers,
    UnknownQaId,
    UnknownSession,
    blinded_session_view,
)

_NOT_FOUND = (UnknownQaId, UnknownSession)
_CONFLICT = (InvalidState, SessionNotOpen, SessionNotFinalized)
_BAD_REQUEST = (InvalidEdit, TooFewAnswers, EmptyAnswer, ValueError)


class DecideBody(BaseModel):
    qa_id: str
    decision: str
    edited_question: str | None = None
    edited_answer: str | None = None
    reviewer_id: str = "expert"


class SessionBody(BaseModel):
    question: str
    model_answers: dict[str, str]
    seed: int = 0


class FinalizeBody(BaseModel):
    composed_answer: str


def _pair_view(pair: QAPair, context: str | None = None) -> dict:
    view = {
        "qa_id": pair.qa_id,
        "question": pair.question,
        "answer": pair.answer,
        "doc_id": pair.doc_id,
        "segment_index": pair.segment_index,
        "template_id": pair.template_id,
        "provider_id": pair.provider_id,
        "model_name": pair.model_name,
        "domain": pair.domain,
        "review_state": pair.review_state,
        "edited_question": pair.edited_question,
        "edited_answer": pair.edited_answer,
    }
    if context is not None:
        view["context"] = context
    return view


def create_app(store: ReviewStore, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="materia review service", docs_url=None, redoc_url=None)

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={"code": "validation_error", "message": str(exc.errors()[:3])},
        )

    def _domain_error_response(exc: Exception) -> JSONResponse:
        if isinstance(exc, _NOT_FOUND):
            status = 404
        elif isinstance(exc, _CONFLICT):
            status = 409
        elif isinstance(exc, _BAD_REQUEST):
            status = 400
        else:
            status = 500
        return JSONResponse(
            status_code=status,
            content={"code": type(exc).__name__, "message": str(exc)},
        )

    @app.exception_handler(MateriaError)
    async def domain_error_handler(request: Request, exc: MateriaError):
        return _domain_error_response(exc)

    @app.exception_handler(ValueError)
    async def value_error_handler(request: Request, exc: ValueError):
        return _domain_error_response(exc)

    @app.get("/api/review/queue")
    def review_queue(state: str = "pending", limit: int = 50, offset: int = 0):
        pairs = store.list_pairs(state=state, limit=limit, offset=offset)
        items = [_pair_view(p, store.get_context(p.qa_id)) for p in pairs]
        return {"items": items, "total": store.count_pairs(state=state)}

    @app.post("/api/review/decide")
    def review_decide(body: DecideBody):
        pair = store.decide(
            ReviewDecision(
                qa_id=body.qa_id,
                decision=body.decision,
                edited_question=body.edited_question,
                edited_answer=body.edited_answer,
                reviewer_id=body.reviewer_id,
            )
        )
        return _pair_view(pair)

    @app.get("/api/stats")
    def stats():
        domains = store.domain_tallies()
        return {
            "review_states": store.state_tallies(),
            "domains": {"counts": domains, "total": sum(domains.values())},
        }

    @app.post("/api/sessions", status_code=201)
    def create_session(body: SessionBody):
        session = store.create_blind_session(body.question, body.model_answers, body.seed)
        return blinded_session_view(session)

    @app.get("/api/sessions")
    def list_sessions(status: str | None = None):
        return {
            "sessions": [blinded_session_view(s) for s in store.list_sessions(status=status)]
        }

    @app.get("/api/sessions/{session_id}")
    def get_session(session_id: str):
        return blinded_session_view(store.get_session(session_id))

    @app.post("/api/sessions/{session_id}/finalize")
    def finalize_session(session_id: str, body: FinalizeBody):
        benchmark = store.finalize_benchmark(session_id, body.composed_answer)
        return {
            "question": benchmark.question,
            "answer": benchmark.answer,
            "session_id": benchmark.session_id,
            "finalized_at": benchmark.finalized_at,
        }

    @app.get("/api/sessions/{session_id}/unmask")
    def unmask_session(session_id: str):
        return {"session_id": session_id, "mapping": store.unmask(session_id)}

    @app.get("/api/benchmarks")
    def benchmarks():
        return {
            "benchmarks": [
                {
                    "question_id": b.session_id,
                    "question": b.question,
                    "answer": b.answer,
                    "finalized_at": b.finalized_at,
                }
                for b in store.benchmarks()
            ]
        }

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
