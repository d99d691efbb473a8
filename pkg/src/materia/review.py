"""Expert-review lifecycle and blind benchmark-composition sessions.

Backed by a single-file sqlite store (WAL mode). All mutations append to a
decision log, so replaying the log onto an empty store reproduces the pair
states exactly; that property is what makes review durable and auditable.
"""

from __future__ import annotations

import json
import random
import sqlite3
import string
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping

from .errors import MateriaError
from .extraction import QAPair

DECISIONS = ("accept", "edit", "reject")

_DECISION_STATE = {"accept": "accepted", "edit": "edited", "reject": "rejected"}


class StorageError(MateriaError):
    """Underlying store failure."""


class UnknownQaId(MateriaError):
    pass


class UnknownSession(MateriaError):
    pass


class InvalidEdit(MateriaError):
    """Edit decision without any edited text."""


class InvalidState(MateriaError):
    """Operation not allowed for the record's current state."""


class TooFewAnswers(MateriaError):
    """Blind sessions need at least two model answers."""


class SessionNotOpen(MateriaError):
    pass


class SessionNotFinalized(MateriaError):
    pass


class EmptyAnswer(MateriaError):
    pass


@dataclass(frozen=True)
class ReviewDecision:
    qa_id: str
    decision: str
    reviewer_id: str
    edited_question: str | None = None
    edited_answer: str | None = None
    decided_at: str | None = None

    def __post_init__(self) -> None:
        if self.decision not in DECISIONS:
            raise ValueError(f"decision must be one of {DECISIONS}")
        if self.decision == "edit" and not (self.edited_question or self.edited_answer):
            raise InvalidEdit("edit decision requires edited_question and/or edited_answer")


@dataclass(frozen=True)
class SessionEntry:
    anon_label: str
    answer_text: str
    hidden_model_id: str


@dataclass(frozen=True)
class BlindSession:
    session_id: str
    question: str
    entries: tuple[SessionEntry, ...]
    status: str
    shuffle_seed: int
    composed_benchmark: str | None = None
    finalized_at: str | None = None


@dataclass(frozen=True)
class BenchmarkAnswer:
    question: str
    answer: str
    session_id: str
    finalized_at: str


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def _anon_label(position: int) -> str:
    letters = string.ascii_uppercase
    label = ""
    position += 1
    while position:
        position, rem = divmod(position - 1, 26)
        label = letters[rem] + label
    return f"Answer {label}"


_SCHEMA = """
CREATE TABLE IF NOT EXISTS qa_pairs (
    rowid_order INTEGER PRIMARY KEY AUTOINCREMENT,
    qa_id TEXT UNIQUE NOT NULL,
    question TEXT NOT NULL,
    answer TEXT NOT NULL,
    doc_id TEXT NOT NULL,
    segment_index INTEGER NOT NULL,
    template_id TEXT NOT NULL,
    provider_id TEXT NOT NULL,
    model_name TEXT NOT NULL,
    domain TEXT NOT NULL DEFAULT 'unknown',
    review_state TEXT NOT NULL DEFAULT 'pending',
    edited_question TEXT,
    edited_answer TEXT,
    context TEXT
);
CREATE TABLE IF NOT EXISTS decisions (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    qa_id TEXT NOT NULL,
    decision TEXT NOT NULL,
    edited_question TEXT,
    edited_answer TEXT,
    reviewer_id TEXT NOT NULL,
    decided_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS sessions (
    session_id TEXT PRIMARY KEY,
    question TEXT NOT NULL,
    status TEXT NOT NULL DEFAULT 'open',
    composed_benchmark TEXT,
    shuffle_seed INTEGER NOT NULL,
    finalized_at TEXT,
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS session_entries (
    session_id TEXT NOT NULL,
    anon_label TEXT NOT NULL,
    answer_text TEXT NOT NULL,
    hidden_model_id TEXT NOT NULL,
    PRIMARY KEY (session_id, anon_label)
);
"""


class ReviewStore:
    """Single-file store; every public method is serialized by one lock."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()
        try:
            self._db = sqlite3.connect(str(self.path), check_same_thread=False)
            self._db.execute("PRAGMA journal_mode=WAL")
            self._db.executescript(_SCHEMA)
            self._db.commit()
        except sqlite3.Error as exc:
            raise StorageError(f"cannot open store at {self.path}: {exc}") from exc

    def close(self) -> None:
        with self._lock:
            self._db.close()

    # -- review queue ------------------------------------------------------

    def enqueue(self, pairs: Iterable[QAPair], contexts: Mapping[str, str] | None = None) -> int:
        """Persist pending pairs; re-enqueueing a known qa_id is a no-op."""
        contexts = contexts or {}
        added = 0
        with self._lock:
            for pair in pairs:
                if pair.review_state != "pending":
                    raise InvalidState(
                        f"pair {pair.qa_id} has review_state={pair.review_state!r}; "
                        "only pending pairs can be enqueued"
                    )
                cursor = self._db.execute(
                    """INSERT OR IGNORE INTO qa_pairs
                       (qa_id, question, answer, doc_id, segment_index, template_id,
                        provider_id, model_name, domain, review_state, context)
                       VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, 'pending', ?)""",
                    (
                        pair.qa_id,
                        pair.question,
                        pair.answer,
                        pair.doc_id,
                        pair.segment_index,
                        pair.template_id,
                        pair.provider_id,
                        pair.model_name,
                        pair.domain,
                        contexts.get(pair.qa_id),
                    ),
                )
                added += cursor.rowcount
            self._db.commit()
        return added

    def _row_to_pair(self, row: sqlite3.Row) -> QAPair:
        return QAPair(
            qa_id=row["qa_id"],
            question=row["question"],
            answer=row["answer"],
            doc_id=row["doc_id"],
            segment_index=row["segment_index"],
            template_id=row["template_id"],
            provider_id=row["provider_id"],
            model_name=row["model_name"],
            domain=row["domain"],
            review_state=row["review_state"],
            edited_question=row["edited_question"],
            edited_answer=row["edited_answer"],
        )

    def get_pair(self, qa_id: str) -> QAPair:
        with self._lock:
            self._db.row_factory = sqlite3.Row
            row = self._db.execute(
                "SELECT * FROM qa_pairs WHERE qa_id = ?", (qa_id,)
            ).fetchone()
        if row is None:
            raise UnknownQaId(f"no pair with qa_id {qa_id!r}")
        return self._row_to_pair(row)

    def get_context(self, qa_id: str) -> str | None:
        with self._lock:
            row = self._db.execute(
                "SELECT context FROM qa_pairs WHERE qa_id = ?", (qa_id,)
            ).fetchone()
        if row is None:
            raise UnknownQaId(f"no pair with qa_id {qa_id!r}")
        return row[0]

    def list_pairs(
        self, state: str | None = None, limit: int = 50, offset: int = 0
    ) -> list[QAPair]:
        query = "SELECT * FROM qa_pairs"
        params: list = []
        if state is not None:
            query += " WHERE review_state = ?"
            params.append(state)
        query += " ORDER BY rowid_order LIMIT ? OFFSET ?"
        params += [limit, offset]
        with self._lock:
            self._db.row_factory = sqlite3.Row
            rows = self._db.execute(query, params).fetchall()
        return [self._row_to_pair(row) for row in rows]

    def count_pairs(self, state: str | None = None) -> int:
        query = "SELECT COUNT(*) FROM qa_pairs"
        params: list = []
        if state is not None:
            query += " WHERE review_state = ?"
            params.append(state)
        with self._lock:
            return self._db.execute(query, params).fetchone()[0]

    def decide(self, decision: ReviewDecision) -> QAPair:
        """Apply one decision; the latest decision wins, history is append-only."""
        with self._lock:
            exists = self._db.execute(
                "SELECT 1 FROM qa_pairs WHERE qa_id = ?", (decision.qa_id,)
            ).fetchone()
            if exists is None:
                raise UnknownQaId(f"no pair with qa_id {decision.qa_id!r}")
            decided_at = decision.decided_at or _utc_now()
            self._db.execute(
                """INSERT INTO decisions
                   (qa_id, decision, edited_question, edited_answer, reviewer_id, decided_at)
                   VALUES (?, ?, ?, ?, ?, ?)""",
                (
                    decision.qa_id,
                    decision.decision,
                    decision.edited_question,
                    decision.edited_answer,
                    decision.reviewer_id,
                    decided_at,
                ),
            )
            new_state = _DECISION_STATE[decision.decision]
            if decision.decision == "edit":
                self._db.execute(
                    """UPDATE qa_pairs SET review_state = ?, edited_question = ?,
                       edited_answer = ? WHERE qa_id = ?""",
                    (new_state, decision.edited_question, decision.edited_answer, decision.qa_id),
                )
            else:
                self._db.execute(
                    """UPDATE qa_pairs SET review_state = ?, edited_question = NULL,
                       edited_answer = NULL WHERE qa_id = ?""",
                    (new_state, decision.qa_id),
                )
            self._db.commit()
        return self.get_pair(decision.qa_id)

    def decision_history(self, qa_id: str) -> list[ReviewDecision]:
        with self._lock:
            self._db.row_factory = sqlite3.Row
            rows = self._db.execute(
                "SELECT * FROM decisions WHERE qa_id = ? ORDER BY seq", (qa_id,)
            ).fetchall()
        return [
            ReviewDecision(
                qa_id=row["qa_id"],
                decision=row["decision"],
                reviewer_id=row["reviewer_id"],
                edited_question=row["edited_question"],
                edited_answer=row["edited_answer"],
                decided_at=row["decided_at"],
            )
            for row in rows
        ]

    def decision_log(self) -> list[ReviewDecision]:
        with self._lock:
            self._db.row_factory = sqlite3.Row
            rows = self._db.execute("SELECT * FROM decisions ORDER BY seq").fetchall()
        return [
            ReviewDecision(
                qa_id=row["qa_id"],
                decision=row["decision"],
                reviewer_id=row["reviewer_id"],
                edited_question=row["edited_question"],
                edited_answer=row["edited_answer"],
                decided_at=row["decided_at"],
            )
            for row in rows
        ]

    def state_tallies(self) -> dict[str, int]:
        with self._lock:
            rows = self._db.execute(
                "SELECT review_state, COUNT(*) FROM qa_pairs GROUP BY review_state"
            ).fetchall()
        tallies = {"pending": 0, "accepted": 0, "edited": 0, "rejected": 0}
        tallies.update({state: count for state, count in rows})
        return tallies

    def domain_tallies(self) -> dict[str, int]:
        with self._lock:
            rows = self._db.execute(
                "SELECT domain, COUNT(*) FROM qa_pairs GROUP BY domain ORDER BY domain"
            ).fetchall()
        return {domain: count for domain, count in rows}

    # -- blind sessions ----------------------------------------------------

    def create_blind_session(
        self, question: str, model_answers: Mapping[str, str], seed: int
    ) -> BlindSession:
        """Shuffle the answers by seed and assign anonymous labels in shuffled order."""
        if len(model_answers) < 2:
            raise TooFewAnswers("a blind session needs at least 2 model answers")
        if not question.strip():
            raise ValueError("session question must be non-empty")
        for model_id, answer in model_answers.items():
            if not answer.strip():
                raise ValueError(f"answer for model {model_id!r} is empty")
        items = sorted(model_answers.items())
        rng = random.Random(seed)
        rng.shuffle(items)
        entries = tuple(
            SessionEntry(anon_label=_anon_label(i), answer_text=answer, hidden_model_id=model)
            for i, (model, answer) in enumerate(items)
        )
        session = BlindSession(
            session_id=uuid.uuid4().hex[:12],
            question=question,
            entries=entries,
            status="open",
            shuffle_seed=seed,
        )
        with self._lock:
            self._db.execute(
                """INSERT INTO sessions (session_id, question, status, shuffle_seed, created_at)
                   VALUES (?, ?, 'open', ?, ?)""",
                (session.session_id, question, seed, _utc_now()),
            )
            self._db.executemany(
                """INSERT INTO session_entries (session_id, anon_label, answer_text, hidden_model_id)
                   VALUES (?, ?, ?, ?)""",
                [
                    (session.session_id, e.anon_label, e.answer_text, e.hidden_model_id)
                    for e in entries
                ],
            )
            self._db.commit()
        return session

    def get_session(self, session_id: str) -> BlindSession:
        with self._lock:
            self._db.row_factory = sqlite3.Row
            row = self._db.execute(
                "SELECT * FROM sessions WHERE session_id = ?", (session_id,)
            ).fetchone()
            if row is None:
                raise UnknownSession(f"no session with id {session_id!r}")
            entry_rows = self._db.execute(
                "SELECT * FROM session_entries WHERE session_id = ? ORDER BY anon_label",
                (session_id,),
            ).fetchall()
        entries = tuple(
            SessionEntry(
                anon_label=r["anon_label"],
                answer_text=r["answer_text"],
                hidden_model_id=r["hidden_model_id"],
            )
            for r in entry_rows
        )
        return BlindSession(
            session_id=row["session_id"],
            question=row["question"],
            entries=entries,
            status=row["status"],
            shuffle_seed=row["shuffle_seed"],
            composed_benchmark=row["composed_benchmark"],
            finalized_at=row["finalized_at"],
        )

    def list_sessions(self, status: str | None = None) -> list[BlindSession]:
        query = "SELECT session_id FROM sessions"
        params: list = []
        if status is not None:
            query += " WHERE status = ?"
            params.append(status)
        query += " ORDER BY created_at, session_id"
        with self._lock:
            ids = [row[0] for row in self._db.execute(query, params).fetchall()]
        return [self.get_session(session_id) for session_id in ids]

    def finalize_benchmark(self, session_id: str, composed_answer: str) -> BenchmarkAnswer:
        if not composed_answer.strip():
            raise EmptyAnswer("composed benchmark answer must be non-empty")
        with self._lock:
            row = self._db.execute(
                "SELECT status, question FROM sessions WHERE session_id = ?", (session_id,)
            ).fetchone()
            if row is None:
                raise UnknownSession(f"no session with id {session_id!r}")
            status, question = row
            if status != "open":
                raise SessionNotOpen(f"session {session_id} is already {status}")
            finalized_at = _utc_now()
            self._db.execute(
                """UPDATE sessions SET status = 'finalized', composed_benchmark = ?,
                   finalized_at = ? WHERE session_id = ?""",
                (composed_answer, finalized_at, session_id),
            )
            self._db.commit()
        return BenchmarkAnswer(
            question=question,
            answer=composed_answer,
            session_id=session_id,
            finalized_at=finalized_at,
        )

    def unmask(self, session_id: str) -> dict[str, str]:
        """Label -> model mapping; only available once the session is finalized."""
        session = self.get_session(session_id)
        if session.status != "finalized":
            raise SessionNotFinalized(
                f"session {session_id} is still {session.status}; finalize it first"
            )
        return {e.anon_label: e.hidden_model_id for e in session.entries}

    def benchmarks(self) -> list[BenchmarkAnswer]:
        with self._lock:
            self._db.row_factory = sqlite3.Row
            rows = self._db.execute(
                "SELECT * FROM sessions WHERE status = 'finalized' ORDER BY finalized_at, session_id"
            ).fetchall()
        return [
            BenchmarkAnswer(
                question=row["question"],
                answer=row["composed_benchmark"],
                session_id=row["session_id"],
                finalized_at=row["finalized_at"],
            )
            for row in rows
        ]

    # -- export / replay ---------------------------------------------------

    def export_pairs_jsonl(self, path: str | Path | None = None) -> bytes:
        """Canonical JSONL of all pairs in enqueue order; optionally written to path."""
        lines = []
        with self._lock:
            self._db.row_factory = sqlite3.Row
            rows = self._db.execute("SELECT * FROM qa_pairs ORDER BY rowid_order").fetchall()
        for row in rows:
            obj = {
                "qa_id": row["qa_id"],
                "question": row["question"],
                "answer": row["answer"],
                "doc_id": row["doc_id"],
                "segment_index": row["segment_index"],
                "template_id": row["template_id"],
                "provider_id": row["provider_id"],
                "model_name": row["model_name"],
                "domain": row["domain"],
                "review_state": row["review_state"],
                "edited_question": row["edited_question"],
                "edited_answer": row["edited_answer"],
            }
            lines.append(json.dumps(obj, ensure_ascii=False))
        blob = ("\n".join(lines) + "\n" if lines else "").encode("utf-8")
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_bytes(blob)
        return blob

    def replay_decisions(self, decisions: Iterable[ReviewDecision]) -> int:
        count = 0
        for decision in decisions:
            self.decide(decision)
            count += 1
        return count


def blinded_session_view(session: BlindSession) -> dict:
    """External representation of a session; never includes model identifiers."""
    view = {
        "session_id": session.session_id,
        "question": session.question,
        "status": session.status,
        "entries": [
            {"anon_label": e.anon_label, "answer_text": e.answer_text}
            for e in session.entries
        ],
    }
    if session.status == "finalized":
        view["composed_benchmark"] = session.composed_benchmark
        view["finalized_at"] = session.finalized_at
    return view
