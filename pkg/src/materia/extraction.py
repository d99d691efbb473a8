"""Drive (prompt, segment) pairs through a provider and parse the QA output grammar.

The grammar is numbered ``Q<i>:`` / ``A<i>:`` marker pairs at line starts,
indices consecutive from 1, each question immediately followed by its
matching-index answer. Lines without a marker attach to the most recent
marker's body, so multi-line questions and answers survive.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import TextSegment
from .errors import MateriaError
from .gateway import ChatRequest, Gateway, GatewayError
from .prompts import PromptTemplate, render_extraction_prompt

REVIEW_STATES = ("pending", "accepted", "edited", "rejected")

# Violation kinds shared by FormatError and FormatComplianceReport.
NO_MARKERS = "no_markers"
MISSING_Q_MARKER = "missing_q_marker"
MISSING_A_MARKER = "missing_a_marker"
INDEX_GAP = "index_gap"
EMPTY_FIELD = "empty_field"
COUNT_MISMATCH = "count_mismatch"
TRAILING_GARBAGE = "trailing_garbage"

MARKER_RE = re.compile(r"^(Q|A)(\d+):")

REPAIR_SUFFIX = (
    "\n\nYour previous output violated the required format. "
    "Re-emit the question/answer pairs now, strictly following the output "
    "format given above, with no other text."
)


class FormatError(MateriaError):
    """Raw model output does not follow the QA output grammar."""

    def __init__(self, kind: str, position: int, message: str):
        super().__init__(f"line {position}: {message}")
        self.kind = kind
        self.position = position


class ExtractionFailed(MateriaError):
    """Output stayed malformed after the repair retry."""


class JobFailed(MateriaError):
    """Every segment in an extraction job failed."""


@dataclass
class QAPair:
    qa_id: str
    question: str
    answer: str
    doc_id: str
    segment_index: int
    template_id: str
    provider_id: str
    model_name: str
    domain: str = "unknown"
    review_state: str = "pending"
    edited_question: str | None = None
    edited_answer: str | None = None

    def __post_init__(self) -> None:
        if not self.question.strip() or not self.answer.strip():
            raise ValueError("question and answer must be non-empty after trimming")
        if self.review_state not in REVIEW_STATES:
            raise ValueError(f"review_state must be one of {REVIEW_STATES}")
        if self.review_state == "edited" and not (self.edited_question or self.edited_answer):
            raise ValueError("edited pairs must carry at least one edited field")

    @property
    def final_question(self) -> str:
        if self.review_state == "edited" and self.edited_question:
            return self.edited_question
        return self.question

    @property
    def final_answer(self) -> str:
        if self.review_state == "edited" and self.edited_answer:
            return self.edited_answer
        return self.answer


def make_qa_id(doc_id: str, segment_index: int, template_id: str, question: str, answer: str) -> str:
    key = "\x1f".join((doc_id, str(segment_index), template_id, question, answer))
    return hashlib.sha256(key.encode("utf-8")).hexdigest()[:16]


@dataclass
class ExtractionTriple:
    prompt: str
    source_text: str
    doc_id: str
    segment_index: int
    template_id: str
    provider_id: str
    model_name: str
    qa_pairs: list[QAPair]
    repair_retries: int = 0


@dataclass
class FormatComplianceReport:
    total_outputs: int = 0
    compliant: int = 0
    violations: list[dict] = field(default_factory=list)

    def record_violation(self, doc_id: str, segment_index: int, kind: str) -> None:
        self.violations.append(
            {"doc_id": doc_id, "segment_index": segment_index, "kind": kind}
        )


@dataclass
class ExtractionReport:
    requested: int
    skipped_checkpointed: int
    succeeded: int
    failed: int
    repaired: int
    compliance: FormatComplianceReport
    error_tallies: dict[str, int]
    checkpoint_path: str


def serialize_qa_pairs(pairs: list[tuple[str, str]]) -> str:
    """Inverse of parse_qa_output for well-formed pair lists."""
    lines = []
    for i, (question, answer) in enumerate(pairs, 1):
        lines.append(f"Q{i}: {question}")
        lines.append(f"A{i}: {answer}")
    return "\n".join(lines) + "\n"


def parse_qa_output(raw: str, expected_count: int | None = None) -> list[tuple[str, str]]:
    """Parse the numbered Q/A grammar into (question, answer) tuples.

    Raises FormatError with a violation kind and a 1-based line position on
    the first deviation found.
    """
    normalized = raw.replace("\r\n", "\n").replace("\r", "\n")
    lines = normalized.split("\n")

    # entry: [marker, index, body_chunks, line_number]
    entries: list[list] = []
    for lineno, line in enumerate(lines, 1):
        match = MARKER_RE.match(line)
        if match:
            entries.append([match.group(1), int(match.group(2)), [line[match.end():]], lineno])
        elif entries:
            entries[-1][2].append(line)
        elif line.strip():
            raise FormatError(
                TRAILING_GARBAGE, lineno, f"unattached text before the first marker: {line.strip()[:60]!r}"
            )
    if not entries:
        raise FormatError(NO_MARKERS, 1, "no Q/A markers found in output")

    pairs: list[tuple[str, str]] = []
    position = 0
    expected_index = 1
    while position < len(entries):
        q_marker, q_index, q_chunks, q_line = entries[position]
        if q_marker != "Q":
            raise FormatError(
                MISSING_Q_MARKER, q_line, f"expected Q{expected_index}: but found A{q_index}:"
            )
        if q_index != expected_index:
            raise FormatError(
                INDEX_GAP, q_line, f"expected Q{expected_index}: but found Q{q_index}:"
            )
        if position + 1 >= len(entries):
            raise FormatError(
                MISSING_A_MARKER, q_line, f"Q{q_index}: has no matching A{q_index}:"
            )
        a_marker, a_index, a_chunks, a_line = entries[position + 1]
        if a_marker != "A":
            raise FormatError(
                MISSING_A_MARKER, a_line, f"Q{q_index}: is followed by Q{a_index}:, not A{q_index}:"
            )
        if a_index != q_index:
            raise FormatError(
                INDEX_GAP, a_line, f"A{a_index}: does not match Q{q_index}:"
            )
        question = "\n".join(q_chunks).strip()
        answer = "\n".join(a_chunks).strip()
        if not question:
            raise FormatError(EMPTY_FIELD, q_line, f"Q{q_index}: is empty")
        if not answer:
            raise FormatError(EMPTY_FIELD, a_line, f"A{a_index}: is empty")
        pairs.append((question, answer))
        position += 2
        expected_index += 1

    if expected_count is not None and len(pairs) != expected_count:
        raise FormatError(
            COUNT_MISMATCH,
            entries[-1][3],
            f"expected {expected_count} pairs, parsed {len(pairs)}",
        )
    return pairs


def _pairs_to_qa(
    parsed: list[tuple[str, str]],
    segment: TextSegment,
    template_id: str,
    provider_id: str,
    model_name: str,
) -> list[QAPair]:
    return [
        QAPair(
            qa_id=make_qa_id(segment.doc_id, segment.segment_index, template_id, q, a),
            question=q,
            answer=a,
            doc_id=segment.doc_id,
            segment_index=segment.segment_index,
            template_id=template_id,
            provider_id=provider_id,
            model_name=model_name,
        )
        for q, a in parsed
    ]


def extract_qa(
    segment: TextSegment,
    template: PromptTemplate,
    gateway: Gateway,
    expected_count: int | None = None,
    system: str | None = None,
) -> ExtractionTriple:
    """Render, call the provider, parse; retry once with a repair suffix on format failure."""
    prompt = render_extraction_prompt(template, segment)
    result = gateway.complete(ChatRequest(user=prompt, system=system))
    repair_retries = 0
    try:
        parsed = parse_qa_output(result.text, expected_count)
    except FormatError:
        repair_retries = 1
        result = gateway.complete(ChatRequest(user=prompt + REPAIR_SUFFIX, system=system))
        try:
            parsed = parse_qa_output(result.text, expected_count)
        except FormatError as exc:
            raise ExtractionFailed(
                f"segment {segment.doc_id}#{segment.segment_index}: "
                f"output still malformed after repair retry ({exc})"
            ) from exc
    return ExtractionTriple(
        prompt=prompt,
        source_text=segment.text,
        doc_id=segment.doc_id,
        segment_index=segment.segment_index,
        template_id=template.template_id,
        provider_id=result.provider_id,
        model_name=result.model_name,
        qa_pairs=_pairs_to_qa(
            parsed, segment, template.template_id, result.provider_id, result.model_name
        ),
        repair_retries=repair_retries,
    )


def triple_to_checkpoint_obj(triple: ExtractionTriple) -> dict:
    return {
        "prompt": triple.prompt,
        "source_ref": {"doc_id": triple.doc_id, "segment_index": triple.segment_index},
        "qa": [{"question": p.question, "answer": p.answer} for p in triple.qa_pairs],
        "template_id": triple.template_id,
        "provider_id": triple.provider_id,
        "model_name": triple.model_name,
        "source_text": triple.source_text,
        "repair_retries": triple.repair_retries,
    }


def triple_from_checkpoint_obj(obj: dict) -> ExtractionTriple:
    doc_id = obj["source_ref"]["doc_id"]
    segment_index = int(obj["source_ref"]["segment_index"])
    template_id = obj["template_id"]
    provider_id = obj["provider_id"]
    model_name = obj.get("model_name", provider_id)
    pairs = [
        QAPair(
            qa_id=make_qa_id(doc_id, segment_index, template_id, qa["question"], qa["answer"]),
            question=qa["question"],
            answer=qa["answer"],
            doc_id=doc_id,
            segment_index=segment_index,
            template_id=template_id,
            provider_id=provider_id,
            model_name=model_name,
        )
        for qa in obj["qa"]
    ]
    return ExtractionTriple(
        prompt=obj["prompt"],
        source_text=obj.get("source_text", ""),
        doc_id=doc_id,
        segment_index=segment_index,
        template_id=template_id,
        provider_id=provider_id,
        model_name=model_name,
        qa_pairs=pairs,
        repair_retries=int(obj.get("repair_retries", 0)),
    )


def read_checkpoint(path: str | Path) -> list[ExtractionTriple]:
    checkpoint = Path(path)
    if not checkpoint.exists():
        return []
    triples = []
    with checkpoint.open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                triples.append(triple_from_checkpoint_obj(json.loads(line)))
    return triples


def run_extraction_job(
    segments: list[TextSegment],
    template: PromptTemplate,
    gateway: Gateway,
    checkpoint_path: str | Path,
    expected_count: int | None = None,
) -> ExtractionReport:
    """Extract all segments, appending each successful triple to the checkpoint
    as soon as it arrives. Rerunning skips segments already checkpointed
    (keyed by doc_id + segment_index + template_id), so a killed job resumes
    without duplicate provider calls.
    """
    checkpoint = Path(checkpoint_path)
    checkpoint.parent.mkdir(parents=True, exist_ok=True)
    done_keys = {
        (t.doc_id, t.segment_index, t.template_id) for t in read_checkpoint(checkpoint)
    }
    pending = [
        s for s in segments
        if (s.doc_id, s.segment_index, template.template_id) not in done_keys
    ]

    compliance = FormatComplianceReport()
    error_tallies: dict[str, int] = {}
    succeeded = 0
    failed = 0
    repaired = 0

    def tally(kind: str) -> None:
        error_tallies[kind] = error_tallies.get(kind, 0) + 1

    with checkpoint.open("a", encoding="utf-8", newline="\n") as sink:

        def commit(triple: ExtractionTriple) -> None:
            sink.write(json.dumps(triple_to_checkpoint_obj(triple), ensure_ascii=False) + "\n")
            sink.flush()

        prompts = [render_extraction_prompt(template, s) for s in pending]
        requests_ = [ChatRequest(user=prompt) for prompt in prompts]

        # First wave: one request per pending segment.
        needs_repair: list[int] = []
        first_kind: dict[int, str] = {}
        for index, outcome in gateway.iter_complete(requests_):
            segment_ = pending[index]
            if isinstance(outcome, GatewayError):
                failed += 1
                tally(type(outcome).__name__)
                continue
            compliance.total_outputs += 1
            try:
                parsed = parse_qa_output(outcome.text, expected_count)
            except FormatError as exc:
                needs_repair.append(index)
                first_kind[index] = exc.kind
                tally(f"format:{exc.kind}")
                continue
            compliance.compliant += 1
            succeeded += 1
            commit(
                ExtractionTriple(
                    prompt=prompts[index],
                    source_text=segment_.text,
                    doc_id=segment_.doc_id,
                    segment_index=segment_.segment_index,
                    template_id=template.template_id,
                    provider_id=outcome.provider_id,
                    model_name=outcome.model_name,
                    qa_pairs=_pairs_to_qa(
                        parsed, segment_, template.template_id,
                        outcome.provider_id, outcome.model_name,
                    ),
                )
            )

        # Repair wave: one bounded retry per format violation.
        if needs_repair:
            repair_requests = [
                ChatRequest(user=prompts[i] + REPAIR_SUFFIX) for i in needs_repair
            ]
            for wave_index, outcome in gateway.iter_complete(repair_requests):
                index = needs_repair[wave_index]
                segment_ = pending[index]
                if isinstance(outcome, GatewayError):
                    failed += 1
                    tally(type(outcome).__name__)
                    compliance.record_violation(
                        segment_.doc_id, segment_.segment_index, first_kind[index]
                    )
                    continue
                try:
                    parsed = parse_qa_output(outcome.text, expected_count)
                except FormatError as exc:
                    failed += 1
                    tally(f"format:{exc.kind}")
                    compliance.record_violation(segment_.doc_id, segment_.segment_index, exc.kind)
                    continue
                compliance.compliant += 1
                succeeded += 1
                repaired += 1
                commit(
                    ExtractionTriple(
                        prompt=prompts[index],
                        source_text=segment_.text,
                        doc_id=segment_.doc_id,
                        segment_index=segment_.segment_index,
                        template_id=template.template_id,
                        provider_id=outcome.provider_id,
                        model_name=outcome.model_name,
                        qa_pairs=_pairs_to_qa(
                            parsed, segment_, template.template_id,
                            outcome.provider_id, outcome.model_name,
                        ),
                        repair_retries=1,
                    ),
                )

    if pending and succeeded == 0:
        raise JobFailed(
            f"all {len(pending)} pending segments failed (tallies: {error_tallies})"
        )
    return ExtractionReport(
        requested=len(segments),
        skipped_checkpointed=len(segments) - len(pending),
        succeeded=succeeded,
        failed=failed,
        repaired=repaired,
        compliance=compliance,
        error_tallies=error_tallies,
        checkpoint_path=str(checkpoint),
    )
