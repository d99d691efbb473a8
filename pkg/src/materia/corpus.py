"""Load source documents and partition them into overlapping text segments."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from .errors import MateriaError

BOUNDARY_RULES = ("hard_cut", "prefer_sentence_end", "prefer_paragraph_end")

CORPUS_EXTENSIONS = (".txt", ".md")

_SENTENCE_ENDERS = ".!?"


class EncodingError(MateriaError):
    """File exists but is not valid UTF-8 text."""


class EmptyDocumentError(MateriaError):
    """Document body is blank after whitespace trimming."""


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    body: str
    domain_hint: str | None
    source_path: str


@dataclass(frozen=True)
class TextSegment:
    doc_id: str
    segment_index: int
    text: str
    char_start: int
    char_end: int


@dataclass(frozen=True)
class SegmentationPolicy:
    max_chars: int = 3000
    overlap_chars: int = 200
    boundary_rule: str = "prefer_paragraph_end"

    def __post_init__(self) -> None:
        if self.max_chars <= 0:
            raise ValueError("max_chars must be positive")
        if self.overlap_chars < 0 or self.overlap_chars >= self.max_chars:
            raise ValueError("overlap_chars must satisfy 0 <= overlap_chars < max_chars")
        if self.boundary_rule not in BOUNDARY_RULES:
            raise ValueError(f"boundary_rule must be one of {BOUNDARY_RULES}")


def _content_doc_id(file_name: str, body: str) -> str:
    body_digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    return hashlib.sha256(f"{file_name}\n{body_digest}".encode("utf-8")).hexdigest()[:16]


def load_document(source_path: str | Path, domain_hint: str | None = None) -> Document:
    """Read a UTF-8 text/markdown file into a Document with a stable doc_id.

    Line endings are normalized to ``\\n``. A sidecar ``<stem>.meta.json``
    next to the file may supply ``title`` and ``domain_hint``; an explicit
    ``domain_hint`` argument wins over the sidecar.
    """
    path = Path(source_path)
    raw = path.read_bytes()
    try:
        body = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise EncodingError(f"{path}: not valid UTF-8 ({exc})") from exc
    body = body.replace("\r\n", "\n").replace("\r", "\n")
    if not body.strip():
        raise EmptyDocumentError(f"{path}: document body is empty after trimming")

    title = path.stem
    meta_hint: str | None = None
    meta_path = path.with_name(path.stem + ".meta.json")
    if meta_path.is_file():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        title = meta.get("title", title)
        meta_hint = meta.get("domain_hint")

    return Document(
        doc_id=_content_doc_id(path.name, body),
        title=title,
        body=body,
        domain_hint=domain_hint if domain_hint is not None else meta_hint,
        source_path=str(path),
    )


def iter_corpus(corpus_dir: str | Path) -> Iterator[Document]:
    """Yield documents for every .txt/.md file under corpus_dir, in sorted path order."""
    root = Path(corpus_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {root}")
    paths = sorted(
        (p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in CORPUS_EXTENSIONS),
        key=lambda p: p.relative_to(root).as_posix(),
    )
    for path in paths:
        yield load_document(path)


def _paragraph_cut(body: str, lo: int, hi: int) -> int | None:
    # Cut right after a blank line: position i such that body[i-2:i] == "\n\n".
    for i in range(hi, lo - 1, -1):
        if i >= 2 and body[i - 1] == "\n" and body[i - 2] == "\n":
            return i
    return None


def _sentence_cut(body: str, lo: int, hi: int) -> int | None:
    # Cut right after sentence-ending punctuation followed by whitespace.
    for i in range(hi, lo - 1, -1):
        if i >= 1 and body[i - 1] in _SENTENCE_ENDERS and (i == len(body) or body[i].isspace()):
            return i
    return None


def segment(document: Document, policy: SegmentationPolicy) -> list[TextSegment]:
    """Split a document body into overlapping segments.

    Consecutive segments overlap by exactly ``policy.overlap_chars`` codepoints
    and their spans cover the whole body. With a soft boundary rule, each cut
    point moves backward to the nearest matching boundary inside a lookback
    window of ``min(200, max_chars / 4)``; if no boundary exists there (or the
    move would stall forward progress), the hard cut stands.
    """
    body = document.body
    n = len(body)
    lookback = min(200, policy.max_chars // 4)
    segments: list[TextSegment] = []
    start = 0
    index = 0
    while True:
        tentative = start + policy.max_chars
        if tentative >= n:
            end = n
        else:
            end = tentative
            if policy.boundary_rule != "hard_cut":
                # The cut must leave the next start strictly beyond the current
                # one, so never accept a boundary at or before start + overlap.
                lo = max(tentative - lookback, start + policy.overlap_chars + 1)
                if lo <= tentative:
                    finder = (
                        _paragraph_cut
                        if policy.boundary_rule == "prefer_paragraph_end"
                        else _sentence_cut
                    )
                    cut = finder(body, lo, tentative)
                    if cut is not None:
                        end = cut
        segments.append(
            TextSegment(
                doc_id=document.doc_id,
                segment_index=index,
                text=body[start:end],
                char_start=start,
                char_end=end,
            )
        )
        if end >= n:
            return segments
        start = end - policy.overlap_chars
        index += 1


SEGMENT_FIELDS = ("doc_id", "segment_index", "text", "char_start", "char_end")


def write_segments_jsonl(segments: list[TextSegment], path: str | Path) -> int:
    """Persist segments as JSONL, one object per line with exactly the segment fields."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="\n") as fh:
        for seg in segments:
            obj = {
                "doc_id": seg.doc_id,
                "segment_index": seg.segment_index,
                "text": seg.text,
                "char_start": seg.char_start,
                "char_end": seg.char_end,
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
    return len(segments)


def read_segments_jsonl(path: str | Path) -> list[TextSegment]:
    segments = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            missing = [k for k in SEGMENT_FIELDS if k not in obj]
            if missing:
                raise ValueError(f"{path}:{lineno}: segment record missing fields {missing}")
            segments.append(
                TextSegment(
                    doc_id=obj["doc_id"],
                    segment_index=int(obj["segment_index"]),
                    text=obj["text"],
                    char_start=int(obj["char_start"]),
                    char_end=int(obj["char_end"]),
                )
            )
    return segments
