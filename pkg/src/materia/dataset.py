"""Assemble reviewed QA pairs into the instruction dataset and trainer config.

The on-disk record is one compact JSON object per line with key order
messages -> role -> content and a single space after ``:`` and ``,``, e.g.

    {"messages": [{"role": "user", "content": ""}, {"role": "assistant", "content": ""}]}
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import MateriaError
from .extraction import QAPair

ROLES = ("user", "assistant")

DEDUPE_POLICIES = ("exact", "normalized")


class NotReviewedError(MateriaError):
    """Pair is still pending or was rejected; it cannot enter the dataset."""


class SchemaError(MateriaError):
    """A dataset line does not match the record schema."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DatasetInvalid(MateriaError):
    """Dataset file failed schema validation."""

    def __init__(self, line: int, message: str):
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class Message:
    role: str
    content: str


@dataclass(frozen=True)
class InstructionRecord:
    messages: tuple[Message, Message]

    def __post_init__(self) -> None:
        if len(self.messages) != 2:
            raise ValueError("record must contain exactly 2 messages")
        if self.messages[0].role != "user" or self.messages[1].role != "assistant":
            raise ValueError("messages must be (user, assistant) in that order")

    @classmethod
    def from_qa(cls, question: str, answer: str) -> "InstructionRecord":
        return cls(messages=(Message("user", question), Message("assistant", answer)))

    @property
    def question(self) -> str:
        return self.messages[0].content

    @property
    def answer(self) -> str:
        return self.messages[1].content


def to_instruction_record(qa: QAPair) -> InstructionRecord:
    """Map an accepted/edited pair to a record; edited text wins over the original."""
    if qa.review_state not in ("accepted", "edited"):
        raise NotReviewedError(
            f"pair {qa.qa_id} has review_state={qa.review_state!r}; "
            "only accepted or edited pairs become records"
        )
    return InstructionRecord.from_qa(qa.final_question, qa.final_answer)


def serialize_record(record: InstructionRecord) -> str:
    obj = {
        "messages": [
            {"role": m.role, "content": m.content} for m in record.messages
        ]
    }
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


def parse_record_line(line: str, lineno: int) -> InstructionRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SchemaError(lineno, f"not valid JSON: {exc}") from exc
    if not isinstance(obj, dict) or set(obj.keys()) != {"messages"}:
        raise SchemaError(lineno, "record must be an object with the single key 'messages'")
    messages = obj["messages"]
    if not isinstance(messages, list) or len(messages) != 2:
        raise SchemaError(lineno, "messages must be a list of exactly 2 entries")
    parsed = []
    for i, (message, role) in enumerate(zip(messages, ROLES)):
        if not isinstance(message, dict) or set(message.keys()) != {"role", "content"}:
            raise SchemaError(lineno, f"message {i} must have exactly the keys role, content")
        if message["role"] != role:
            raise SchemaError(lineno, f"message {i} role must be {role!r}, got {message['role']!r}")
        if not isinstance(message["content"], str):
            raise SchemaError(lineno, f"message {i} content must be a string")
        parsed.append(Message(role=message["role"], content=message["content"]))
    return InstructionRecord(messages=(parsed[0], parsed[1]))


def write_jsonl(records: Sequence[InstructionRecord], path: str | Path) -> int:
    """Write records as UTF-8 JSONL (no BOM, \\n terminators); returns the count."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(serialize_record(record) + "\n")
    return len(records)


def read_jsonl(path: str | Path) -> list[InstructionRecord]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            records.append(parse_record_line(line, lineno))
    return records


@dataclass
class DedupeReport:
    policy: str
    total: int
    kept: int
    groups: list[dict] = field(default_factory=list)

    @property
    def dropped(self) -> int:
        return self.total - self.kept


_WHITESPACE_RE = re.compile(r"\s+")


def _normalize_question(question: str) -> str:
    folded = _WHITESPACE_RE.sub(" ", question.strip()).lower()
    return folded.rstrip(" ?.!…")


def dedupe(
    records: Sequence[InstructionRecord], policy: str = "exact"
) -> tuple[list[InstructionRecord], DedupeReport]:
    """Collapse duplicates to the first occurrence, preserving order.

    exact: records with byte-identical (question, answer) collapse.
    normalized: records collapse on the question alone after lowercasing,
    whitespace folding, and terminal-punctuation stripping.
    """
    if policy not in DEDUPE_POLICIES:
        raise ValueError(f"policy must be one of {DEDUPE_POLICIES}")
    first_index: dict = {}
    groups: dict[int, list[int]] = {}
    kept: list[InstructionRecord] = []
    for index, record in enumerate(records):
        if policy == "exact":
            key = (record.question, record.answer)
        else:
            key = _normalize_question(record.question)
        if key in first_index:
            groups.setdefault(first_index[key], []).append(index)
            continue
        first_index[key] = index
        kept.append(record)
    report = DedupeReport(
        policy=policy,
        total=len(records),
        kept=len(kept),
        groups=[
            {"kept_index": kept_idx, "duplicate_indices": dup_indices}
            for kept_idx, dup_indices in sorted(groups.items())
        ],
    )
    return kept, report


@dataclass(frozen=True)
class DomainTaxonomy:
    labels: tuple[str, ...]
    keyword_rules: Mapping[str, tuple[str, ...]]

    def __post_init__(self) -> None:
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("taxonomy labels must be unique")
        if "unknown" not in self.labels:
            raise ValueError("taxonomy must include the sentinel label 'unknown'")
        if "unknown" in self.keyword_rules:
            raise ValueError("'unknown' must not carry keyword rules")
        unknown_rules = set(self.keyword_rules) - set(self.labels)
        if unknown_rules:
            raise ValueError(f"keyword rules for labels not in taxonomy: {sorted(unknown_rules)}")


def taxonomy_from_dict(obj: Mapping) -> DomainTaxonomy:
    return DomainTaxonomy(
        labels=tuple(obj["labels"]),
        keyword_rules={
            label: tuple(phrases) for label, phrases in obj["keyword_rules"].items()
        },
    )


def load_taxonomy(path: str | Path) -> DomainTaxonomy:
    return taxonomy_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def builtin_taxonomy() -> DomainTaxonomy:
    data = resources.files("materia").joinpath("data/taxonomy.json")
    return taxonomy_from_dict(json.loads(data.read_text(encoding="utf-8")))


def _phrase_pattern(phrase: str) -> re.Pattern:
    return re.compile(r"\b" + re.escape(phrase.lower()) + r"\b")


def tag_text(question: str, answer: str, taxonomy: DomainTaxonomy) -> str:
    """Label with the most keyword hits over question+answer; ties break by label order."""
    text = f"{question}\n{answer}".lower()
    best_label = "unknown"
    best_hits = 0
    for label in taxonomy.labels:
        phrases = taxonomy.keyword_rules.get(label)
        if not phrases:
            continue
        hits = sum(len(_phrase_pattern(p).findall(text)) for p in phrases)
        if hits > best_hits:
            best_hits = hits
            best_label = label
    return best_label


def tag_domain(qa: QAPair, taxonomy: DomainTaxonomy) -> str:
    return tag_text(qa.final_question, qa.final_answer, taxonomy)


@dataclass(frozen=True)
class DomainDistribution:
    counts: Mapping[str, int]
    total: int

    def __post_init__(self) -> None:
        if sum(self.counts.values()) != self.total:
            raise ValueError("distribution counts must sum to total")


def compute_distribution(
    pairs: Iterable[QAPair], taxonomy: DomainTaxonomy | None = None
) -> DomainDistribution:
    """Count pairs per domain label; with a taxonomy, every label appears (zeros included)."""
    counts: dict[str, int] = {}
    if taxonomy is not None:
        counts = {label: 0 for label in taxonomy.labels}
    total = 0
    for pair in pairs:
        counts[pair.domain] = counts.get(pair.domain, 0) + 1
        total += 1
    return DomainDistribution(counts=counts, total=total)


def distribution_to_dict(dist: DomainDistribution) -> dict:
    return {"counts": dict(dist.counts), "total": dist.total}


TRAIN_METHOD = "low-rank-adaptation"


@dataclass(frozen=True)
class TrainRunConfig:
    base_model: str
    learning_rate: float
    batch_size: int
    epochs: int
    dataset_path: str
    output_dir: str
    method: str = TRAIN_METHOD

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")


TRAIN_DEFAULTS = {
    "base_model": "glm4-9b",
    "learning_rate": 1e-5,
    "batch_size": 4,
    "epochs": 3,
}


def emit_train_config(
    dataset_path: str | Path,
    overrides: Mapping | None = None,
    output_path: str | Path | None = None,
) -> TrainRunConfig:
    """Validate the dataset, then write a flat key-value trainer config JSON."""
    dataset = Path(dataset_path)
    try:
        read_jsonl(dataset)
    except SchemaError as exc:
        raise DatasetInvalid(exc.line, f"{dataset}: {exc}") from exc
    except FileNotFoundError:
        raise

    values = dict(TRAIN_DEFAULTS)
    values["dataset_path"] = str(dataset)
    values["output_dir"] = str(dataset.parent / "train-output")
    if overrides:
        allowed = {"base_model", "learning_rate", "batch_size", "epochs", "dataset_path", "output_dir"}
        unknown = set(overrides) - allowed
        if unknown:
            raise ValueError(f"unknown train config fields: {sorted(unknown)}")
        values.update({k: v for k, v in overrides.items() if v is not None})

    config = TrainRunConfig(
        base_model=values["base_model"],
        learning_rate=float(values["learning_rate"]),
        batch_size=int(values["batch_size"]),
        epochs=int(values["epochs"]),
        dataset_path=str(values["dataset_path"]),
        output_dir=str(values["output_dir"]),
    )
    out = Path(output_path) if output_path else dataset.parent / "train_config.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    flat = {
        "base_model": config.base_model,
        "method": config.method,
        "learning_rate": config.learning_rate,
        "batch_size": config.batch_size,
        "epochs": config.epochs,
        "dataset_path": config.dataset_path,
        "output_dir": config.output_dir,
    }
    out.write_text(json.dumps(flat, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    return config
