"""Embedding cosine-similarity evaluation of model answers against benchmark answers.

Dot products and squared norms are reduced with a fixed pairwise (binary-tree)
summation, so cosine(x, y) == cosine(y, x) bitwise and error growth stays
logarithmic in the dimension. The denominator is sqrt(nx * ny) rather than
sqrt(nx) * sqrt(ny); with IEEE correctly-rounded sqrt that makes
cosine(v, v) == 1.0 exactly for any nonzero v.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import random
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import requests

from .errors import MateriaError
from .gateway import AuthError, ProviderError


class DimensionMismatch(MateriaError):
    pass


class ZeroVector(MateriaError):
    pass


class MissingAnswer(MateriaError):
    def __init__(self, model: str, question_id: str):
        super().__init__(f"model {model!r} has no answer for question {question_id!r}")
        self.model = model
        self.question_id = question_id


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    dim: int
    provider_id: str
    source_text_hash: str

    def __post_init__(self) -> None:
        if len(self.values) != self.dim:
            raise ValueError("values length must equal dim")
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        if not np.any(self.values):
            raise ValueError("embedding vector must not be all-zero")


@dataclass(frozen=True)
class BenchmarkEntry:
    question_id: str
    question: str
    answer: str


def _tree_fold(stack: np.ndarray) -> np.ndarray:
    # Reduce axis 1 by summing adjacent pairs; an odd leftover element is
    # carried to the end of the next round. The tree shape depends only on
    # the length, never on the values.
    while stack.shape[1] > 1:
        half = stack.shape[1] // 2
        tail = stack[:, 2 * half:]
        stack = stack[:, 0 : 2 * half : 2] + stack[:, 1 : 2 * half : 2]
        if tail.shape[1]:
            stack = np.concatenate([stack, tail], axis=1)
    return stack[:, 0]


def _as_array(vector) -> np.ndarray:
    values = getattr(vector, "values", vector)
    return np.asarray(values, dtype=np.float64)


def cosine(x, y) -> float:
    """Dot product over the product of Euclidean norms, clamped to [-1, 1]
    only to absorb floating-point overshoot."""
    ax = _as_array(x)
    ay = _as_array(y)
    if ax.ndim != 1 or ay.ndim != 1:
        raise ValueError("cosine expects 1-D vectors")
    if ax.shape[0] != ay.shape[0]:
        raise DimensionMismatch(f"dimensions differ: {ax.shape[0]} vs {ay.shape[0]}")
    dot, nx, ny = _tree_fold(np.stack([ax * ay, ax * ax, ay * ay]))
    if nx == 0.0 or ny == 0.0:
        raise ZeroVector("cosine is undefined for a zero vector")
    product = nx * ny
    if math.isinf(product):
        denominator = math.sqrt(nx) * math.sqrt(ny)
    else:
        denominator = math.sqrt(product)
    value = dot / denominator
    return min(1.0, max(-1.0, value))


class EmbeddingProviderHandle:
    provider_id: str = "unconfigured"
    model_name: str = ""

    def embed_text(self, text: str) -> Sequence[float]:
        raise NotImplementedError


class MockEmbeddingProvider(EmbeddingProviderHandle):
    """Seeded hash-to-vector provider: deterministic per (seed, text)."""

    def __init__(self, seed: int = 0, dim: int = 64, provider_id: str = "mock-embed"):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.seed = seed
        self.dim = dim
        self.provider_id = provider_id
        self.model_name = f"mock-embed-{dim}"
        self._lock = threading.Lock()
        self.call_count = 0

    def embed_text(self, text: str) -> Sequence[float]:
        with self._lock:
            self.call_count += 1
        digest = hashlib.sha256(f"{self.seed}\x1f{text}".encode("utf-8")).digest()
        rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:16], "big")))
        return rng.standard_normal(self.dim)


class HttpEmbeddingProvider(EmbeddingProviderHandle):
    """Embeddings HTTP backend: JSON body {model, input}, vector at data[0].embedding."""

    def __init__(
        self,
        provider_id: str,
        endpoint_url: str,
        model_name: str,
        credential_env_var: str | None = None,
        timeout_s: float = 60.0,
        session: requests.Session | None = None,
    ):
        self.provider_id = provider_id
        self.endpoint_url = endpoint_url
        self.model_name = model_name
        self.credential_env_var = credential_env_var
        self.timeout_s = timeout_s
        self._session = session or requests.Session()

    def embed_text(self, text: str) -> Sequence[float]:
        headers = {"Content-Type": "application/json"}
        if self.credential_env_var:
            token = os.environ.get(self.credential_env_var)
            if not token:
                raise AuthError(
                    f"provider {self.provider_id}: environment variable "
                    f"{self.credential_env_var} is not set"
                )
            headers["Authorization"] = f"Bearer {token}"
        response = self._session.post(
            self.endpoint_url,
            json={"model": self.model_name, "input": [text]},
            headers=headers,
            timeout=self.timeout_s,
        )
        if response.status_code in (401, 403):
            raise AuthError(f"provider {self.provider_id}: HTTP {response.status_code}")
        if response.status_code >= 400:
            raise ProviderError(
                f"provider {self.provider_id}: HTTP {response.status_code}: {response.text[:200]}"
            )
        try:
            return response.json()["data"][0]["embedding"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(
                f"provider {self.provider_id}: malformed embedding payload ({exc})"
            ) from exc


def build_embedding_provider(entry: Mapping) -> EmbeddingProviderHandle:
    adapter = entry["adapter"]
    if adapter == "mock-embeddings":
        return MockEmbeddingProvider(
            seed=int(entry.get("seed", 0)),
            dim=int(entry.get("dim", 64)),
            provider_id=entry["provider_id"],
        )
    if adapter == "openai-embeddings":
        return HttpEmbeddingProvider(
            provider_id=entry["provider_id"],
            endpoint_url=entry["endpoint_url"],
            model_name=entry.get("model_name", ""),
            credential_env_var=entry.get("credential_env_var"),
            timeout_s=float(entry.get("timeout_s", 60.0)),
        )
    raise ValueError(f"not an embedding adapter: {adapter!r}")


class EmbeddingCache:
    """File cache keyed by (provider_id, sha256(text)); writes are atomic so
    concurrent readers never see a torn file."""

    def __init__(self, directory: str | Path = ".materia-cache"):
        self.directory = Path(directory)

    def _path(self, provider_id: str, text_hash: str) -> Path:
        return self.directory / provider_id / f"{text_hash}.json"

    def get(self, provider_id: str, text_hash: str) -> np.ndarray | None:
        path = self._path(provider_id, text_hash)
        if not path.is_file():
            return None
        obj = json.loads(path.read_text(encoding="utf-8"))
        return np.asarray(obj["values"], dtype=np.float64)

    def put(self, provider_id: str, text_hash: str, values: np.ndarray) -> None:
        path = self._path(provider_id, text_hash)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = json.dumps({"dim": len(values), "values": [float(v) for v in values]})
        tmp = path.with_suffix(f".tmp-{os.getpid()}-{random.randrange(1 << 30)}")
        tmp.write_text(payload, encoding="utf-8")
        os.replace(tmp, path)


def text_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def embed(
    text: str,
    provider: EmbeddingProviderHandle,
    cache: EmbeddingCache | None = None,
) -> EmbeddingVector:
    """Embed text, serving repeats from the cache so reruns never re-call the provider."""
    if not text:
        raise ValueError("text must be non-empty")
    digest = text_hash(text)
    if cache is not None:
        cached = cache.get(provider.provider_id, digest)
        if cached is not None:
            return EmbeddingVector(
                values=cached,
                dim=len(cached),
                provider_id=provider.provider_id,
                source_text_hash=digest,
            )
    values = np.asarray(provider.embed_text(text), dtype=np.float64)
    if cache is not None:
        cache.put(provider.provider_id, digest, values)
    return EmbeddingVector(
        values=values,
        dim=len(values),
        provider_id=provider.provider_id,
        source_text_hash=digest,
    )


@dataclass(frozen=True)
class SimilarityReport:
    questions: tuple[str, ...]
    models: tuple[str, ...]  # benchmark label first
    scores: tuple[tuple[float, ...], ...]  # [model][question]
    embed_provider: str

    def __post_init__(self) -> None:
        if not self.models or not self.questions:
            raise ValueError("report needs at least one model and one question")
        if len(self.scores) != len(self.models):
            raise ValueError("scores must have one row per model")
        for row in self.scores:
            if len(row) != len(self.questions):
                raise ValueError("every score row must have one value per question")
            for value in row:
                if not -1.0 <= value <= 1.0:
                    raise ValueError(f"score {value} outside [-1, 1]")
        if any(value != 1.0 for value in self.scores[0]):
            raise ValueError("benchmark row (first) must be identically 1.0")

    @property
    def benchmark_label(self) -> str:
        return self.models[0]


def score_models(
    benchmarks: Sequence[BenchmarkEntry],
    answers: Mapping[str, Mapping[str, str]],
    provider: EmbeddingProviderHandle,
    cache: EmbeddingCache | None = None,
    benchmark_label: str = "benchmark",
) -> SimilarityReport:
    """Cosine of every model answer against the benchmark answer, per question.

    Model order follows the answers mapping; the benchmark row comes first and
    is computed (not assumed) as the self-similarity of the benchmark text.
    """
    if not benchmarks:
        raise ValueError("no benchmark entries given")
    models = list(answers.keys())
    for model in models:
        for entry in benchmarks:
            if entry.question_id not in answers[model]:
                raise MissingAnswer(model, entry.question_id)

    benchmark_vectors = [embed(entry.answer, provider, cache) for entry in benchmarks]
    rows = [
        tuple(cosine(vector, vector) for vector in benchmark_vectors)
    ]
    for model in models:
        row = []
        for entry, bench_vector in zip(benchmarks, benchmark_vectors):
            answer_vector = embed(answers[model][entry.question_id], provider, cache)
            row.append(cosine(answer_vector, bench_vector))
        rows.append(tuple(row))
    return SimilarityReport(
        questions=tuple(entry.question_id for entry in benchmarks),
        models=tuple([benchmark_label] + models),
        scores=tuple(rows),
        embed_provider=provider.provider_id,
    )


def max_marks(report: SimilarityReport) -> list[set[int]]:
    """Per question: the set of non-benchmark row indices sharing the full-precision maximum."""
    marks: list[set[int]] = []
    for q_index in range(len(report.questions)):
        best = max(report.scores[m][q_index] for m in range(1, len(report.models)))
        marks.append(
            {
                m
                for m in range(1, len(report.models))
                if report.scores[m][q_index] == best
            }
        )
    return marks


RENDER_FORMATS = ("text-table", "csv", "json")


def render_report(report: SimilarityReport, format: str = "text-table") -> str:
    """text-table: 4-decimal fixed point, benchmark row first, per-question max
    among the other rows marked with ``*``. csv/json keep full precision."""
    if format == "json":
        return json.dumps(
            {
                "questions": list(report.questions),
                "models": list(report.models),
                "scores": [list(row) for row in report.scores],
                "embed_provider": report.embed_provider,
            },
            ensure_ascii=False,
            indent=2,
        )
    if format == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["model"] + list(report.questions))
        for model, row in zip(report.models, report.scores):
            writer.writerow([model] + [repr(value) for value in row])
        return buffer.getvalue()
    if format != "text-table":
        raise ValueError(f"format must be one of {RENDER_FORMATS}")

    marks = max_marks(report) if len(report.models) > 1 else [set() for _ in report.questions]
    name_width = max(len(m) for m in report.models)
    col_width = max([len(q) for q in report.questions] + [8])
    lines = [
        " ".join([" " * name_width] + [q.rjust(col_width) for q in report.questions])
    ]
    for m, (model, row) in enumerate(zip(report.models, report.scores)):
        cells = []
        for q_index, value in enumerate(row):
            text = f"{value:.4f}"
            if m in marks[q_index]:
                text = "*" + text
            cells.append(text.rjust(col_width))
        lines.append(" ".join([model.ljust(name_width)] + cells))
    return "\n".join(lines) + "\n"


def report_from_json(payload: str) -> SimilarityReport:
    obj = json.loads(payload)
    return SimilarityReport(
        questions=tuple(obj["questions"]),
        models=tuple(obj["models"]),
        scores=tuple(tuple(row) for row in obj["scores"]),
        embed_provider=obj["embed_provider"],
    )


def read_benchmarks_jsonl(path: str | Path) -> list[BenchmarkEntry]:
    entries = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            try:
                entries.append(
                    BenchmarkEntry(
                        question_id=obj["question_id"],
                        question=obj["question"],
                        answer=obj["answer"],
                    )
                )
            except KeyError as exc:
                raise ValueError(f"{path}:{lineno}: benchmark record missing {exc}") from exc
    return entries


def read_answers_jsonl(path: str | Path) -> dict[str, dict[str, str]]:
    """answers.jsonl: one {model, question_id, answer} per line; model order preserved."""
    answers: dict[str, dict[str, str]] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            try:
                answers.setdefault(obj["model"], {})[obj["question_id"]] = obj["answer"]
            except KeyError as exc:
                raise ValueError(f"{path}:{lineno}: answer record missing {exc}") from exc
    return answers
