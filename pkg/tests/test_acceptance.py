"""Acceptance suite: one test per exit criterion, at its stated tolerance.

Run with ``pytest tests/test_acceptance.py``; a per-criterion PASS/FAIL
summary prints at the end of the session.
"""

from __future__ import annotations

import json
import random
import re
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from materia.cli import main
from materia.corpus import Document, SegmentationPolicy, segment
from materia.dataset import InstructionRecord, read_jsonl, serialize_record, write_jsonl
from materia.evaluate import (
    BenchmarkEntry,
    EmbeddingCache,
    MockEmbeddingProvider,
    cosine,
    max_marks,
    render_report,
    report_from_json,
    score_models,
)
from materia.extraction import (
    COUNT_MISMATCH,
    EMPTY_FIELD,
    INDEX_GAP,
    MISSING_A_MARKER,
    MISSING_Q_MARKER,
    NO_MARKERS,
    TRAILING_GARBAGE,
    FormatError,
    parse_qa_output,
    serialize_qa_pairs,
)
from materia.extraction import QAPair
from materia.gateway import ChatRequest, Gateway, GatewayPolicy
from materia.review import ReviewDecision, ReviewStore
from materia.server import create_app

DEMO_DIR = Path(__file__).parent.parent / "demo"
FIXTURE = Path(__file__).parent / "fixtures" / "reference_similarity_report.json"


def _extended_precision_cosine(x: np.ndarray, y: np.ndarray) -> float:
    """Brute-force oracle: plain summation carried out in 80-bit floats."""
    xl = np.asarray(x, dtype=np.longdouble)
    yl = np.asarray(y, dtype=np.longdouble)
    return float(np.sum(xl * yl) / np.sqrt(np.sum(xl * xl) * np.sum(yl * yl)))


@pytest.mark.acceptance("cosine oracle equivalence (10k pairs, dims 2-4096, 1e-12)")
def test_cosine_oracle_equivalence():
    rng = np.random.default_rng(20240917)
    dims = np.clip(
        np.round(2.0 ** rng.uniform(1.0, 12.0, size=10_000)).astype(int), 2, 4096
    )
    # pin the extremes of the dimension range explicitly
    dims[:50] = 2
    dims[50:100] = 4096
    dims[100:125] = 3
    dims[125:150] = 4095

    started = time.monotonic()
    worst = 0.0
    for dim in dims:
        x = rng.standard_normal(dim)
        y = rng.standard_normal(dim)
        value = cosine(x, y)
        worst = max(worst, abs(value - _extended_precision_cosine(x, y)))
        assert value == cosine(y, x), "symmetry must hold exactly"
        scale = float(rng.uniform(1e-3, 1e3))
        assert abs(cosine(scale * x, y) - value) < 1e-12, "scale invariance within 1e-12"
    elapsed = time.monotonic() - started
    assert worst < 1e-12, f"worst oracle deviation {worst:.3e}"
    assert elapsed < 10.0, f"sweep took {elapsed:.2f}s, budget is 10s"


@pytest.mark.acceptance("benchmark self-similarity renders 1.0000")
def test_benchmark_self_similarity():
    started = time.monotonic()
    provider = MockEmbeddingProvider(seed=77, dim=96)
    benchmarks = [
        BenchmarkEntry("q1", "Which cathode?", "The olivine cathode with carbon coating."),
        BenchmarkEntry("q2", "Which ceramic?", "Yttria-stabilized zirconia, 3 mol percent."),
    ]
    answers = {"self": {b.question_id: b.answer for b in benchmarks}}
    report = score_models(benchmarks, answers, provider)
    rendered = render_report(report, "text-table")
    for line in rendered.strip().splitlines()[1:]:
        for cell in re.findall(r"\d\.\d{4}", line):
            assert cell == "1.0000"
    assert report.scores[0] == (1.0, 1.0)
    assert time.monotonic() - started < 1.0


@pytest.mark.acceptance("similarity fixture renders published values, max marked on final row")
def test_reference_similarity_fixture():
    report = report_from_json(FIXTURE.read_text(encoding="utf-8"))
    expected_rows = {
        "Benchmark Answer": ("1.0000", "1.0000", "1.0000"),
        "ChatGPT-3.5": ("0.8688", "0.9250", "0.9165"),
        "Qwen": ("0.8938", "0.9296", "0.8784"),
        "Ernie Bot": ("0.8884", "0.9102", "0.8206"),
        "ChatGLM": ("0.8978", "0.9052", "0.8998"),
        "Polymetis": ("0.9157", "0.9342", "0.9254"),
    }
    rendered = render_report(report, "text-table")
    lines = rendered.strip().splitlines()
    assert lines[1].startswith("Benchmark Answer")
    seen = {}
    for line in lines[1:]:
        name = next(n for n in expected_rows if line.startswith(n))
        cells = tuple(c.lstrip("*") for c in re.findall(r"\*?\d\.\d{4}", line))
        seen[name] = cells
        stars = line.count("*")
        assert stars == (3 if name == "Polymetis" else 0)
    assert seen == expected_rows
    assert max_marks(report) == [{5}, {5}, {5}], "final row is the per-question max"


@pytest.mark.acceptance("bit-exact record literal + 10k-record read/write identity")
def test_record_format_bit_exact(tmp_path):
    literal = (
        '{"messages": [{"role": "user", "content": ""}, '
        '{"role": "assistant", "content": ""}]}'
    )
    assert serialize_record(InstructionRecord.from_qa("", "")) == literal

    rng = random.Random(424242)
    alphabet = "abcDEF 0123 ?!.:,;\n\t é ü 中文 ABX3 \"quote\" \\ {} []"
    records = [
        InstructionRecord.from_qa(
            "".join(rng.choice(alphabet) for _ in range(rng.randrange(0, 120))),
            "".join(rng.choice(alphabet) for _ in range(rng.randrange(0, 120))),
        )
        for _ in range(10_000)
    ]
    path = tmp_path / "bulk.jsonl"
    assert write_jsonl(records, path) == 10_000
    assert read_jsonl(path) == records


_MARKER_LINE = re.compile(r"^[QA]\d+:", re.MULTILINE)


@pytest.mark.acceptance("parser round-trip over 10k generated lists + malformed classes")
def test_parser_round_trip_bulk():
    rng = random.Random(90125)
    alphabet = "abc def\nghi jk? .!:Q1A2  éü—*"

    def field() -> str:
        while True:
            text = "".join(rng.choice(alphabet) for _ in range(rng.randrange(1, 70))).strip()
            if text and not _MARKER_LINE.search(text):
                return text

    for _ in range(10_000):
        pairs = [(field(), field()) for _ in range(rng.randrange(1, 6))]
        assert parse_qa_output(serialize_qa_pairs(pairs)) == pairs

    malformed = {
        "": NO_MARKERS,
        "prose before any marker\nQ1: q\nA1: a\n": TRAILING_GARBAGE,
        "Q1: q\nA2: a\n": INDEX_GAP,
        "Q1: q\nA1: a\nQ3: x\nA3: y\n": INDEX_GAP,
        "Q1: q\nA1: a\nQ1: x\nA1: y\n": INDEX_GAP,
        "Q1: q\n": MISSING_A_MARKER,
        "A1: a\n": MISSING_Q_MARKER,
        "Q1: \nA1: a\n": EMPTY_FIELD,
        "Q1: q\nA1:\n": EMPTY_FIELD,
    }
    for raw, kind in malformed.items():
        with pytest.raises(FormatError) as excinfo:
            parse_qa_output(raw)
        assert excinfo.value.kind == kind, raw
    with pytest.raises(FormatError) as excinfo:
        parse_qa_output("Q1: q\nA1: a\n", expected_count=2)
    assert excinfo.value.kind == COUNT_MISMATCH


@pytest.mark.acceptance("segmentation invariants over 1000 random documents/policies")
def test_segmentation_invariants_bulk():
    rng = random.Random(5150)
    alphabet = "ab cd.ef\ngh\n\nij? kl! mn  op"
    for index in range(1000):
        length = rng.randrange(1, 4000)
        body = "".join(rng.choice(alphabet) for _ in range(length))
        if not body.strip():
            body = "fallback body text."
        max_chars = rng.randrange(2, 700)
        overlap = rng.randrange(0, max_chars)
        rule = rng.choice(["hard_cut", "prefer_sentence_end", "prefer_paragraph_end"])
        policy = SegmentationPolicy(max_chars=max_chars, overlap_chars=overlap, boundary_rule=rule)
        doc = Document(
            doc_id=f"doc-{index}", title="t", body=body, domain_hint=None, source_path="mem"
        )
        segments = segment(doc, policy)

        assert segments[0].char_start == 0
        assert segments[-1].char_end == len(body)
        previous_end = None
        for i, seg in enumerate(segments):
            assert seg.segment_index == i
            assert seg.char_start < seg.char_end, "ordering/positivity"
            assert seg.text == body[seg.char_start : seg.char_end]
            if previous_end is not None:
                assert seg.char_start == previous_end - overlap, "exact overlap"
            previous_end = seg.char_end
        rebuilt = segments[0].text + "".join(s.text[overlap:] for s in segments[1:])
        assert rebuilt == body, "reconstruction"


@pytest.mark.acceptance("end-to-end offline pipeline on the demo corpus")
def test_pipeline_end_to_end(tmp_path, capsys):
    started = time.monotonic()
    demo = tmp_path / "demo"
    shutil.copytree(DEMO_DIR, demo)
    out_dir = tmp_path / "out"
    code = main(
        [
            "pipeline", "run",
            "--config", str(demo / "demo.toml"),
            "--provider", "mock",
            "--auto-accept",
            "--out-dir", str(out_dir),
        ]
    )
    capsys.readouterr()
    assert code == 0

    records = read_jsonl(out_dir / "dataset.jsonl")  # schema-validating read
    assert len(records) >= 40

    stats = json.loads((out_dir / "dataset.stats.json").read_text(encoding="utf-8"))
    assert stats["total"] == len(records)
    assert sum(stats["counts"].values()) == len(records)

    config = json.loads((out_dir / "train_config.json").read_text(encoding="utf-8"))
    assert config["learning_rate"] == 1e-5
    assert config["batch_size"] == 4
    assert config["epochs"] == 3
    assert time.monotonic() - started < 60.0


@pytest.mark.acceptance("gateway discipline: concurrency cap, rpm cap, scripted retries")
def test_gateway_discipline(fake_clock):
    import threading
    import time as time_mod

    from materia.gateway import (
        ProviderHandle,
        ProviderReply,
        TransientProviderError,
    )

    class InstrumentedProvider(ProviderHandle):
        provider_id = "instrumented"
        model_name = "instrumented"

        def __init__(self, clock=None, hold_s=0.0, script=None):
            self.clock = clock
            self.hold_s = hold_s
            self.script = list(script or [])
            self.dispatch_times: list[float] = []
            self.calls = 0
            self.in_flight = 0
            self.peak = 0
            self._lock = threading.Lock()

        def send(self, request):
            with self._lock:
                self.calls += 1
                self.in_flight += 1
                self.peak = max(self.peak, self.in_flight)
                if self.clock is not None:
                    self.dispatch_times.append(self.clock.monotonic())
                step = self.script.pop(0) if self.script else "ok"
            try:
                if self.hold_s:
                    time_mod.sleep(self.hold_s)
                if isinstance(step, Exception):
                    raise step
                return ProviderReply(text="ok")
            finally:
                with self._lock:
                    self.in_flight -= 1

    # concurrency cap against an instrumented provider holding each call open
    concurrency_provider = InstrumentedProvider(hold_s=0.02)
    gateway = Gateway(
        concurrency_provider,
        GatewayPolicy(max_concurrent=3, requests_per_minute=10_000, backoff_base_ms=1),
    )
    results = gateway.complete_batch([ChatRequest(user=f"r{i}") for i in range(12)])
    assert len(results) == 12
    assert concurrency_provider.peak <= 3

    # dispatch rate cap on a simulated clock
    rpm = 5
    rate_provider = InstrumentedProvider(clock=fake_clock)
    gateway = Gateway(
        rate_provider,
        GatewayPolicy(max_concurrent=2, requests_per_minute=rpm, backoff_base_ms=1),
        clock=fake_clock,
        rng=random.Random(0),
    )
    gateway.complete_batch([ChatRequest(user=f"r{i}") for i in range(17)])
    times = sorted(rate_provider.dispatch_times)
    assert len(times) == 17
    for start in times:
        assert sum(1 for t in times if start <= t < start + 60.0) <= rpm

    # scripted 429/429/200 succeeds with exactly the scripted retry count
    retry_provider = InstrumentedProvider(
        script=[
            TransientProviderError("429", kind="rate_limited"),
            TransientProviderError("429", kind="rate_limited"),
            "ok",
        ]
    )
    gateway = Gateway(
        retry_provider,
        GatewayPolicy(max_retries=3, backoff_base_ms=1),
        clock=fake_clock,
        rng=random.Random(0),
    )
    result = gateway.complete(ChatRequest(user="retry probe"))
    assert result.retries == 2
    assert retry_provider.calls == 3


@pytest.mark.acceptance("blindness fuzz + unmask gating + decision-log replay")
def test_blindness_and_replay(tmp_path):
    from fastapi.testclient import TestClient

    registered = ["gpt-x", "ernie-pro", "qwen-plus", "glm-tuned", "baseline-llm"]
    answers = {name: f"Candidate answer number {i}." for i, name in enumerate(registered)}

    store = ReviewStore(tmp_path / "reviews.db")
    pairs = [
        QAPair(
            qa_id=f"qa-{i}", question=f"Q{i}?", answer=f"A{i}.", doc_id="d",
            segment_index=i, template_id="t", provider_id="p", model_name="m",
        )
        for i in range(10)
    ]
    store.enqueue(pairs)

    with TestClient(create_app(store)) as client:
        session_ids = [
            client.post(
                "/api/sessions",
                json={"question": f"q{seed}?", "model_answers": answers, "seed": seed},
            ).json()["session_id"]
            for seed in range(8)
        ]
        probes = (
            ["/api/review/queue", "/api/stats", "/api/sessions", "/api/benchmarks"]
            + [f"/api/sessions/{sid}" for sid in session_ids]
            + [f"/api/sessions/{sid}/unmask" for sid in session_ids]
        )
        for probe in probes:
            response = client.get(probe)
            for model in registered:
                assert model not in response.text, f"{model} leaked via {probe}"
        for sid in session_ids:
            assert client.get(f"/api/sessions/{sid}/unmask").status_code == 409

        finalize = client.post(
            f"/api/sessions/{session_ids[0]}/finalize",
            json={"composed_answer": "Expert-composed benchmark."},
        )
        assert finalize.status_code == 200
        unmask = client.get(f"/api/sessions/{session_ids[0]}/unmask")
        assert unmask.status_code == 200
        assert set(unmask.json()["mapping"].values()) == set(registered)

    # decision-log replay reconstructs the pair state byte-identically
    rng = random.Random(8)
    for pair in pairs:
        action = rng.choice(["accept", "reject", "edit", "skip"])
        if action == "skip":
            continue
        store.decide(
            ReviewDecision(
                qa_id=pair.qa_id,
                decision=action,
                reviewer_id=rng.choice(["expert-1", "expert-2"]),
                edited_answer="Edited answer." if action == "edit" else None,
            )
        )
    replica = ReviewStore(tmp_path / "replica.db")
    replica.enqueue(pairs)
    replica.replay_decisions(store.decision_log())
    assert replica.export_pairs_jsonl() == store.export_pairs_jsonl()
