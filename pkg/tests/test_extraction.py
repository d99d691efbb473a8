from __future__ import annotations

import json
import random
import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from materia.corpus import TextSegment
from materia.extraction import (
    COUNT_MISMATCH,
    EMPTY_FIELD,
    INDEX_GAP,
    MISSING_A_MARKER,
    MISSING_Q_MARKER,
    NO_MARKERS,
    TRAILING_GARBAGE,
    ExtractionFailed,
    FormatError,
    JobFailed,
    QAPair,
    extract_qa,
    parse_qa_output,
    read_checkpoint,
    run_extraction_job,
    serialize_qa_pairs,
)
from materia.gateway import (
    ChatRequest,
    Gateway,
    GatewayPolicy,
    MockChatProvider,
    ProviderError,
    ProviderHandle,
    ProviderReply,
    request_fingerprint,
)
from materia.prompts import builtin_template, render_extraction_prompt

VALID_OUTPUT = (
    "Q1: What is a perovskite?\n"
    "A1: A crystal structure of formula ABX3.\n"
    "Q2: Why coat LiFePO4 with carbon?\n"
    "A2: To compensate for poor electronic conductivity.\n"
)


def _segment(text: str = "Perovskites adopt the ABX3 structure.", index: int = 0) -> TextSegment:
    return TextSegment(
        doc_id="doc-1", segment_index=index, text=text, char_start=0, char_end=len(text)
    )


def _segments(count: int) -> list[TextSegment]:
    return [
        _segment(f"Synthetic passage number {i} about materials topic {i}.", index=i)
        for i in range(count)
    ]


class TestParse:
    def test_valid_two_pairs(self):
        pairs = parse_qa_output(VALID_OUTPUT)
        assert pairs == [
            ("What is a perovskite?", "A crystal structure of formula ABX3."),
            ("Why coat LiFePO4 with carbon?", "To compensate for poor electronic conductivity."),
        ]

    def test_multiline_bodies_attach_to_markers(self):
        raw = "Q1: What about\nmultiline questions?\nA1: They work,\neven with blanks.\n"
        pairs = parse_qa_output(raw)
        assert pairs == [("What about\nmultiline questions?", "They work,\neven with blanks.")]

    def test_crlf_normalized(self):
        raw = VALID_OUTPUT.replace("\n", "\r\n")
        assert parse_qa_output(raw) == parse_qa_output(VALID_OUTPUT)

    @pytest.mark.parametrize(
        "raw,kind",
        [
            ("no markers at all, just prose", TRAILING_GARBAGE),
            ("", NO_MARKERS),
            ("   \n  \n", NO_MARKERS),
            ("Q1: q\nA2: a\n", INDEX_GAP),
            ("Q2: q\nA2: a\n", INDEX_GAP),
            ("Q1: q\nA1: a\nQ3: q\nA3: a\n", INDEX_GAP),
            ("Q1: q\nA1: a\nQ1: q\nA1: a\n", INDEX_GAP),
            ("Q1: q\n", MISSING_A_MARKER),
            ("Q1: q\nQ2: q2\nA2: a\n", MISSING_A_MARKER),
            ("A1: a\nQ1: q\n", MISSING_Q_MARKER),
            ("Q1: \nA1: a\n", EMPTY_FIELD),
            ("Q1: q\nA1:   \n", EMPTY_FIELD),
            ("preamble text\nQ1: q\nA1: a\n", TRAILING_GARBAGE),
        ],
    )
    def test_malformed_kinds(self, raw, kind):
        with pytest.raises(FormatError) as excinfo:
            parse_qa_output(raw)
        assert excinfo.value.kind == kind
        assert excinfo.value.position >= 1

    def test_expected_count_mismatch(self):
        with pytest.raises(FormatError) as excinfo:
            parse_qa_output(VALID_OUTPUT, expected_count=3)
        assert excinfo.value.kind == COUNT_MISMATCH

    def test_expected_count_match(self):
        assert len(parse_qa_output(VALID_OUTPUT, expected_count=2)) == 2


_MARKER_LINE = re.compile(r"^[QA]\d+:", re.MULTILINE)

field_text = (
    st.text(
        alphabet=st.characters(blacklist_characters="\r", blacklist_categories=("Cs",)),
        min_size=1,
        max_size=80,
    )
    .map(lambda s: s.strip())
    .filter(lambda s: s and not _MARKER_LINE.search(s))
)


class TestRoundTrip:
    @given(st.lists(st.tuples(field_text, field_text), min_size=1, max_size=8))
    @settings(max_examples=300, deadline=None)
    def test_serialize_then_parse_is_identity(self, pairs):
        assert parse_qa_output(serialize_qa_pairs(pairs)) == pairs

    def test_seeded_bulk_round_trip(self):
        rng = random.Random(2024)
        alphabet = "abc def\nghi jkl? .:!QA123  éü—"
        for _ in range(2000):
            pairs = []
            for _ in range(rng.randrange(1, 6)):
                fields = []
                for _ in range(2):
                    text = "".join(
                        rng.choice(alphabet) for _ in range(rng.randrange(1, 60))
                    ).strip()
                    if not text or _MARKER_LINE.search(text):
                        text = "fallback body"
                    fields.append(text)
                pairs.append(tuple(fields))
            assert parse_qa_output(serialize_qa_pairs(pairs)) == pairs


class TestQAPair:
    def test_rejects_blank_question(self):
        with pytest.raises(ValueError):
            QAPair(
                qa_id="x", question="  ", answer="a", doc_id="d", segment_index=0,
                template_id="t", provider_id="p", model_name="m",
            )

    def test_edited_requires_edited_field(self):
        with pytest.raises(ValueError):
            QAPair(
                qa_id="x", question="q", answer="a", doc_id="d", segment_index=0,
                template_id="t", provider_id="p", model_name="m", review_state="edited",
            )


class TestExtractQa:
    def _scripted_gateway(self, segment, template, responses: list[str]) -> Gateway:
        prompt = render_extraction_prompt(template, segment)
        fingerprints = [request_fingerprint(ChatRequest(user=prompt))]

        class OrderedProvider(ProviderHandle):
            provider_id = "scripted"
            model_name = "scripted-model"

            def __init__(self):
                self.responses = list(responses)
                self.calls = 0

            def send(self, request: ChatRequest) -> ProviderReply:
                self.calls += 1
                return ProviderReply(text=self.responses.pop(0))

        self.provider = OrderedProvider()
        return Gateway(self.provider, GatewayPolicy(backoff_base_ms=1))

    def test_valid_response_yields_triple(self):
        template = builtin_template()
        segment = _segment()
        gateway = self._scripted_gateway(segment, template, [VALID_OUTPUT])
        triple = extract_qa(segment, template, gateway)
        assert triple.repair_retries == 0
        assert [p.question for p in triple.qa_pairs] == [
            "What is a perovskite?",
            "Why coat LiFePO4 with carbon?",
        ]
        for pair in triple.qa_pairs:
            assert pair.review_state == "pending"
            assert (pair.doc_id, pair.segment_index) == (segment.doc_id, segment.segment_index)

    def test_repair_retry_recovers(self):
        template = builtin_template()
        segment = _segment()
        gateway = self._scripted_gateway(segment, template, ["not the format", VALID_OUTPUT])
        triple = extract_qa(segment, template, gateway)
        assert triple.repair_retries == 1
        assert self.provider.calls == 2

    def test_two_malformed_responses_fail(self):
        template = builtin_template()
        segment = _segment()
        gateway = self._scripted_gateway(segment, template, ["bad", "still bad"])
        with pytest.raises(ExtractionFailed):
            extract_qa(segment, template, gateway)


class TestRunExtractionJob:
    def test_full_mock_run_and_compliance(self, tmp_path):
        segments = _segments(12)
        gateway = Gateway(MockChatProvider(seed=11), GatewayPolicy())
        checkpoint = tmp_path / "triples.jsonl"
        report = run_extraction_job(segments, builtin_template(), gateway, checkpoint)
        assert report.succeeded == 12
        assert report.compliance.total_outputs == 12
        assert report.compliance.compliant == 12
        assert report.compliance.violations == []
        triples = read_checkpoint(checkpoint)
        assert len(triples) == 12
        segment_keys = {(s.doc_id, s.segment_index) for s in segments}
        for triple in triples:
            assert (triple.doc_id, triple.segment_index) in segment_keys
            for pair in triple.qa_pairs:
                assert (pair.doc_id, pair.segment_index) in segment_keys

    def test_resume_skips_checkpointed(self, tmp_path):
        segments = _segments(10)
        checkpoint = tmp_path / "triples.jsonl"
        provider_one = MockChatProvider(seed=11)
        run_extraction_job(segments[:5], builtin_template(), Gateway(provider_one), checkpoint)
        assert provider_one.call_count == 5

        provider_two = MockChatProvider(seed=11)
        report = run_extraction_job(
            segments, builtin_template(), Gateway(provider_two), checkpoint
        )
        assert provider_two.call_count == 5  # only the 5 new segments
        assert report.skipped_checkpointed == 5
        triples = read_checkpoint(checkpoint)
        assert len(triples) == 10
        keys = [(t.doc_id, t.segment_index, t.template_id) for t in triples]
        assert len(keys) == len(set(keys)), "no duplicate triples after resume"

    def test_empty_segment_list(self, tmp_path):
        provider = MockChatProvider()
        report = run_extraction_job(
            [], builtin_template(), Gateway(provider), tmp_path / "t.jsonl"
        )
        assert provider.call_count == 0
        assert report.requested == 0
        assert report.succeeded == 0

    def test_repair_wave_counts(self, tmp_path):
        template = builtin_template()
        segments = _segments(3)

        class FlakyFormatter(ProviderHandle):
            provider_id = "flaky"
            model_name = "flaky"

            def __init__(self):
                self.seen: set[str] = set()

            def send(self, request: ChatRequest) -> ProviderReply:
                # First sight of each prompt: malformed. Repair prompt: valid.
                if "previous output violated" in request.user:
                    return ProviderReply(text="Q1: fixed?\nA1: yes fixed.\n")
                return ProviderReply(text="garbled output")

        report = run_extraction_job(
            segments, template, Gateway(FlakyFormatter()), tmp_path / "t.jsonl"
        )
        assert report.succeeded == 3
        assert report.repaired == 3
        assert report.compliance.total_outputs == 3
        assert report.compliance.compliant == 3
        # accounting invariant: compliant + per-segment final violations = totals
        assert report.compliance.compliant + len(report.compliance.violations) == (
            report.compliance.total_outputs
        )

    def test_all_fail_raises_job_failed(self, tmp_path):
        class AlwaysBad(ProviderHandle):
            provider_id = "bad"
            model_name = "bad"

            def send(self, request: ChatRequest) -> ProviderReply:
                return ProviderReply(text="never valid")

        with pytest.raises(JobFailed):
            run_extraction_job(
                _segments(4), builtin_template(), Gateway(AlwaysBad()), tmp_path / "t.jsonl"
            )

    def test_partial_gateway_failures_recorded(self, tmp_path):
        class HalfBroken(ProviderHandle):
            provider_id = "half"
            model_name = "half"

            def send(self, request: ChatRequest) -> ProviderReply:
                if "number 1 " in request.user:
                    raise ProviderError("scripted hard failure")
                return ProviderReply(text="Q1: ok?\nA1: fine.\n")

        report = run_extraction_job(
            _segments(4), builtin_template(), Gateway(HalfBroken()), tmp_path / "t.jsonl"
        )
        assert report.succeeded == 3
        assert report.failed == 1
        assert report.error_tallies.get("ProviderError") == 1

    def test_checkpoint_line_schema(self, tmp_path):
        segments = _segments(1)
        checkpoint = tmp_path / "triples.jsonl"
        run_extraction_job(segments, builtin_template(), Gateway(MockChatProvider()), checkpoint)
        obj = json.loads(checkpoint.read_text(encoding="utf-8").splitlines()[0])
        for key in ("prompt", "source_ref", "qa", "template_id", "provider_id"):
            assert key in obj
        assert set(obj["source_ref"].keys()) == {"doc_id", "segment_index"}
        assert all(set(qa.keys()) == {"question", "answer"} for qa in obj["qa"])
