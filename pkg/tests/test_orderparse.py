"""Tests for rule-based and language-model order parsing and trim_pad."""

import numpy as np
import pytest

from conftest import PARSE_CASES, transcript_records
from vigor.errors import (
    ContractError,
    EmptyOrderError,
    EndpointError,
    OrderParseError,
)
from vigor.orderparse import (
    FIRST_STAGE_PREFIX,
    SECOND_STAGE_PREFIX,
    CannedTransport,
    LlmEndpointConfig,
    ParsedOrder,
    TransportError,
    llm_two_stage_order,
    load_transcript,
    parse_appearance_order,
    trim_pad,
)
from vigor.scene import ClassVocab, build_mask
from vigor.synthgen import GenConfig, generate_dataset

VOCAB = ClassVocab(("chair", "door", "table", "water bottle", "easy chair", "bed"))


# ---------------------------------------------------------------------------
# rule parser


def test_appearance_order_on_template():
    text = "There is a door in the room, finally you can see the table farthest to that door."
    parsed = parse_appearance_order(text, VOCAB)
    assert list(parsed.names) == ["door", "table"]
    assert parsed.source == "rule"


def test_appearance_order_no_known_words():
    with pytest.raises(EmptyOrderError):
        parse_appearance_order("a completely unrelated sentence", VOCAB)


def test_appearance_order_multiword_no_reorder():
    parsed = parse_appearance_order("the water bottle above the easy chair", VOCAB)
    # appearance order is target-first here; the parser must not reorder
    assert list(parsed.names) == ["water bottle", "easy chair"]


def test_appearance_order_longest_match_consumes_words():
    vocab = ClassVocab(("desk", "desk lamp"))
    parsed = parse_appearance_order("the desk lamp next to the desk", vocab)
    assert list(parsed.names) == ["desk lamp", "desk"]


def test_appearance_order_duplicates_ignored():
    parsed = parse_appearance_order("table table door table", VOCAB)
    assert list(parsed.names) == ["table", "door"]


def test_appearance_order_case_and_punctuation():
    parsed = parse_appearance_order("The DOOR, then: the Water  Bottle!", VOCAB)
    assert list(parsed.names) == ["door", "water bottle"]


def test_round_trip_on_generated_templates():
    cfg = GenConfig(
        proposals_min=5,
        proposals_max=8,
        points_per_proposal=8,
        class_vocab_size=12,
        order_len=3,
        seed=11,
    )
    for sample in generate_dataset(cfg, 30):
        parsed = parse_appearance_order(sample.description, sample.scene.vocab)
        assert list(parsed.names) == sample.order


# ---------------------------------------------------------------------------
# trim / pad


def test_trim_from_front():
    assert trim_pad(["a", "b", "c", "d", "e"], 4) == ["b", "c", "d", "e"]


def test_pad_by_repeating_first():
    assert trim_pad(["x"], 4) == ["x", "x", "x", "x"]
    assert trim_pad(["a", "b"], 4) == ["a", "a", "a", "b"]


def test_exact_length_unchanged():
    assert trim_pad(["a", "b", "c", "d"], 4) == ["a", "b", "c", "d"]


def test_trim_pad_idempotent_and_target_preserving():
    rng = np.random.default_rng(0)
    pool = [f"c{i}" for i in range(10)]
    for _ in range(200):
        n = int(rng.integers(1, 8))
        order = [pool[i] for i in rng.choice(len(pool), size=n, replace=False)]
        out = trim_pad(order, 4)
        assert len(out) == 4
        assert out[-1] == order[-1]
        assert trim_pad(out, 4) == out


def test_trim_pad_rejects_empty():
    with pytest.raises(ContractError):
        trim_pad([], 4)


def test_left_pad_preserves_mask_semantics():
    """Padding repeats the first element, and masks are duplication
    invariant, so each block mask equals the clamped-suffix mask of the
    unpadded order."""
    rng = np.random.default_rng(1)
    b = 4
    names = list(VOCAB.names)
    for _ in range(100):
        n = int(rng.integers(1, b + 1))
        order = [names[i] for i in rng.choice(len(names), size=n, replace=False)]
        padded = trim_pad(order, b)
        labels = [int(c) for c in rng.integers(0, len(VOCAB), size=6)]
        for i in range(b):
            got = build_mask(labels, padded[i:], VOCAB).bits
            start = max(0, i - (b - n))
            want = build_mask(labels, order[start:], VOCAB).bits
            assert np.array_equal(got, want)


# ---------------------------------------------------------------------------
# two-stage client


def canned():
    return CannedTransport(transcript_records())


def test_two_stage_parses_all_cases():
    transport = canned()
    for case in PARSE_CASES:
        parsed = llm_two_stage_order(case["description"], transport=transport)
        assert list(parsed.names) == case["order"]
        assert parsed.source == "llm"
        assert case["summary"] in parsed.raw_response


def test_two_stage_requests_embed_prompts():
    seen = []

    class Spy(CannedTransport):
        def __call__(self, prompt):
            seen.append(prompt)
            return super().__call__(prompt)

    llm_two_stage_order(PARSE_CASES[0]["description"], transport=Spy(transcript_records()))
    assert len(seen) == 2
    assert seen[0].startswith(FIRST_STAGE_PREFIX[:40])
    assert PARSE_CASES[0]["description"] in seen[0]
    assert seen[1].startswith(SECOND_STAGE_PREFIX[:40])
    assert PARSE_CASES[0]["summary"] in seen[1]
    assert "[DESCRIPTION]" not in seen[0] and "[DESCRIPTION]" not in seen[1]


def test_malformed_stage2_response_is_parse_error():
    records = transcript_records()
    records[1]["response"] = "no arrows here"
    with pytest.raises(OrderParseError) as err:
        llm_two_stage_order(PARSE_CASES[0]["description"], transport=CannedTransport(records))
    assert err.value.raw_response == "no arrows here"


def test_malformed_stage1_response_is_parse_error():
    records = transcript_records()
    records[0]["response"] = "I refuse to answer"
    with pytest.raises(OrderParseError):
        llm_two_stage_order(PARSE_CASES[0]["description"], transport=CannedTransport(records))


def test_unmatched_request_becomes_endpoint_error():
    with pytest.raises(EndpointError):
        llm_two_stage_order("a description with no canned reply", transport=canned())


def test_transport_retries_then_succeeds():
    inner = canned()
    failures = {"n": 1}

    def flaky(prompt):
        if failures["n"] > 0:
            failures["n"] -= 1
            raise TransportError("connection reset")
        return inner(prompt)

    parsed = llm_two_stage_order(PARSE_CASES[0]["description"], transport=flaky)
    assert list(parsed.names) == PARSE_CASES[0]["order"]


def test_ascii_arrow_accepted():
    records = [
        {
            "request_substring": "plain case",
            "response": "summarized description: plain summary\ntarget object: chair",
        },
        {
            "request_substring": "plain summary",
            "response": "referential order: door->chair",
        },
    ]
    parsed = llm_two_stage_order("plain case", transport=CannedTransport(records))
    assert list(parsed.names) == ["door", "chair"]


def test_load_transcript_roundtrip(a7_transcript_path):
    transport = load_transcript(a7_transcript_path)
    parsed = llm_two_stage_order(PARSE_CASES[3]["description"], transport=transport)
    assert list(parsed.names) == ["table", "window"]


def test_endpoint_config_validation(monkeypatch):
    with pytest.raises(ContractError):
        LlmEndpointConfig(base_url="http://x", model="m", timeout=0)
    monkeypatch.delenv("VIGOR_LLM_ENDPOINT", raising=False)
    with pytest.raises(EndpointError):
        LlmEndpointConfig.from_env()
    monkeypatch.setenv("VIGOR_LLM_ENDPOINT", "http://localhost:9")
    assert LlmEndpointConfig.from_env().base_url == "http://localhost:9"


def test_parsed_order_invariants():
    with pytest.raises(ContractError):
        ParsedOrder(names=(), source="rule")
    with pytest.raises(ContractError):
        ParsedOrder(names=("Chair",), source="rule")
    assert ParsedOrder(names=("a", "b"), source="rule").target == "b"
