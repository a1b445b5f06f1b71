"""Shared fixtures: canned language-model transcripts and small configs."""

import json

import pytest

# Four grounding descriptions with the replies a well-behaved chat model
# gives through the two-stage prompts.  Stage-1 requests embed the original
# description; stage-2 requests embed the stage-1 summary.  Substrings are
# chosen to be unique across all eight requests.
PARSE_CASES = [
    {
        "description": "The pillow closest to the foot of the bed.",
        "summary": "The pillow at the foot of the bed.",
        "target": "pillow",
        "order": ["bed", "pillow"],
        "order_line": "bed→pillow",
        "anchors": "bed",
    },
    {
        "description": (
            "Facing the bed, it's the large white pillow on the right. "
            "The second one from the headboard."
        ),
        "summary": "When facing the bed, the large white pillow second from the headboard.",
        "target": "pillow",
        "order": ["bed", "headboard", "pillow"],
        "order_line": "bed→headboard→pillow",
        "anchors": "bed, headboard",
    },
    {
        "description": "The front pillow on the bed with the laptop.",
        "summary": "The front pillow on the bed that has the laptop.",
        "target": "pillow",
        "order": ["laptop", "bed", "pillow"],
        "order_line": "laptop→bed→pillow",
        "anchors": "laptop, bed",
    },
    {
        "description": "The window near the table, not the one near the shelves.",
        "summary": "The window near the table.",
        "target": "window",
        "order": ["table", "window"],
        "order_line": "table→window",
        "anchors": "table",
    },
]


def transcript_records(cases=PARSE_CASES):
    records = []
    for case in cases:
        records.append(
            {
                "request_substring": case["description"],
                "response": (
                    f"summarized description: {case['summary']}\n"
                    f"target object: {case['target']}"
                ),
            }
        )
        records.append(
            {
                "request_substring": case["summary"],
                "response": (
                    f"referential order: {case['order_line']}\n"
                    f"anchor objects: {case['anchors']}"
                ),
            }
        )
    return records


@pytest.fixture
def a7_transcript_path(tmp_path):
    path = tmp_path / "transcript.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for rec in transcript_records():
            fh.write(json.dumps(rec) + "\n")
    return path
