"""Turn free-form referring text into a referential order, two ways.

The rule-based parser scans for known class names in appearance order.
The two-stage client first asks an endpoint to strip view-dependent
phrasing, then asks it for the order itself; here a canned transport
stands in for the live endpoint so the demo runs offline.

Run: python3 demos/02_parse_orders.py
"""

from vigor.orderparse import (
    CannedTransport,
    llm_two_stage_order,
    parse_appearance_order,
    trim_pad,
)
from vigor.scene import ClassVocab

vocab = ClassVocab(("bed", "pillow", "lamp", "desk", "chair"))

print("= Rule-based appearance order " + "=" * 34)
texts = [
    "There is a bed near the window; take the pillow on it.",
    "Walk past the desk and the lamp to reach the chair.",
    "Check the desk; the lamp sits on the desk.",
]
for text in texts:
    parsed = parse_appearance_order(text, vocab)
    print(f"  {text!r}")
    print(f"    -> {' -> '.join(parsed.names)}   (target: {parsed.target})")

print("\n= Fitting an order to a block budget " + "=" * 27)
order = ["bed", "desk", "lamp", "chair", "pillow"]
for b in (2, 4, 6):
    print(f"  budget {b}: {trim_pad(order, b)}")

print("\n= Two-stage parsing over a canned endpoint " + "=" * 21)
description = "Facing the bed, grab the pillow on the left, near the lamp."
summary = "The pillow near the lamp on the bed."
transcript = [
    {
        "request_substring": description,
        "response": f"summarized description: {summary}\ntarget object: pillow",
    },
    {
        "request_substring": summary,
        "response": "referential order: bed→lamp→pillow\nanchor objects: bed, lamp",
    },
]
parsed = llm_two_stage_order(description, transport=CannedTransport(transcript))
print(f"  {description!r}")
print(f"    -> {' -> '.join(parsed.names)}")

print("\nFrom the shell (rule parser needs no endpoint):")
print("  vigor parse --desc 'the chair nearest the lamp' --parser rule \\")
print("      --vocab '[\"chair\", \"lamp\"]'")
