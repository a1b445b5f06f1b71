"""Evaluate grounding accuracy with subset breakdowns.

Beyond a single accuracy number, the harness partitions items by
referential-order length and by how many same-class distractors crowd
the target.  Subset counts always sum back to the total, so nothing is
silently dropped.

Run: python3 demos/04_evaluate_breakdown.py
"""

from vigor.evaluation import accuracy
from vigor.model import GroundingModel, ModelConfig
from vigor.orderparse import parse_appearance_order
from vigor.synthgen import GenConfig, default_vocab, generate_dataset
from vigor.trainer import TrainConfig, TrainState, warmup_stage

vocab = default_vocab(8)


def gen_cfg(seed, order_len):
    return GenConfig(
        proposals_min=5,
        proposals_max=8,
        points_per_proposal=8,
        class_vocab_size=8,
        order_len=order_len,
        seed=seed,
    )


# mixed-length evaluation pool: short and long referential orders
eval_items = list(generate_dataset(gen_cfg(300, 2), 150))
eval_items += list(generate_dataset(gen_cfg(301, 4), 150))

model = GroundingModel(
    ModelConfig(d=16, b=2, n_heads=2, points_per_proposal=8, seed=0), vocab
)
state = TrainState.fresh(0)
print("warming up a small model (about a minute) ...")
tc = TrainConfig(warmup_steps=800, batch_size=4, lr=3e-4, seed=0)
warmup_stage(model, gen_cfg(0, 2), tc, state)

parser = lambda desc: parse_appearance_order(desc, vocab)
report = accuracy(model, eval_items, parser=parser)

print(f"\noverall accuracy: {report.overall:.3f} on {report.count} items")
print("\nby subset:")
for key in sorted(report.subsets):
    sub = report.subsets[key]
    print(f"  {key:22s} accuracy {sub['accuracy']:.3f}  (n={sub['count']})")

print("\nas shipped to disk (vigor eval --report report.json):")
print(report.to_json())
