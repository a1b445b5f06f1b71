"""Command-line surface: synth, train, eval, parse, gradcheck, verify.

Exit codes: 0 success, 1 validation failure, 2 usage error, 3 I/O or
endpoint failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import (
    AmbiguityError,
    CheckpointError,
    ContractError,
    EmptyOrderError,
    EndpointError,
    GenerationError,
    NotFoundError,
    NumericError,
    OrderParseError,
    ValidationError,
)
from .evaluation import accuracy
from .losses import LossWeights
from .model import GroundingModel, ModelConfig
from .orderparse import (
    LlmEndpointConfig,
    HttpTransport,
    llm_two_stage_order,
    load_transcript,
    parse_appearance_order,
)
from .records import (
    dataset_vocab,
    example_from_record,
    read_records,
    record_from_sample,
    write_records,
)
from .scene import ClassVocab
from .synthgen import (
    DEFAULT_CLASS_NAMES,
    GenConfig,
    default_vocab,
    generate_dataset,
    oracle_resolve_parts,
)
from .trainer import (
    TrainConfig,
    TrainState,
    full_model_grad_check,
    load_checkpoint,
    main_stage,
    model_from_checkpoint,
    save_checkpoint,
    warmup_stage,
)

__all__ = ["main"]

VALIDATION_FAILURES = (
    ValidationError,
    ContractError,
    GenerationError,
    AmbiguityError,
    OrderParseError,
    CheckpointError,
    NumericError,
    NotFoundError,
    EmptyOrderError,
)

# keys accepted in a --config file, mirroring the three config dataclasses
TRAIN_KEYS = {
    "warmup_steps",
    "main_steps",
    "batch_size",
    "lr",
    "seed",
    "label_noise",
    "eval_every",
    "w_ref",
    "w_mask",
    "w_text",
    "w_crd",
}
MODEL_KEYS = {"d", "n_heads", "order_len", "points_per_proposal"}
GEN_KEYS = {
    "proposals_min",
    "proposals_max",
    "room_extent",
    "class_vocab_size",
    "relation",
    "min_separation",
    "style",
}


def _proposal_range(text: str) -> tuple[int, int]:
    try:
        lo, _, hi = text.partition(":")
        return int(lo), int(hi if hi else lo)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected MIN:MAX (like 5:9), got {text!r}"
        ) from None


def _load_config_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        try:
            blob = json.load(f)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(blob, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    unknown = set(blob) - TRAIN_KEYS - MODEL_KEYS - GEN_KEYS
    if unknown:
        raise ValidationError(f"{path}: unknown config keys {sorted(unknown)}")
    return blob


def _make_parser_fn(kind: str, vocab: ClassVocab, transcript: str | None):
    if kind == "rule":
        return lambda desc: parse_appearance_order(desc, vocab).names
    transport = (
        load_transcript(transcript)
        if transcript
        else HttpTransport(LlmEndpointConfig.from_env())
    )
    return lambda desc: llm_two_stage_order(desc, transport=transport).names


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    lo, hi = args.proposals
    cfg = GenConfig(
        proposals_min=lo,
        proposals_max=hi,
        points_per_proposal=args.points,
        class_vocab_size=args.vocab_size,
        order_len=args.order_len,
        relation=args.relation,
        seed=args.seed,
        style=args.style,
    )
    records = [record_from_sample(s) for s in generate_dataset(cfg, args.scenes)]
    write_records(args.out, records)
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config) if args.config else {}

    def pick(key, flag_value, default):
        if flag_value is not None:
            return flag_value
        return file_cfg.get(key, default)

    seed = int(pick("seed", args.seed, 0))
    order_len = int(pick("order_len", args.order_len, 2))
    model_cfg = ModelConfig(
        d=int(pick("d", args.d, 32)),
        b=order_len,
        n_heads=int(file_cfg.get("n_heads", 4)),
        points_per_proposal=int(file_cfg.get("points_per_proposal", 16)),
        seed=seed,
    )
    gen_cfg = GenConfig(
        proposals_min=int(file_cfg.get("proposals_min", 5)),
        proposals_max=int(file_cfg.get("proposals_max", 9)),
        points_per_proposal=model_cfg.points_per_proposal,
        room_extent=float(file_cfg.get("room_extent", 6.0)),
        class_vocab_size=int(file_cfg.get("class_vocab_size", 12)),
        order_len=order_len,
        relation=str(file_cfg.get("relation", "farthest")),
        min_separation=float(file_cfg.get("min_separation", 0.01)),
        seed=seed,
        style=str(file_cfg.get("style", "template")),
    )
    weights = LossWeights(
        w_ref=float(file_cfg.get("w_ref", 1.0)),
        w_mask=float(file_cfg.get("w_mask", 1.0)),
        w_text=float(file_cfg.get("w_text", 1.0)),
        w_crd=float(file_cfg.get("w_crd", 1.0)),
    )
    train_cfg = TrainConfig(
        warmup_steps=int(pick("warmup_steps", args.warmup_steps, 0)),
        main_steps=int(pick("main_steps", args.main_steps, 0)),
        batch_size=int(pick("batch_size", args.batch_size, 16)),
        lr=float(pick("lr", args.lr, 1e-3)),
        seed=seed,
        weights=weights,
        eval_every=int(file_cfg.get("eval_every", 0)),
        label_noise=float(file_cfg.get("label_noise", 0.0)),
    )

    vocab = default_vocab(gen_cfg.class_vocab_size)
    model = GroundingModel(model_cfg, vocab)
    state = TrainState.fresh(seed)
    if train_cfg.warmup_steps:
        report, state = warmup_stage(model, gen_cfg, train_cfg, state)
        print(
            f"warm-up: {len(report.losses)} steps, "
            f"loss {report.losses[0]:.4f} -> {report.losses[-1]:.4f}"
        )
    if args.main_data:
        records = read_records(args.main_data)
        examples = [example_from_record(r, model.class_vocab) for r in records]
        parser_fn = _make_parser_fn(args.parser, model.class_vocab, args.transcript)
        report, state = main_stage(model, examples, train_cfg, parser_fn, state)
        if report.losses:
            print(
                f"main: {len(report.losses)} steps, "
                f"loss {report.losses[0]:.4f} -> {report.losses[-1]:.4f}"
            )
    save_checkpoint(args.out, model, state)
    print(f"saved checkpoint to {args.out}")
    return 0


def cmd_eval(args) -> int:
    families = [f for f in args.breakdown.split(",") if f]
    unknown = set(families) - {"order_length", "distractors"}
    if unknown:
        raise ValidationError(f"unknown breakdown families {sorted(unknown)}")
    ckpt = load_checkpoint(args.ckpt)
    model, _ = model_from_checkpoint(ckpt)
    records = read_records(args.data)
    examples = [example_from_record(r, model.class_vocab) for r in records]
    report = accuracy(
        model, examples, config={"data": str(args.data), "ckpt": str(args.ckpt)}
    )
    report.subsets = {
        k: v
        for k, v in report.subsets.items()
        if any(k.startswith(f + ":") for f in families)
    }
    blob = report.to_json()
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            f.write(blob + "\n")
        print(f"wrote report to {args.report}")
    print(f"accuracy {report.overall:.4f} on {report.count} samples")
    if not args.report:
        print(blob)
    return 0


def cmd_parse(args) -> int:
    if args.vocab:
        try:
            if args.vocab.lstrip().startswith("["):
                names = json.loads(args.vocab)
            else:
                with open(args.vocab, "r", encoding="utf-8") as f:
                    names = json.load(f)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"bad vocab JSON: {exc}") from exc
        if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
            raise ValidationError(f"{args.vocab}: expected a JSON array of class names")
        vocab = ClassVocab(tuple(names))
    else:
        vocab = ClassVocab(DEFAULT_CLASS_NAMES)
    parser_fn = _make_parser_fn(args.parser, vocab, args.transcript)
    names = parser_fn(args.desc)
    print("→".join(names))
    return 0


def cmd_gradcheck(args) -> int:
    report = full_model_grad_check(seed=args.seed)
    print(
        f"checked {report.checked} entries: max rel err {report.max_rel_err:.3e}"
        + (f" (worst {report.worst_param})" if report.worst_param else "")
    )
    if report.nonfinite:
        print(f"non-finite gradients: {report.nonfinite}")
    return 0 if report.ok(1e-4) else 1


def cmd_verify(args) -> int:
    records = read_records(args.data)
    if not records:
        print("verified 0 records")
        return 0
    vocab = dataset_vocab(records)
    failures = []
    for i, record in enumerate(records):
        example = example_from_record(record, vocab)
        parsed = parse_appearance_order(record.description, vocab)
        if list(parsed.names) != list(record.order):
            failures.append(
                f"record {i}: parsed order {list(parsed.names)} != stored {record.order}"
            )
            continue
        text = record.description.lower()
        relations = [w for w in ("farthest", "nearest") if w in text]
        if len(relations) != 1:
            failures.append(f"record {i}: expected exactly one relation word, got {relations}")
            continue
        try:
            chain = oracle_resolve_parts(example.scene, list(record.order), relations[0])
        except AmbiguityError as exc:
            failures.append(f"record {i}: {exc}")
            continue
        if chain[-1] != record.target_id:
            failures.append(
                f"record {i}: oracle target {chain[-1]} != stored {record.target_id}"
            )
        elif record.anchor_ids is not None and chain != list(record.anchor_ids):
            failures.append(
                f"record {i}: oracle chain {chain} != stored {record.anchor_ids}"
            )
    if failures:
        for line in failures:
            print(line, file=sys.stderr)
        print(f"verify FAILED on {len(failures)} of {len(records)} records")
        return 1
    print(f"verified {len(records)} records: orders and targets all agree")
    return 0


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="vigor",
        description="Order-aware visual grounding on synthetic 3D scenes.",
    )
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a dataset of grounded descriptions")
    p.add_argument("--scenes", type=int, required=True, help="number of samples")
    p.add_argument("--proposals", type=_proposal_range, default=(5, 9), metavar="MIN:MAX")
    p.add_argument("--order-len", type=int, default=2)
    p.add_argument("--relation", choices=("farthest", "nearest"), default="farthest")
    p.add_argument("--style", choices=("template", "natural"), default="template")
    p.add_argument("--points", type=int, default=16, help="points per proposal")
    p.add_argument("--vocab-size", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="warm-up and/or fine-tune a model")
    p.add_argument("--warmup-steps", type=int, default=None)
    p.add_argument("--main-data", default=None, help="records for the main stage")
    p.add_argument("--main-steps", type=int, default=None)
    p.add_argument("--parser", choices=("rule", "llm"), default="rule")
    p.add_argument("--transcript", default=None, help="canned LLM transcript (JSONL)")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--order-len", type=int, default=None)
    p.add_argument("--d", type=int, default=None, help="model width")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--breakdown", default="order_length,distractors")
    p.add_argument("--report", default=None, help="write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("parse", help="extract a referential order from text")
    p.add_argument("--desc", required=True)
    p.add_argument("--parser", choices=("rule", "llm"), default="rule")
    p.add_argument("--transcript", default=None, help="canned LLM transcript (JSONL)")
    p.add_argument(
        "--vocab",
        default=None,
        help="class names: an inline JSON array or a path to a JSON file",
    )
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("gradcheck", help="finite-difference audit of all gradients")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("verify", help="re-derive every record with the oracle")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_verify)

    return top


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except VALIDATION_FAILURES as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except EndpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
