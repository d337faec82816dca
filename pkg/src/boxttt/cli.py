"""Command-line entry points.

Subcommands:

* ``adapt`` — run per-sample adaptation over a record file, writing the
  effective config, per-record predictions under both conditions
  (native and adapted), per-mini-epoch traces, and a metric report.
* ``eval`` — score an existing predictions file against its records,
  or cross-check the shipped published-results transcription.
* ``stats`` — per-split image/QA/open/closed counts for a record file,
  optionally compared against the recorded dataset statistics.
* ``convert`` — translate native benchmark files into the canonical
  JSON-lines schema.
* ``synth`` — generate the small deterministic toy fixture.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import torch

from .backbones import ANSWERING, GROUNDING, build_backbone
from .datasets import (
    convert_pathvqa,
    convert_slake,
    convert_vqa_rad,
    load_image,
    make_synthetic_dataset,
    resolve_image_path,
)
from .engine import EngineConfig, native_answer, run_episode
from .errors import BoxtttError, ConfigError, DataError, NumericalError
from .evaluation import (
    QARecord,
    check_result_table,
    check_split_statistics,
    compute_report,
    dataset_statistics,
    load_dataset,
    load_published_results,
)
from .prompts import OptimizerConfig

REPORT_COLUMNS = (
    "dataset",
    "model",
    "condition",
    "open_recall",
    "closed_accuracy",
    "open_count",
    "closed_count",
)


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems through the exit-code scheme."""

    def error(self, message):
        raise ConfigError(message)


def _engine_config_from_args(args) -> EngineConfig:
    try:
        optimizer = OptimizerConfig(
            lr_vis=args.lr_vis, lr_ans=args.lr_ans, ema_decay=args.ema_decay
        )
        return EngineConfig(
            mini_epochs=args.epochs,
            optimizer=optimizer,
            evidence_tokens=args.evidence_tokens,
            answer_tokens=args.answer_tokens,
            max_answer_len=args.max_answer_len,
            box_pad_len=args.box_pad_len,
            evidence_consistency=not args.no_evidence_consistency,
            ema_teacher=not args.no_ema_teacher,
            ans_reduction=args.ans_reduction,
            seed=args.seed,
            share_prompts_per_image=args.share_prompts_per_image,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _config_echo(args, config: EngineConfig) -> dict:
    return {
        "command": "adapt",
        "dataset": str(args.dataset),
        "split": args.split,
        "grounding": args.grounding,
        "answerer": args.answerer,
        "out": str(args.out),
        "engine": {
            "epochs": config.mini_epochs,
            "lr_vis": config.optimizer.lr_vis,
            "lr_ans": config.optimizer.lr_ans,
            "ema_decay": config.optimizer.ema_decay,
            "evidence_tokens": config.evidence_tokens,
            "answer_tokens": config.answer_tokens,
            "max_answer_len": config.max_answer_len,
            "box_pad_len": config.box_pad_len,
            "evidence_consistency": config.evidence_consistency,
            "ema_teacher": config.ema_teacher,
            "ans_reduction": config.ans_reduction,
            "seed": config.seed,
            "share_prompts_per_image": config.share_prompts_per_image,
        },
    }


def _apply_config_file(args) -> None:
    """Re-apply a config.json written by a previous adapt run."""
    with open(args.config, "r", encoding="utf-8") as fh:
        echo = json.load(fh)
    args.dataset = args.dataset or echo["dataset"]
    args.split = args.split or echo.get("split")
    args.grounding = echo["grounding"]
    args.answerer = echo["answerer"]
    engine = echo["engine"]
    args.epochs = engine["epochs"]
    args.lr_vis = engine["lr_vis"]
    args.lr_ans = engine["lr_ans"]
    args.ema_decay = engine["ema_decay"]
    args.evidence_tokens = engine["evidence_tokens"]
    args.answer_tokens = engine["answer_tokens"]
    args.max_answer_len = engine["max_answer_len"]
    args.box_pad_len = engine["box_pad_len"]
    args.no_evidence_consistency = not engine["evidence_consistency"]
    args.no_ema_teacher = not engine["ema_teacher"]
    args.ans_reduction = engine["ans_reduction"]
    args.seed = engine["seed"]
    args.share_prompts_per_image = engine["share_prompts_per_image"]


def _effective_id(record: QARecord, index: int) -> str:
    return record.id if record.id is not None else f"rec-{index:06d}"


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, separators=(",", ":"), sort_keys=True) + "\n")


def _write_reports(out_dir: Path, reports) -> None:
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump([r.to_json() for r in reports], fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out_dir / "report.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for report in reports:
            row = report.to_json()
            writer.writerow(
                [
                    "" if row[c] is None else
                    (f"{row[c]:.6f}" if c in ("open_recall", "closed_accuracy") else row[c])
                    for c in REPORT_COLUMNS
                ]
            )


def cmd_adapt(args) -> int:
    if args.config:
        _apply_config_file(args)
    if not args.dataset:
        raise ConfigError("adapt requires --dataset (or --config)")
    config = _engine_config_from_args(args)

    records = load_dataset(args.dataset)
    if args.split:
        records = [r for r in records if r.split == args.split]
    if not records:
        raise DataError(f"no records for split {args.split!r} in {args.dataset}")

    grounding = build_backbone(args.grounding, GROUNDING, seed=config.seed)
    answerer = build_backbone(args.answerer, ANSWERING, seed=config.seed + 1)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(_config_echo(args, config), fh, indent=2, sort_keys=True)
        fh.write("\n")

    indexed = sorted(
        ((_effective_id(r, i), r) for i, r in enumerate(records)), key=lambda p: p[0]
    )

    predictions = []
    trace_rows = []
    natives = []
    adapted = []
    shared_prompts: dict[str, tuple] = {}
    for rid, record in indexed:
        image = load_image(resolve_image_path(args.dataset, record.image))
        native_seq = native_answer(image, record.question, answerer, config)
        native_text = answerer.tokenizer.decode(native_seq.ids)

        final_prompts = {}

        def grab(phase, epoch, state, _sink=final_prompts):
            if phase == "end":
                _sink["prompts"] = (state["prompt_vis"], state["prompt_ans"])

        initial = (
            shared_prompts.get(record.image)
            if config.share_prompts_per_image
            else None
        )
        _, box, trace = run_episode(
            image,
            record.question,
            grounding,
            answerer,
            config,
            initial_prompts=initial,
            observer=grab,
        )
        if config.share_prompts_per_image and "prompts" in final_prompts:
            shared_prompts[record.image] = final_prompts["prompts"]

        natives.append(native_text)
        adapted.append(trace.answer_text)
        predictions.append(
            {
                "id": rid,
                "image": record.image,
                "question": record.question,
                "gold": record.answer,
                "answer_type": record.answer_type,
                "native": native_text,
                "adapted": trace.answer_text,
                "box": list(box.as_tuple()),
                "status": trace.status,
                "abort_reason": trace.abort_reason,
            }
        )
        for entry in trace.entries:
            row = entry.to_json()
            row["id"] = rid
            trace_rows.append(row)

    _write_jsonl(out_dir / "predictions.jsonl", predictions)
    _write_jsonl(out_dir / "traces.jsonl", trace_rows)

    ordered_records = [r for _, r in indexed]
    reports = [
        compute_report(ordered_records, natives, model=args.answerer, condition="native"),
        compute_report(ordered_records, adapted, model=args.answerer, condition="adapted"),
    ]
    _write_reports(out_dir, reports)
    for report in reports:
        print(json.dumps(report.to_json(), sort_keys=True))
    return 0


def _load_predictions(path: str | Path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if "id" not in row:
                raise DataError(f"{path}:{lineno}: prediction line missing 'id'")
            rows.append(row)
    return rows


def cmd_eval(args) -> int:
    if args.check_tables:
        check = check_result_table(
            load_published_results(args.tables) if args.tables else None
        )
        negatives = [d for d in check.deltas if d.delta <= 0]
        print(f"cells checked: {len(check.deltas)}")
        for delta in check.deltas:
            print(json.dumps(delta.to_json(), sort_keys=True))
        for problem in check.problems:
            print(f"problem: {problem}", file=sys.stderr)
        for delta in negatives:
            print(f"non-positive delta: {delta.to_json()}", file=sys.stderr)
        if check.problems or negatives:
            raise DataError("published-results transcription failed consistency checks")
        return 0

    if not args.predictions or not args.dataset:
        raise ConfigError("eval requires --predictions and --dataset")
    records = load_dataset(args.dataset)
    if args.split:
        records = [r for r in records if r.split == args.split]
    by_id = {}
    for i, record in enumerate(records):
        rid = _effective_id(record, i)
        if rid in by_id:
            raise DataError(f"duplicate record id {rid!r} in {args.dataset}")
        by_id[rid] = record

    rows = _load_predictions(args.predictions)
    seen = set()
    aligned_records = []
    for row in rows:
        rid = row["id"]
        if rid not in by_id:
            raise DataError(f"prediction id {rid!r} has no matching record")
        if rid in seen:
            raise DataError(f"duplicate prediction id {rid!r}")
        seen.add(rid)
        aligned_records.append(by_id[rid])
    missing = sorted(set(by_id) - seen)
    if missing:
        raise DataError(f"records without predictions: {', '.join(missing)}")

    reports = []
    for condition in ("native", "adapted"):
        if all(condition in row for row in rows):
            reports.append(
                compute_report(
                    aligned_records,
                    [row[condition] for row in rows],
                    model=args.model,
                    condition=condition,
                )
            )
    if not reports:
        raise DataError("predictions carry neither 'native' nor 'adapted' answers")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_reports(out_dir, reports)
    for report in reports:
        print(json.dumps(report.to_json(), sort_keys=True))
    return 0


def cmd_stats(args) -> int:
    records = load_dataset(args.dataset)
    stats = dataset_statistics(records)
    if not stats:
        stats = {"all": {"images": 0, "qa": 0, "open": 0, "closed": 0}}
    print(json.dumps(stats, indent=2, sort_keys=True))
    if args.check:
        problems = []
        datasets = sorted({r.dataset for r in records})
        for dataset in datasets:
            subset = [r for r in records if r.dataset == dataset]
            for split in sorted({r.split for r in subset}):
                problems.extend(check_split_statistics(subset, dataset, split))
        for problem in problems:
            print(f"mismatch: {problem}", file=sys.stderr)
        if problems:
            raise DataError("split statistics do not match the recorded values")
    return 0


def cmd_convert(args) -> int:
    if args.format == "vqa-rad":
        count = convert_vqa_rad(args.source, args.out)
    elif args.format == "slake":
        if not args.split:
            raise ConfigError("slake conversion requires --split")
        count = convert_slake(args.source, args.out, args.split, language=args.language)
    elif args.format == "pathvqa":
        if not args.split:
            raise ConfigError("pathvqa conversion requires --split")
        count = convert_pathvqa(args.source, args.out, args.split)
    else:
        raise ConfigError(f"unknown format {args.format!r}")
    print(f"wrote {count} records to {args.out}")
    return 0


def cmd_synth(args) -> int:
    path = make_synthetic_dataset(
        args.out, num_records=args.num_records, seed=args.seed, image_size=args.image_size
    )
    print(f"wrote fixture to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="boxttt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    adapt = sub.add_parser("adapt", help="run per-sample adaptation over a record file")
    adapt.add_argument("--dataset", help="canonical JSON-lines record file")
    adapt.add_argument("--split", default=None, help="keep only this split")
    adapt.add_argument("--grounding", default="toy", help="grounding backbone name")
    adapt.add_argument("--answerer", default="toy", help="answering backbone name")
    adapt.add_argument("--epochs", type=int, default=20, help="mini-epochs per sample")
    adapt.add_argument("--lr-vis", type=float, default=1e-3, help="evidence prompt lr")
    adapt.add_argument("--lr-ans", type=float, default=5e-4, help="answer prompt lr")
    adapt.add_argument("--ema-decay", type=float, default=0.9, help="teacher decay")
    adapt.add_argument("--evidence-tokens", type=int, default=24)
    adapt.add_argument("--answer-tokens", type=int, default=32)
    adapt.add_argument("--max-answer-len", type=int, default=128)
    adapt.add_argument("--box-pad-len", type=int, default=32)
    adapt.add_argument(
        "--no-evidence-consistency",
        action="store_true",
        help="single-pass grounding: skip the validation pass",
    )
    adapt.add_argument(
        "--no-ema-teacher",
        action="store_true",
        help="tie the teacher to the student instead of averaging",
    )
    adapt.add_argument("--ans-reduction", choices=("sum", "mean"), default="sum")
    adapt.add_argument("--seed", type=int, default=0)
    adapt.add_argument("--out", required=True, help="output directory")
    adapt.add_argument(
        "--share-prompts-per-image",
        action="store_true",
        help="carry prompts across questions that share an image",
    )
    adapt.add_argument(
        "--config", default=None, help="re-apply a config.json from a previous run"
    )
    adapt.set_defaults(func=cmd_adapt)

    ev = sub.add_parser("eval", help="score predictions or check the result tables")
    ev.add_argument("--predictions", help="predictions.jsonl from an adapt run")
    ev.add_argument("--dataset", help="canonical JSON-lines record file")
    ev.add_argument("--split", default=None)
    ev.add_argument("--model", default="model", help="model name for the report")
    ev.add_argument("--out", default=None, help="directory for report files")
    ev.add_argument(
        "--check-tables",
        action="store_true",
        help="verify the shipped published-results transcription",
    )
    ev.add_argument("--tables", default=None, help="alternative transcription file")
    ev.set_defaults(func=cmd_eval)

    stats = sub.add_parser("stats", help="per-split dataset statistics")
    stats.add_argument("--dataset", required=True)
    stats.add_argument(
        "--check",
        action="store_true",
        help="compare counts against the recorded statistics",
    )
    stats.set_defaults(func=cmd_stats)

    convert = sub.add_parser("convert", help="convert native benchmark files")
    convert.add_argument("--format", required=True, choices=("vqa-rad", "slake", "pathvqa"))
    convert.add_argument("--source", required=True)
    convert.add_argument("--out", required=True)
    convert.add_argument("--split", default=None)
    convert.add_argument("--language", default="en", help="slake language filter")
    convert.set_defaults(func=cmd_convert)

    synth = sub.add_parser("synth", help="write the deterministic toy fixture")
    synth.add_argument("--out", required=True)
    synth.add_argument("--num-records", type=int, default=10)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--image-size", type=int, default=24)
    synth.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    torch.set_num_threads(1)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except BoxtttError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
