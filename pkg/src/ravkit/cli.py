"""Batch command surface: validate a manifest, evaluate stored outputs,
or replay the bundled worked example.

Exit codes: 0 success, 2 manifest error, 3 config/plugin error, 4 eval
task/input mismatch, 5 worked-example replay mismatch.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .evalkit import (
    EvalInputError,
    ablation_report,
    fidelity_reliability,
    layout_eval,
    recovery_rate,
    table_structure_eval,
)
from .ingest import ManifestError, load_manifest
from .model import BoundingBox, RavConfig, TableEntity, ValidationTrace, canonical_json
from .orchestrate import AblationError, derive_ablation_context, process_document, resolve_plugins
from .walkthrough import replay_walkthrough

EXIT_OK = 0
EXIT_MANIFEST = 2
EXIT_CONFIG = 3
EXIT_EVAL = 4
EXIT_REPLAY = 5


class CliError(RuntimeError):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _load_config(args) -> RavConfig:
    doc = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config: {exc}", EXIT_CONFIG) from exc
    # layering: built-in defaults <- config file <- command-line flags
    if getattr(args, "seed", None) is not None:
        doc["seed"] = args.seed
    if getattr(args, "containment_threshold", None) is not None:
        doc["containment_threshold"] = args.containment_threshold
    try:
        return RavConfig.from_dict(doc)
    except (ValueError, TypeError) as exc:
        raise CliError(f"bad config: {exc}", EXIT_CONFIG) from exc


def _write(out_dir: Path, name: str, text: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(text, encoding="utf-8")


def _jsonl(items) -> str:
    return "".join(canonical_json(i.to_json()) + "\n" for i in items)


def cmd_validate(args) -> int:
    config = _load_config(args)
    try:
        manifest = load_manifest(args.manifest)
    except ManifestError as exc:
        print(f"manifest error: {exc}", file=sys.stderr)
        return EXIT_MANIFEST
    try:
        plugin_set = resolve_plugins(config)
    except (ValueError, KeyError, OSError) as exc:
        print(f"plugin error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    records, traces, summary = process_document(
        manifest, plugin_set, config, jobs=args.jobs
    )
    out = Path(args.out)
    _write(out, "records.jsonl", _jsonl(records))
    _write(out, "traces.jsonl", _jsonl(traces))
    _write(out, "summary.json", canonical_json(summary) + "\n")
    if args.mode != "full":
        # derived view only; the stored full-mode traces above are untouched
        contexts = derive_ablation_context(traces, args.mode, config)
        _write(out, f"context_{args.mode}.json", canonical_json(contexts) + "\n")
    print(canonical_json(summary))
    return EXIT_OK


def _read_json(path, what: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read {what}: {exc}", EXIT_EVAL) from exc


def _read_traces(path) -> list:
    traces = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    traces.append(ValidationTrace.from_json(json.loads(line)))
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise CliError(f"cannot read traces: {exc}", EXIT_EVAL) from exc
    return traces


def _regions_from_doc(doc, what: str):
    try:
        return [(BoundingBox.from_json(r["bbox"]), str(r["class"])) for r in doc]
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"bad {what} region list: {exc}", EXIT_EVAL) from exc


def cmd_eval(args) -> int:
    try:
        if args.task == "layout":
            if not (args.pred and args.truth):
                raise CliError("layout needs --pred and --truth", EXIT_EVAL)
            report = layout_eval(
                _regions_from_doc(_read_json(args.pred, "predictions"), "predicted"),
                _regions_from_doc(_read_json(args.truth, "ground truth"), "ground-truth"),
                iou_threshold=args.iou_threshold,
            )
        elif args.task == "table":
            if not (args.pred and args.truth):
                raise CliError("table needs --pred and --truth", EXIT_EVAL)
            try:
                pred = TableEntity.from_json(_read_json(args.pred, "predictions"))
                truth = TableEntity.from_json(_read_json(args.truth, "ground truth"))
            except (KeyError, TypeError, ValueError) as exc:
                raise CliError(f"bad table payload: {exc}", EXIT_EVAL) from exc
            report = table_structure_eval(pred, truth)
        elif args.task == "reliability":
            if not args.pairs:
                raise CliError("reliability needs --pairs", EXIT_EVAL)
            doc = _read_json(args.pairs, "pairs")
            try:
                pairs = [(float(p["fidelity"]), float(p["quality"])) for p in doc]
            except (KeyError, TypeError, ValueError) as exc:
                raise CliError(f"bad pairs file: {exc}", EXIT_EVAL) from exc
            report = fidelity_reliability(pairs, correctness_cutoff=args.correctness_cutoff)
        elif args.task == "recovery":
            if not args.traces:
                raise CliError("recovery needs --traces", EXIT_EVAL)
            report = recovery_rate(_read_traces(args.traces))
        elif args.task == "ablation":
            if not args.answers:
                raise CliError("ablation needs --answers", EXIT_EVAL)
            doc = _read_json(args.answers, "answers")
            if not isinstance(doc, dict):
                raise CliError("answers file must map mode -> answer list", EXIT_EVAL)
            report = ablation_report(doc)
        else:  # pragma: no cover - argparse restricts choices
            raise CliError(f"unknown task {args.task!r}", EXIT_EVAL)
    except (EvalInputError, AblationError) as exc:
        print(f"eval error: {exc}", file=sys.stderr)
        return EXIT_EVAL
    except CliError as exc:
        print(f"eval error: {exc}", file=sys.stderr)
        return exc.code
    text = canonical_json(report) + "\n"
    if args.out:
        _write(Path(args.out), f"eval_{args.task}.json", text)
    print(text, end="")
    return EXIT_OK


def cmd_replay_walkthrough(args) -> int:
    report, diffs = replay_walkthrough(jobs=args.jobs)
    if args.out:
        _write(Path(args.out), "walkthrough_replay.json", canonical_json(report) + "\n")
    for row in report["regions"]:
        print(canonical_json(row))
    if diffs:
        print("replay mismatch:", file=sys.stderr)
        for d in diffs:
            print(f"  {d}", file=sys.stderr)
        return EXIT_REPLAY
    print("replay matched all pinned outcomes")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ravkit",
        description="Score document extractions by reconstructing them against source crops.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="run the validation pipeline on a region manifest")
    p_val.add_argument("--manifest", required=True)
    p_val.add_argument("--config", default=None)
    p_val.add_argument("--out", required=True)
    p_val.add_argument("--jobs", type=int, default=1)
    p_val.add_argument("--seed", type=int, default=None)
    p_val.add_argument("--containment-threshold", type=float, default=None)
    p_val.add_argument("--mode", choices=("full", "gate_only", "no_rav"), default="full")
    p_val.set_defaults(fn=cmd_validate)

    p_eval = sub.add_parser("eval", help="compute evaluation reports from stored outputs")
    p_eval.add_argument("task", choices=("layout", "table", "reliability", "recovery", "ablation"))
    p_eval.add_argument("--pred", default=None)
    p_eval.add_argument("--truth", default=None)
    p_eval.add_argument("--pairs", default=None)
    p_eval.add_argument("--traces", default=None)
    p_eval.add_argument("--answers", default=None)
    p_eval.add_argument("--out", default=None)
    p_eval.add_argument("--iou-threshold", type=float, default=0.5)
    p_eval.add_argument("--correctness-cutoff", type=float, default=0.1)
    p_eval.set_defaults(fn=cmd_eval)

    p_replay = sub.add_parser(
        "replay-walkthrough", help="re-run the bundled worked example against pinned outcomes"
    )
    p_replay.add_argument("--out", default=None)
    p_replay.add_argument("--jobs", type=int, default=1)
    p_replay.set_defaults(fn=cmd_replay_walkthrough)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
