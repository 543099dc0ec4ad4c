"""Command-line entry point: `python -m dischargekit <command> ...`"""

import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from dischargekit.adapter_merge import (
    LoraAdapter,
    apply_delta,
    compose_delta,
    load_tensor_map,
    lora_merge,
    save_tensor_map,
    task_vector,
    ties_merge,
    ties_merge_adapters,
)
from dischargekit.config import Settings, load_settings, settings
from dischargekit.context_builder import (
    DatasetBudgets,
    build_context,
    build_training_manifest,
    emit_dataset,
    gold_target,
    render_prompt,
)
from dischargekit.decode_engine import LanguageModel, decode, load_toy_lm
from dischargekit.errors import DischargeKitError, InvalidValue, VocabMismatch
from dischargekit.eval_metrics import (
    evaluate_run,
    render_leaderboard,
    render_report_table,
    report_from_percent,
)
from dischargekit.models import (
    ContextVariant,
    DatasetMode,
    DecodeAlgorithm,
    DecodeConfig,
    MetricName,
    MetricReport,
    ModelFamily,
    SkipEntry,
    TargetKind,
    TiesConfig,
    TokenBudgetPolicy,
    TruncationSide,
)
from dischargekit.note_parser import HeaderLexicon, load_header_lexicon, parse_record
from dischargekit.run_manifest import RunTimer, build_run_manifest, write_run_manifest
from dischargekit.scorer_client import ProcessLanguageModel, ProviderProcess, default_providers
from dischargekit.token_budget import budget_report
from dischargekit.tokenizers import Tokenizer
from dischargekit.utils import (
    atomic_write_text,
    dumps,
    load_corpus,
    ordered_map,
    read_jsonl,
    write_json,
    write_jsonl,
)

log = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit status 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _csv_floats(value: str) -> List[float]:
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {value!r}")


def _key_value(value: str) -> Tuple[str, str]:
    key, sep, raw = value.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {value!r}")
    return key.strip(), raw.strip()


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="dischargekit", description="Discharge summary generation toolkit")
    parser.add_argument("--config", help="KEY=VALUE configuration file")
    parser.add_argument("--seed", type=int, help="Random seed")
    parser.add_argument("--jobs", type=int, help="Worker threads for per-note work")
    parser.add_argument("--log-level", help="Logging level (DEBUG, INFO, WARNING, ...)")
    parser.add_argument("--tokenizer", help="Tokenizer JSON file (default: whitespace)")
    commands = parser.add_subparsers(dest="command", required=True)

    def corpus_command(name: str, help_text: str) -> ArgumentParser:
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--corpus", required=True, help="Line-delimited JSON corpus")
        sub.add_argument("--lexicon", help="Header lexicon file")
        sub.add_argument("--output", help="Output file (default: stdout)")
        return sub

    corpus_command("parse", "Segment notes and report their sections")

    sub = corpus_command("contexts", "Build generation contexts")
    sub.add_argument("--target", required=True, choices=[t.value for t in TargetKind])
    sub.add_argument("--variant", default=ContextVariant.BASE.value, choices=[v.value for v in ContextVariant])

    sub = corpus_command("dataset", "Emit fine-tuning prompt/completion records")
    sub.add_argument("--variant", default=ContextVariant.BASE.value, choices=[v.value for v in ContextVariant])
    sub.add_argument("--mode", default=DatasetMode.SPECIALIZED.value, choices=[m.value for m in DatasetMode])
    sub.add_argument("--target", choices=[t.value for t in TargetKind])
    sub.add_argument("--context-budget", type=int, help="Truncate contexts to this many tokens")
    sub.add_argument("--target-budget", type=int, help="Truncate completions to this many tokens")

    sub = corpus_command("budget", "Percentile token budgets over a corpus")
    sub.add_argument("--percentile", type=float)
    sub.add_argument("--multiple", type=int)

    sub = commands.add_parser("manifest", help="Training hyperparameter manifest")
    sub.add_argument("--family", default=ModelFamily.DECODER.value, choices=[f.value for f in ModelFamily])
    sub.add_argument("--budget-report", help="Take token limits from a budget report")
    sub.add_argument("--target", default=TargetKind.BHC.value, choices=[t.value for t in TargetKind])
    sub.add_argument("--set", dest="overrides", action="append", type=_key_value, default=[], metavar="KEY=VALUE")
    sub.add_argument("--output")

    sub = commands.add_parser("decode", help="Decode summaries for a contexts file")
    sub.add_argument("--contexts", required=True, help="Output of the contexts command")
    sub.add_argument("--algo", default=DecodeAlgorithm.GREEDY.value, choices=[a.value for a in DecodeAlgorithm])
    sub.add_argument("--lm", help="Table-driven model JSON")
    sub.add_argument("--lm2", help="Second model for ensemble decoding")
    sub.add_argument("--provider", help="Provider command serving a model (default from settings)")
    sub.add_argument("--max-new-tokens", type=int)
    sub.add_argument("--beam-width", type=int)
    sub.add_argument("--top-p", type=float)
    sub.add_argument("--top-k", type=int)
    sub.add_argument("--alpha", type=float)
    sub.add_argument("--length-penalty", type=float)
    sub.add_argument("--trace", action="store_true", help="Include per-step candidate traces")
    sub.add_argument("--output")

    sub = commands.add_parser("merge-lora", help="Merge a LoRA adapter into base weights")
    sub.add_argument("--base", help="Base weights (not needed with --delta-only)")
    sub.add_argument("--adapter", required=True)
    sub.add_argument("--alpha", type=int)
    sub.add_argument("--rank", type=int)
    sub.add_argument("--delta-only", action="store_true", help="Write (alpha/r)*B@A instead of merged weights")
    sub.add_argument("--output", required=True)

    sub = commands.add_parser("merge-ties", help="TIES-merge tensor maps or adapters")
    sub.add_argument("inputs", nargs="+")
    sub.add_argument("--mode", default="tensors", choices=["tensors", "adapters", "task-vector", "delta"])
    sub.add_argument("--base", help="Base weights for task-vector and delta modes")
    sub.add_argument("--density", type=float)
    sub.add_argument("--weights", type=_csv_floats)
    sub.add_argument("--lambda", dest="lam", type=float)
    sub.add_argument("--alpha", type=int, help="LoRA alpha for adapters mode")
    sub.add_argument("--output", required=True)

    sub = commands.add_parser("eval", help="Score hypotheses or aggregate published rows")
    source = sub.add_mutually_exclusive_group(required=True)
    source.add_argument("--pairs", nargs="+", help="JSONL files with target, hypothesis, reference")
    source.add_argument("--scores", help="JSON with percent-scale combined or bhc/di rows")
    sub.add_argument("--metrics", nargs="+", choices=[m.value for m in MetricName])
    sub.add_argument("--scorer", help="External scorer command (default from settings)")
    sub.add_argument("--label")
    sub.add_argument("--decimals", type=int, default=2)
    sub.add_argument("--output", help="Write the report JSON here")

    sub = commands.add_parser("report", help="Rank report files into a leaderboard")
    sub.add_argument("reports", nargs="+")
    sub.add_argument("--decimals", type=int, default=2)
    sub.add_argument("--output")

    return parser


def _configure(args) -> Settings:
    overrides = {
        "seed": args.seed,
        "jobs": args.jobs,
        "log_level": args.log_level,
        "tokenizer_path": args.tokenizer,
    }
    try:
        cfg = load_settings(args.config, **overrides)
    except ValidationError as e:
        first = e.errors()[0]
        raise InvalidValue(f"configuration {'.'.join(str(p) for p in first['loc'])}: {first['msg']}")
    settings.update_from(cfg)
    logging.basicConfig(level=cfg.log_level.upper(), format=LOG_FORMAT, stream=sys.stderr, force=True)
    return cfg


def _lexicon(args, cfg: Settings) -> Optional[HeaderLexicon]:
    path = getattr(args, "lexicon", None) or cfg.header_lexicon_path
    return load_header_lexicon(path) if path else None


def _tokenizer(cfg: Settings) -> Tokenizer:
    return Tokenizer.from_file(cfg.tokenizer_path) if cfg.tokenizer_path else Tokenizer.whitespace()


def _emit_rows(args, rows: Sequence[Any]) -> List[str]:
    if args.output:
        return [write_jsonl(args.output, rows)]
    for row in rows:
        sys.stdout.write(dumps(row) + "\n")
    return []


def _emit_json(args, value: Any) -> List[str]:
    if args.output:
        return [write_json(args.output, value)]
    sys.stdout.write(json.dumps(json.loads(dumps(value)), indent=2, sort_keys=True) + "\n")
    return []


def _read_json_object(path: str) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as handle:
        value = json.load(handle)
    if not isinstance(value, dict):
        raise InvalidValue(f"{path}: expected a JSON object, got {type(value).__name__}")
    return value


def _write_skipped(args, skipped: Sequence[SkipEntry]) -> List[str]:
    if skipped:
        log.warning("%d note(s) skipped", len(skipped))
    if args.output:
        return [write_jsonl(args.output + ".skipped.jsonl", skipped)]
    for entry in skipped:
        sys.stderr.write(f"skipped {entry.note_id}: {entry.error}: {entry.message}\n")
    return []


def _per_note(corpus, lexicon, jobs: int, fn):
    """Apply fn(note) to every record, collecting failures as skip entries"""
    def run(record):
        try:
            return fn(parse_record(record, lexicon))
        except DischargeKitError as e:
            log.warning("Skipping note %s: %s", record.note_id, e)
            return SkipEntry(note_id=record.note_id, error=type(e).__name__, message=str(e))

    rows, skipped = [], []
    for outcome in ordered_map(run, corpus, jobs):
        (skipped if isinstance(outcome, SkipEntry) else rows).append(outcome)
    return rows, skipped


def cmd_parse(args, cfg: Settings):
    corpus = load_corpus(args.corpus)

    def summary(note):
        return {
            "note_id": note.note_id,
            "radiology_reports": len(note.radiology_reports),
            "sections": [
                span.model_dump(mode="json", include={"kind", "header_text", "start", "end", "body_start"})
                for span in note.sections
            ],
        }

    rows, skipped = _per_note(corpus, _lexicon(args, cfg), cfg.jobs, summary)
    log.info("Parsed %d of %d notes", len(rows), len(corpus))
    return [args.corpus], _emit_rows(args, rows) + _write_skipped(args, skipped)


def cmd_contexts(args, cfg: Settings):
    corpus = load_corpus(args.corpus)
    target, variant = TargetKind(args.target), ContextVariant(args.variant)

    def row(note):
        context = build_context(note, target, variant)
        return {
            **context.model_dump(mode="json"),
            "prompt": render_prompt(context),
            "reference": gold_target(note, target),
        }

    rows, skipped = _per_note(corpus, _lexicon(args, cfg), cfg.jobs, row)
    return [args.corpus], _emit_rows(args, rows) + _write_skipped(args, skipped)


def cmd_dataset(args, cfg: Settings):
    corpus = load_corpus(args.corpus)
    budgets = DatasetBudgets(
        context=args.context_budget,
        target=args.target_budget,
        context_side=TruncationSide(cfg.context_truncation),
        target_side=TruncationSide(cfg.target_truncation),
    )
    result = emit_dataset(
        corpus,
        ContextVariant(args.variant),
        DatasetMode(args.mode),
        TargetKind(args.target) if args.target else None,
        budgets=budgets,
        tokenizer=_tokenizer(cfg),
        header_lexicon=_lexicon(args, cfg),
        jobs=cfg.jobs,
    )
    return [args.corpus], _emit_rows(args, result.records) + _write_skipped(args, result.skipped)


def cmd_budget(args, cfg: Settings):
    corpus = load_corpus(args.corpus)
    policy = TokenBudgetPolicy(
        percentile=args.percentile if args.percentile is not None else cfg.budget_percentile,
        multiple=args.multiple if args.multiple is not None else cfg.budget_multiple,
    )
    report = budget_report(corpus, _tokenizer(cfg), policy, _lexicon(args, cfg), cfg.jobs)
    for name, value in report.budgets.items():
        log.info("%s: %d tokens", name, value)
    return [args.corpus], _emit_json(args, report)


def cmd_manifest(args, cfg: Settings):
    overrides: Dict[str, Any] = {
        "model_family": args.family,
        "lora_rank": cfg.lora_rank,
        "lora_alpha": cfg.lora_alpha,
    }
    inputs = []
    if args.budget_report:
        inputs.append(args.budget_report)
        budgets = _read_json_object(args.budget_report).get("budgets", {})
        if not isinstance(budgets, dict):
            raise InvalidValue(f"{args.budget_report}: budgets must be an object")
        target = TargetKind(args.target)
        context_key = f"context.{target.value}.{ContextVariant.BASE.value}"
        for field, key in (("max_input_tokens", context_key), ("max_output_tokens", f"target.{target.value}")):
            if key in budgets:
                overrides[field] = budgets[key]
    overrides.update(dict(args.overrides))
    return inputs, _emit_json(args, build_training_manifest(overrides))


def _decode_config(args, cfg: Settings) -> DecodeConfig:
    def pick(flag, default):
        return flag if flag is not None else default

    try:
        return DecodeConfig(
            max_new_tokens=pick(args.max_new_tokens, cfg.max_new_tokens),
            beam_width=pick(args.beam_width, cfg.beam_width),
            nucleus_p=pick(args.top_p, cfg.nucleus_p),
            contrastive_k=pick(args.top_k, cfg.contrastive_k),
            contrastive_alpha=pick(args.alpha, cfg.contrastive_alpha),
            length_penalty=pick(args.length_penalty, cfg.length_penalty),
            seed=cfg.seed,
        )
    except ValidationError as e:
        first = e.errors()[0]
        raise InvalidValue(f"decode option {first['loc'][0]}: {first['msg']}")


def _language_models(args, cfg: Settings) -> Tuple[LanguageModel, Optional[LanguageModel], List[ProviderProcess]]:
    processes: List[ProviderProcess] = []
    provider_cmd = args.provider or cfg.provider_cmd
    if args.lm:
        lm: LanguageModel = load_toy_lm(args.lm)
    elif provider_cmd:
        process = ProviderProcess(provider_cmd)
        processes.append(process)
        lm = ProcessLanguageModel(process)
    else:
        raise InvalidValue("decode needs --lm or a provider command")
    second = load_toy_lm(args.lm2) if args.lm2 else None
    if DecodeAlgorithm(args.algo) == DecodeAlgorithm.ENSEMBLE and second is None:
        raise InvalidValue("ensemble decoding needs --lm2")
    return lm, second, processes


def cmd_decode(args, cfg: Settings):
    decode_cfg = _decode_config(args, cfg)
    tokenizer = _tokenizer(cfg)
    lm, second, processes = _language_models(args, cfg)
    if tokenizer.vocab_size != lm.vocab_size:
        raise VocabMismatch(f"tokenizer has {tokenizer.vocab_size} ids, model has {lm.vocab_size}")
    algorithm = DecodeAlgorithm(args.algo)
    rows = list(read_jsonl(args.contexts))

    def run(row):
        note_id = str(row.get("note_id", "?"))
        try:
            prefix = tokenizer.encode(row["prompt"])
            trace = decode(algorithm, lm, prefix, decode_cfg, second_lm=second)
        except KeyError as e:
            return SkipEntry(note_id=note_id, error="MalformedRow", message=f"missing field {e}")
        except DischargeKitError as e:
            log.warning("Skipping note %s: %s", note_id, e)
            return SkipEntry(note_id=note_id, error=type(e).__name__, message=str(e))
        out = {
            "note_id": note_id,
            "target_kind": row.get("target"),
            "variant": row.get("variant"),
            "algorithm": algorithm.value,
            "tokens": trace.tokens,
            "text": tokenizer.decode(trace.tokens),
            "stop_reason": trace.stop_reason.value,
            "reference": row.get("reference", ""),
        }
        if args.trace:
            out["steps"] = [step.model_dump(mode="json") for step in trace.steps]
        return out

    try:
        outcomes = ordered_map(run, rows, cfg.jobs)
    finally:
        for process in processes:
            process.close()
    decoded = [o for o in outcomes if not isinstance(o, SkipEntry)]
    skipped = [o for o in outcomes if isinstance(o, SkipEntry)]
    log.info("Decoded %d of %d contexts with %s", len(decoded), len(rows), algorithm.value)
    inputs = [args.contexts] + [p for p in (args.lm, args.lm2, cfg.tokenizer_path) if p]
    return inputs, _emit_rows(args, decoded) + _write_skipped(args, skipped)


def cmd_merge_lora(args, cfg: Settings):
    alpha = args.alpha if args.alpha is not None else cfg.lora_alpha
    adapter = LoraAdapter.from_tensor_map(load_tensor_map(args.adapter), alpha=alpha, rank=args.rank)
    if args.delta_only:
        merged = compose_delta(adapter)
    elif args.base:
        merged = lora_merge(load_tensor_map(args.base), adapter)
    else:
        raise InvalidValue("merge-lora needs --base unless --delta-only is given")
    save_tensor_map(merged, args.output)
    log.info("Wrote %d tensors to %s", len(merged), args.output)
    return [p for p in (args.base, args.adapter) if p], [args.output]


def cmd_merge_ties(args, cfg: Settings):
    ties_cfg = TiesConfig(
        density=args.density if args.density is not None else cfg.ties_density,
        weights=args.weights,
        lam=args.lam if args.lam is not None else cfg.ties_lambda,
    )
    maps = [load_tensor_map(path) for path in args.inputs]
    inputs = list(args.inputs)
    if args.mode in ("task-vector", "delta"):
        if not args.base:
            raise InvalidValue(f"--mode {args.mode} needs --base")
        inputs.append(args.base)
        base = load_tensor_map(args.base)
        deltas = [task_vector(base, m) for m in maps] if args.mode == "task-vector" else maps
        merged = apply_delta(base, ties_merge(deltas, ties_cfg))
    elif args.mode == "adapters":
        alpha = args.alpha if args.alpha is not None else cfg.lora_alpha
        adapters = [LoraAdapter.from_tensor_map(m, alpha=alpha) for m in maps]
        merged = ties_merge_adapters(adapters, ties_cfg).to_tensor_map()
    else:
        merged = ties_merge(maps, ties_cfg)
    save_tensor_map(merged, args.output)
    return inputs, [args.output]


def _read_pairs(paths: Sequence[str]) -> Dict[TargetKind, List[Tuple[str, str]]]:
    pairs: Dict[TargetKind, List[Tuple[str, str]]] = {TargetKind.BHC: [], TargetKind.DI: []}
    for path in paths:
        for index, row in enumerate(read_jsonl(path)):
            try:
                target = TargetKind(row["target_kind"])
                pairs[target].append((str(row["text"]), str(row["reference"])))
            except (KeyError, ValueError, TypeError) as e:
                raise InvalidValue(f"{path}: row {index} needs target_kind, text and reference ({e})")
    return pairs


def cmd_eval(args, cfg: Settings):
    if args.scores:
        rows = _read_json_object(args.scores)
        report = report_from_percent(
            combined=rows.get("combined"),
            bhc=rows.get("bhc"),
            di=rows.get("di"),
            label=args.label or rows.get("label"),
        )
        inputs = [args.scores]
    else:
        pairs = _read_pairs(args.pairs)
        metrics = [MetricName(m) for m in args.metrics] if args.metrics else None
        providers = default_providers(args.scorer if args.scorer is not None else cfg.scorer_cmd)
        try:
            report = evaluate_run(pairs[TargetKind.BHC], pairs[TargetKind.DI], metrics, providers, label=args.label)
        finally:
            for scorer in {id(p): p for p in providers.values()}.values():
                scorer.close()
        inputs = list(args.pairs)
    sys.stdout.write(render_report_table(report, args.decimals))
    outputs = [write_json(args.output, report)] if args.output else []
    return inputs, outputs


def cmd_report(args, cfg: Settings):
    reports = []
    for path in args.reports:
        with open(path, "r", encoding="utf-8") as handle:
            report = MetricReport.model_validate(json.load(handle))
        if report.label is None:
            report = report.model_copy(update={"label": os.path.splitext(os.path.basename(path))[0]})
        reports.append(report)
    table = render_leaderboard(reports, args.decimals)
    if args.output:
        return list(args.reports), [atomic_write_text(args.output, table)]
    sys.stdout.write(table)
    return list(args.reports), []


COMMANDS = {
    "parse": cmd_parse,
    "contexts": cmd_contexts,
    "dataset": cmd_dataset,
    "budget": cmd_budget,
    "manifest": cmd_manifest,
    "decode": cmd_decode,
    "merge-lora": cmd_merge_lora,
    "merge-ties": cmd_merge_ties,
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    timer = RunTimer()
    try:
        cfg = _configure(args)
        inputs, outputs = COMMANDS[args.command](args, cfg)
        if outputs:
            run = build_run_manifest(
                command=" ".join(["dischargekit"] + argv),
                config=cfg.model_dump(mode="json"),
                inputs=inputs,
                outputs=outputs,
                duration_seconds=timer.elapsed,
            )
            write_run_manifest(run)
    except DischargeKitError as e:
        log.error("%s", e)
        sys.stderr.write(f"error: {e}\n")
        return e.exit_code
    except (ValidationError, ValueError) as e:
        sys.stderr.write(f"error: {e}\n")
        return 1
    except OSError as e:
        sys.stderr.write(f"error: {e}\n")
        return 2
    except Exception as e:
        log.exception("Unexpected failure in %s", args.command)
        sys.stderr.write(f"internal error: {e}\n")
        return 2
    return 0
