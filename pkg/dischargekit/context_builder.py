"""Input contexts, prompt templates, fine-tuning datasets and training manifests."""

import logging
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

from pydantic import BaseModel, ValidationError

from dischargekit.config import settings
from dischargekit.errors import DischargeKitError, InvalidCombination, InvalidValue, NoContext
from dischargekit.models import (
    ContextVariant,
    CorpusRecord,
    DatasetMode,
    DatasetRecord,
    DatasetResult,
    GenerationContext,
    ModelFamily,
    ParsedNote,
    SectionKind,
    SkipEntry,
    TargetKind,
    TrainingManifest,
    TruncationSide,
)
from dischargekit.note_parser import HeaderLexicon, parse_record
from dischargekit.tokenizers import Tokenizer, truncate_text
from dischargekit.utils import ordered_map

log = logging.getLogger(__name__)

INSTRUCTIONS = {
    TargetKind.BHC: "Summarize the below clinical text into a section of brief hospital course.",
    TargetKind.DI: "Summarize the below clinical text into a section of discharge instruction.",
}

RAD_REPORTS = "RadReports"

# provenance label -> section kind
_PART_SECTIONS = {
    "Part1": SectionKind.PART1,
    "BHC": SectionKind.BRIEF_HOSPITAL_COURSE,
    "Part2": SectionKind.PART2,
}

_BASE_PARTS = {
    TargetKind.BHC: ["Part1"],
    TargetKind.DI: ["BHC", "Part2"],
}

TARGET_SECTIONS = {
    TargetKind.BHC: SectionKind.BRIEF_HOSPITAL_COURSE,
    TargetKind.DI: SectionKind.DISCHARGE_INSTRUCTIONS,
}


def report_banner(order_index: int) -> str:
    return f"Radiology Report {order_index + 1}:"


def _radiology_block(note: ParsedNote, separator: str) -> str:
    return separator.join(
        f"{report_banner(r.order_index)}\n{r.text}" for r in note.radiology_reports
    )


def build_context(
    note: ParsedNote,
    target: TargetKind,
    variant: ContextVariant,
    separator: Optional[str] = None,
) -> GenerationContext:
    """Assemble the input text for one (target, variant) pair"""
    target = TargetKind(target)
    variant = ContextVariant(variant)
    separator = settings.context_separator if separator is None else separator

    if variant == ContextVariant.LONG_DI and target != TargetKind.DI:
        raise InvalidCombination("LongDI context is only defined for the DI target", note.note_id)

    pieces: List[str] = []
    parts: List[str] = []
    if variant != ContextVariant.RAD_ONLY:
        labels = (["Part1"] if variant == ContextVariant.LONG_DI else []) + _BASE_PARTS[target]
        for label in labels:
            text = note.section_text(_PART_SECTIONS[label])
            if text:
                pieces.append(text)
                parts.append(label)
        if not pieces:
            raise NoContext(f"no section text for {target.value}/{variant.value}", note.note_id)

    if variant in (ContextVariant.BASE_PLUS_RAD, ContextVariant.RAD_ONLY) and note.radiology_reports:
        pieces.append(_radiology_block(note, separator))
        parts.append(RAD_REPORTS)
    if variant == ContextVariant.RAD_ONLY and not pieces:
        raise NoContext("RadOnly context requested but the note has no radiology reports", note.note_id)

    return GenerationContext(
        note_id=note.note_id,
        target=target,
        variant=variant,
        text=separator.join(pieces),
        parts=parts,
    )


def gold_target(note: ParsedNote, target: TargetKind) -> str:
    """Gold section content with its header stripped"""
    return note.section_body(TARGET_SECTIONS[TargetKind(target)])


def render_prompt(context: GenerationContext, target_text: Optional[str] = None) -> str:
    """Instruction / input / summary template used for decoder-only models"""
    prompt = (
        f"{INSTRUCTIONS[context.target]}\n\n"
        f"### Input:\n"
        f"{context.text.rstrip()}\n\n"  # exactly one blank line before the summary marker
        f"### Summary:\n"
    )
    if target_text is not None:
        prompt += target_text
    return prompt


class DatasetBudgets(BaseModel):
    """Token budgets applied while emitting dataset records; None disables truncation"""

    context: Optional[int] = None
    target: Optional[int] = None
    context_side: TruncationSide = TruncationSide.LEFT
    target_side: TruncationSide = TruncationSide.RIGHT


def _record(
    note: ParsedNote,
    target: TargetKind,
    variant: ContextVariant,
    budgets: Optional[DatasetBudgets],
    tokenizer: Optional[Tokenizer],
) -> DatasetRecord:
    context = build_context(note, target, variant)
    completion = gold_target(note, target)
    if budgets is not None and tokenizer is not None:
        if budgets.context:
            context = context.model_copy(update={
                "text": truncate_text(tokenizer, context.text, budgets.context, budgets.context_side)
            })
        if budgets.target:
            completion = truncate_text(tokenizer, completion, budgets.target, budgets.target_side)
    return DatasetRecord(
        note_id=note.note_id,
        target_kind=target,
        prompt=render_prompt(context),
        completion=completion,
    )


def _targets_for(mode: DatasetMode, target: Optional[TargetKind], variant: ContextVariant) -> List[Tuple[TargetKind, ContextVariant]]:
    if mode == DatasetMode.SPECIALIZED:
        return [(TargetKind(target), variant)]
    # LongDI only extends the DI context; BHC keeps its base context
    bhc_variant = ContextVariant.BASE if variant == ContextVariant.LONG_DI else variant
    return [(TargetKind.BHC, bhc_variant), (TargetKind.DI, variant)]


def emit_dataset(
    corpus: Iterable[Union[CorpusRecord, ParsedNote]],
    variant: ContextVariant,
    mode: DatasetMode = DatasetMode.SPECIALIZED,
    target: Optional[TargetKind] = None,
    budgets: Optional[DatasetBudgets] = None,
    tokenizer: Optional[Tokenizer] = None,
    header_lexicon: Optional[HeaderLexicon] = None,
    jobs: int = 1,
) -> DatasetResult:
    """Emit prompt/completion records in note order; failing notes go to the skip-list"""
    mode = DatasetMode(mode)
    variant = ContextVariant(variant)
    if mode == DatasetMode.SPECIALIZED and target is None:
        raise InvalidValue("Specialized datasets need a target")
    plan = _targets_for(mode, target, variant)

    def build(item) -> Union[List[DatasetRecord], SkipEntry]:
        note_id = item.note_id
        try:
            note = item if isinstance(item, ParsedNote) else parse_record(item, header_lexicon)
            return [_record(note, t, v, budgets, tokenizer) for t, v in plan]
        except DischargeKitError as e:
            log.warning("Skipping note %s: %s", note_id, e)
            return SkipEntry(note_id=note_id, error=type(e).__name__, message=str(e))

    records: List[DatasetRecord] = []
    skipped: List[SkipEntry] = []
    for outcome in ordered_map(build, corpus, jobs):
        if isinstance(outcome, SkipEntry):
            skipped.append(outcome)
        else:
            records.extend(outcome)
    log.info("Emitted %d records, skipped %d notes", len(records), len(skipped))
    return DatasetResult(records=records, skipped=skipped)


_FAMILY_DEFAULTS = {
    ModelFamily.DECODER: {"learning_rate": 2e-4, "lora_target": "all linear layers"},
    ModelFamily.ENCODER_DECODER: {"learning_rate": 5e-5, "lora_target": "none (full fine-tuning)"},
}


def build_training_manifest(overrides: Optional[Dict[str, Any]] = None) -> TrainingManifest:
    """Training hyperparameters with overrides applied on top of the defaults"""
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    family = ModelFamily(overrides.get("model_family", ModelFamily.DECODER))
    values = {**_FAMILY_DEFAULTS[family], **overrides, "model_family": family}
    try:
        return TrainingManifest(**values)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(p) for p in first["loc"])
        raise InvalidValue(f"{field}: {first['msg']}")
