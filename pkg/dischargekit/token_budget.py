"""Token counting, percentile budgets and truncation."""

import logging
import math
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Union

from dischargekit.context_builder import build_context, gold_target
from dischargekit.errors import DischargeKitError, EmptyCounts, InvalidValue
from dischargekit.models import (
    ContextVariant,
    CorpusRecord,
    ParsedNote,
    SkipEntry,
    TargetKind,
    TokenBudgetPolicy,
    TokenBudgetReport,
    TruncationSide,
)
from dischargekit.note_parser import HeaderLexicon, parse_record
from dischargekit.tokenizers import Tokenizer
from dischargekit.utils import ordered_map

log = logging.getLogger(__name__)

CONTEXT_FIELDS = [
    (TargetKind.BHC, ContextVariant.BASE),
    (TargetKind.DI, ContextVariant.BASE),
    (TargetKind.DI, ContextVariant.LONG_DI),
    (TargetKind.BHC, ContextVariant.BASE_PLUS_RAD),
    (TargetKind.DI, ContextVariant.BASE_PLUS_RAD),
    (TargetKind.BHC, ContextVariant.RAD_ONLY),
    (TargetKind.DI, ContextVariant.RAD_ONLY),
]
TARGET_FIELDS = [TargetKind.BHC, TargetKind.DI]

# fields that only exist when the corpus carries radiology reports
OPTIONAL_FIELDS = {f"context.{t.value}.{ContextVariant.RAD_ONLY.value}" for t in TargetKind}


def context_field(target: TargetKind, variant: ContextVariant) -> str:
    return f"context.{target.value}.{variant.value}"


def target_field(target: TargetKind) -> str:
    return f"target.{target.value}"


def count_tokens(tokenizer: Tokenizer, text: str) -> int:
    return len(tokenizer.tokenize(text))


def round_up(value: int, multiple: int) -> int:
    """Next multiple at or above value; zero maps to one multiple"""
    if value <= 0:
        return multiple
    return -(-value // multiple) * multiple


def nearest_rank(counts: Sequence[int], percentile: float) -> int:
    ordered = sorted(counts)
    # exact rational product so that e.g. 0.85 * 100 ranks at 85, not 86
    rank = max(1, math.ceil(Fraction(str(percentile)) * len(ordered)))
    return ordered[rank - 1]


def percentile_budget(counts: Sequence[int], policy: Optional[TokenBudgetPolicy] = None) -> int:
    """Nearest-rank percentile of the counts, rounded up to the policy multiple"""
    policy = policy or TokenBudgetPolicy()
    if not counts:
        raise EmptyCounts()
    if any(c < 0 for c in counts):
        raise InvalidValue("token counts must be non-negative")
    return round_up(nearest_rank(counts, policy.percentile), policy.multiple)


def truncate_to_budget(token_ids: Sequence[int], budget: int, side: TruncationSide) -> List[int]:
    """Keep at most budget ids; left drops the prefix, right drops the suffix"""
    if budget <= 0:
        raise InvalidValue("budget must be positive")
    ids = list(token_ids)
    if len(ids) <= budget:
        return ids
    if TruncationSide(side) == TruncationSide.LEFT:
        return ids[-budget:]
    return ids[:budget]


def _note_counts(note: ParsedNote, tokenizer: Tokenizer) -> Dict[str, int]:
    counts = {}
    for target, variant in CONTEXT_FIELDS:
        try:
            context = build_context(note, target, variant)
        except DischargeKitError:
            continue
        counts[context_field(target, variant)] = count_tokens(tokenizer, context.text)
    for target in TARGET_FIELDS:
        counts[target_field(target)] = count_tokens(tokenizer, gold_target(note, target))
    return counts


def budget_report(
    corpus: Iterable[Union[CorpusRecord, ParsedNote]],
    tokenizer: Tokenizer,
    policy: Optional[TokenBudgetPolicy] = None,
    header_lexicon: Optional[HeaderLexicon] = None,
    jobs: int = 1,
) -> TokenBudgetReport:
    """Budgets for every context variant and target over a corpus"""
    policy = policy or TokenBudgetPolicy()
    fields = [context_field(t, v) for t, v in CONTEXT_FIELDS] + [target_field(t) for t in TARGET_FIELDS]

    def count(item):
        try:
            note = item if isinstance(item, ParsedNote) else parse_record(item, header_lexicon)
            return _note_counts(note, tokenizer)
        except DischargeKitError as e:
            log.warning("Skipping note %s: %s", item.note_id, e)
            return SkipEntry(note_id=item.note_id, error=type(e).__name__, message=str(e))

    counts: Dict[str, List[int]] = {name: [] for name in fields}
    skipped_notes: List[SkipEntry] = []
    for outcome in ordered_map(count, corpus, jobs):
        if isinstance(outcome, SkipEntry):
            skipped_notes.append(outcome)
            continue
        for name, value in outcome.items():
            counts[name].append(value)

    budgets: Dict[str, int] = {}
    skipped_fields: List[str] = []
    for name in fields:
        if not counts[name]:
            if name in OPTIONAL_FIELDS:
                skipped_fields.append(name)
                continue
            raise EmptyCounts(name)
        budgets[name] = percentile_budget(counts[name], policy)

    return TokenBudgetReport(
        policy=policy,
        budgets=budgets,
        counts={name: values for name, values in counts.items() if values},
        skipped_fields=skipped_fields,
        skipped_notes=skipped_notes,
    )
