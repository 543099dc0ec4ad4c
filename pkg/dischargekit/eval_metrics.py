"""Lexical metrics, external-scorer delegation and leaderboard aggregation.

Values are kept in [0, 1] and multiplied by 100 only when rendered.
"""

import logging
from collections import Counter
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from nltk.stem.porter import PorterStemmer
from nltk.translate.bleu_score import SmoothingFunction, sentence_bleu

from dischargekit.errors import InvalidValue
from dischargekit.models import (
    EXTERNAL_METRICS,
    METRIC_ORDER,
    MetricName,
    MetricReport,
    MetricValue,
    TargetKind,
)
from dischargekit.tokenizers import split_words

log = logging.getLogger(__name__)

Pair = Tuple[str, str]

_stemmer = PorterStemmer()
# NIST geometric smoothing: the k-th zero-match order gets 1 / (2^k * candidate n-grams)
_smoothing = SmoothingFunction().method3


def tokenize_for_metrics(text: str) -> List[str]:
    """Lowercase, split on whitespace and punctuation"""
    return split_words(text.lower())


def _bounded(name: MetricName, value: float) -> MetricValue:
    return MetricValue(name=name, value=min(1.0, max(0.0, value)))


def bleu4(hypothesis: str, reference: str) -> MetricValue:
    """Sentence BLEU-4 with brevity penalty; zero unigram overlap scores 0"""
    hyp = tokenize_for_metrics(hypothesis)
    ref = tokenize_for_metrics(reference)
    if not hyp or not ref:
        return MetricValue(name=MetricName.BLEU4, value=0.0)
    score = sentence_bleu([ref], hyp, weights=(0.25, 0.25, 0.25, 0.25), smoothing_function=_smoothing)
    return _bounded(MetricName.BLEU4, float(score))


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _f1(overlap: int, hyp_total: int, ref_total: int) -> float:
    if overlap == 0 or hyp_total == 0 or ref_total == 0:
        return 0.0
    precision = overlap / hyp_total
    recall = overlap / ref_total
    return 2 * precision * recall / (precision + recall)


def rouge_n(hypothesis: str, reference: str, n: int) -> MetricValue:
    """Clipped n-gram overlap F1"""
    if n not in (1, 2):
        raise InvalidValue(f"ROUGE-N is defined here for n in {{1, 2}}, got {n}")
    hyp = _ngrams(tokenize_for_metrics(hypothesis), n)
    ref = _ngrams(tokenize_for_metrics(reference), n)
    overlap = sum((hyp & ref).values())
    name = MetricName.ROUGE1 if n == 1 else MetricName.ROUGE2
    return _bounded(name, _f1(overlap, sum(hyp.values()), sum(ref.values())))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for token in a:
        current = [0]
        for j, other in enumerate(b, start=1):
            current.append(previous[j - 1] + 1 if token == other else max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l(hypothesis: str, reference: str) -> MetricValue:
    hyp = tokenize_for_metrics(hypothesis)
    ref = tokenize_for_metrics(reference)
    return _bounded(MetricName.ROUGEL, _f1(lcs_length(hyp, ref), len(hyp), len(ref)))


# partial alignments kept per hypothesis position while aligning one stage
ALIGN_BEAM = 256


def _alignment_rank(state: tuple) -> Tuple[int, int]:
    matches, chunks, _ = state
    return (-matches, chunks)


def _align_stage(
    hyp_keys: List[str],
    ref_keys: List[str],
    alignment: Dict[int, int],
    beam_size: int = ALIGN_BEAM,
):
    """Align still-unaligned tokens with equal keys, most matches then fewest chunks.

    Hypothesis positions are visited left to right. Partial alignments that
    reach the same state (reference positions taken, reference position of
    the previous hypothesis token) are merged keeping the best one, so the
    search is exact while the states fit in the beam. Ties keep the
    alignment found first, which prefers lower reference positions.
    """
    taken = set(alignment.values())
    slots: Dict[str, List[int]] = {}
    for j, key in enumerate(ref_keys):
        if j not in taken:
            slots.setdefault(key, []).append(j)

    def chunk_step(prev_j: Optional[int], j: int) -> int:
        return 0 if prev_j is not None and prev_j + 1 == j else 1

    # state -> (matches, chunks, chain); chain is a linked list of (i, j) pairs
    states = {(frozenset(), None): (0, 0, None)}
    for i, key in enumerate(hyp_keys):
        following: Dict[tuple, tuple] = {}

        def offer(used, prev_j, candidate):
            current = following.get((used, prev_j))
            if current is None or _alignment_rank(candidate) < _alignment_rank(current):
                following[(used, prev_j)] = candidate

        for (used, prev_j), (matches, chunks, chain) in states.items():
            if i in alignment:
                j = alignment[i]
                offer(used, j, (matches, chunks + chunk_step(prev_j, j), chain))
                continue
            offer(used, None, (matches, chunks, chain))
            for j in slots.get(key, ()):
                if j not in used:
                    offer(used | {j}, j, (matches + 1, chunks + chunk_step(prev_j, j), ((i, j), chain)))

        # sorted() is stable, so equal ranks keep their discovery order
        ranked = sorted(following.items(), key=lambda item: _alignment_rank(item[1]))
        states = dict(ranked[:beam_size])

    _, _, chain = min(states.values(), key=_alignment_rank)
    while chain is not None:
        (i, j), chain = chain
        alignment[i] = j


def count_chunks(alignment: Mapping[int, int]) -> int:
    pairs = sorted(alignment.items())
    if not pairs:
        return 0
    return 1 + sum(
        1 for (h1, r1), (h2, r2) in zip(pairs, pairs[1:]) if not (h2 == h1 + 1 and r2 == r1 + 1)
    )


def meteor(
    hypothesis: str,
    reference: str,
    alpha: float = 0.9,
    beta: float = 3.0,
    gamma: float = 0.5,
) -> MetricValue:
    """METEOR with exact then stemmed unigram matching (no synonym tables)"""
    hyp = tokenize_for_metrics(hypothesis)
    ref = tokenize_for_metrics(reference)
    alignment: Dict[int, int] = {}
    _align_stage(hyp, ref, alignment)
    _align_stage([_stemmer.stem(t) for t in hyp], [_stemmer.stem(t) for t in ref], alignment)
    matches = len(alignment)
    if matches == 0:
        return MetricValue(name=MetricName.METEOR, value=0.0)
    precision = matches / len(hyp)
    recall = matches / len(ref)
    fmean = precision * recall / (alpha * precision + (1 - alpha) * recall)
    penalty = gamma * (count_chunks(alignment) / matches) ** beta
    return _bounded(MetricName.METEOR, fmean * (1 - penalty))


_LEXICAL = {
    MetricName.BLEU4: bleu4,
    MetricName.ROUGE1: lambda h, r: rouge_n(h, r, 1),
    MetricName.ROUGE2: lambda h, r: rouge_n(h, r, 2),
    MetricName.ROUGEL: rouge_l,
    MetricName.METEOR: meteor,
}


def lexical_metric(name: MetricName, hypothesis: str, reference: str) -> MetricValue:
    name = MetricName(name)
    if name not in _LEXICAL:
        raise InvalidValue(f"{name.value} is not computed in-process")
    return _LEXICAL[name](hypothesis, reference)


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


def aggregate(
    bhc: Mapping[MetricName, float],
    di: Mapping[MetricName, float],
    label: Optional[str] = None,
    cases: Optional[Mapping[TargetKind, int]] = None,
) -> MetricReport:
    """Per-metric mean of the two targets, then the mean over all eight metrics"""
    bhc = {MetricName(k): float(v) for k, v in bhc.items()}
    di = {MetricName(k): float(v) for k, v in di.items()}
    combined = {m: (bhc[m] + di[m]) / 2 for m in METRIC_ORDER if m in bhc and m in di}
    return _report_from_combined(combined, bhc=bhc, di=di, label=label, cases=cases)


def _report_from_combined(combined, bhc=None, di=None, label=None, cases=None) -> MetricReport:
    missing = [m for m in METRIC_ORDER if m not in combined]
    complete = not missing
    if missing:
        log.warning("Overall score undefined; missing metrics: %s", ", ".join(m.value for m in missing))
    return MetricReport(
        bhc=bhc or {},
        di=di or {},
        combined=combined,
        overall=_mean([combined[m] for m in METRIC_ORDER]) if complete else None,
        complete=complete,
        missing=missing,
        cases=dict(cases or {}),
        label=label,
    )


def report_from_percent(
    combined: Optional[Mapping[str, float]] = None,
    bhc: Optional[Mapping[str, float]] = None,
    di: Optional[Mapping[str, float]] = None,
    label: Optional[str] = None,
) -> MetricReport:
    """Report from published leaderboard rows (percent scale)"""
    def scale(row):
        try:
            return {MetricName(k): float(v) / 100 for k, v in row.items()}
        except (TypeError, ValueError) as e:
            raise InvalidValue(f"bad metric row: {e}")

    if bhc is not None and di is not None:
        return aggregate(scale(bhc), scale(di), label=label)
    if combined is None:
        raise InvalidValue("need either combined scores or both bhc and di scores")
    ordered = scale(combined)
    return _report_from_combined({m: ordered[m] for m in METRIC_ORDER if m in ordered}, label=label)


def _target_means(
    pairs: Sequence[Pair],
    metrics: Iterable[MetricName],
    providers: Mapping[MetricName, object],
) -> Dict[MetricName, float]:
    means = {}
    for metric in metrics:
        if metric in _LEXICAL:
            means[metric] = _mean([lexical_metric(metric, h, r).value for h, r in pairs])
        elif metric in providers:
            means[metric] = _mean(providers[metric].score_batch(metric, pairs))
    return means


def evaluate_run(
    bhc_pairs: Sequence[Pair],
    di_pairs: Sequence[Pair],
    enabled_metrics: Optional[Iterable[MetricName]] = None,
    providers: Optional[Mapping[MetricName, object]] = None,
    label: Optional[str] = None,
) -> MetricReport:
    """Score (hypothesis, reference) pairs for both targets and aggregate.

    External metrics are scored before anything is assembled, so a provider
    failure leaves no partial report behind.
    """
    if not bhc_pairs or not di_pairs:
        raise InvalidValue("both BHC and DI need at least one (hypothesis, reference) pair")
    metrics = [MetricName(m) for m in (enabled_metrics or METRIC_ORDER)]
    providers = providers or {}
    for metric in metrics:
        if metric in EXTERNAL_METRICS and metric not in providers:
            log.warning("No provider for %s; it will be reported missing", metric.value)
    bhc = _target_means(bhc_pairs, metrics, providers)
    di = _target_means(di_pairs, metrics, providers)
    return aggregate(bhc, di, label=label, cases={TargetKind.BHC: len(bhc_pairs), TargetKind.DI: len(di_pairs)})


def _fmt(value: Optional[float], decimals: int) -> str:
    return "n/a" if value is None else f"{value * 100:.{decimals}f}"


def render_report_table(report: MetricReport, decimals: int = 2) -> str:
    """Overall plus the eight metrics in leaderboard column order"""
    header = ["", "Overall"] + [m.value for m in METRIC_ORDER]
    rows = [[report.label or "combined", _fmt(report.overall, decimals)]
            + [_fmt(report.combined.get(m), decimals) for m in METRIC_ORDER]]
    for name, row in (("BHC", report.bhc), ("DI", report.di)):
        if row:
            rows.append([name, ""] + [_fmt(row.get(m), decimals) for m in METRIC_ORDER])
    return _render(header, rows)


def rank_reports(reports: Sequence[MetricReport]) -> List[MetricReport]:
    """Highest overall first; reports without an overall score go last"""
    return sorted(reports, key=lambda r: (r.overall is None, -(r.overall or 0.0)))


def render_leaderboard(reports: Sequence[MetricReport], decimals: int = 2) -> str:
    header = ["Rank", "Model", "Overall"] + [m.value for m in METRIC_ORDER]
    rows = []
    for rank, report in enumerate(rank_reports(reports), start=1):
        rows.append([str(rank), report.label or f"run{rank}", _fmt(report.overall, decimals)]
                    + [_fmt(report.combined.get(m), decimals) for m in METRIC_ORDER])
    return _render(header, rows)


def _render(header: List[str], rows: List[List[str]]) -> str:
    widths = [max(len(str(row[i])) for row in [header] + rows) for i in range(len(header))]
    lines = [" | ".join(cell.ljust(w) for cell, w in zip(header, widths)).rstrip()]
    lines.append("-+-".join("-" * w for w in widths))
    for row in rows:
        lines.append(" | ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"
