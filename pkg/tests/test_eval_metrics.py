import math
from collections import Counter

import numpy as np
import pytest

from dischargekit.errors import InvalidValue, MalformedResponse, OutOfRangeScore, ProviderUnavailable
from dischargekit.eval_metrics import (
    aggregate,
    bleu4,
    evaluate_run,
    lexical_metric,
    meteor,
    rank_reports,
    render_leaderboard,
    render_report_table,
    report_from_percent,
    rouge_l,
    rouge_n,
    tokenize_for_metrics,
)
from dischargekit.models import EXTERNAL_METRICS, LEXICAL_METRICS, METRIC_ORDER, MetricName, TargetKind
from dischargekit.scorer_client import ExternalScorer, default_providers, external_metric
from tests.conftest import stub_command

AEHRC = [9.7, 41.4, 19.2, 28.4, 38.3, 39.8, 27.4, 33.2]
LLAMA3 = [10.05, 35.65, 13.56, 25.65, 38.66, 39.98, 25.93, 34.90]


def row(values):
    return {m.value: v for m, v in zip(METRIC_ORDER, values)}


def test_tokenize_for_metrics():
    assert tokenize_for_metrics("Pt's BP: 120/80.") == ["pt", "'", "s", "bp", ":", "120", "/", "80", "."]


def test_bleu_identity_and_empty():
    text = "patient was discharged home in stable condition"
    assert bleu4(text, text).value == 1.0
    assert bleu4("", text).value == 0.0


def test_bleu_fixture():
    # p1 = 3/5, p2 = 2/4, p3 = 1/3, p4 = 0/2 smoothed to 1/(2*2); BP = exp(1 - 6/5)
    expected = math.exp(-0.2) * (0.6 * 0.5 * (1 / 3) * 0.25) ** 0.25
    assert bleu4("the cat sat down here", "the cat sat on the mat").value == pytest.approx(expected, rel=1e-12)


def test_rouge_hand_cases():
    assert rouge_n("a c", "a b c", 1).value == pytest.approx(0.8)
    assert rouge_l("a c", "a b c").value == pytest.approx(0.8)
    assert rouge_l("c b a", "a b c").value == pytest.approx(1 / 3)
    assert rouge_n("", "", 1).value == 0.0


def test_rouge_n_rejects_other_orders():
    with pytest.raises(InvalidValue):
        rouge_n("a", "a", 3)


def test_meteor_hand_cases():
    assert meteor("the cat sat", "the cat sat").value == pytest.approx(0.98148, abs=1e-5)
    # three single-token chunks: penalty 0.5 * (3/3)^3
    assert meteor("cat the sat", "the cat sat").value == pytest.approx(0.5)
    assert meteor("dogs barked", "cat sat").value == 0.0


def test_meteor_prefers_fewest_chunks_among_maximal_alignments():
    # "a b" aligns to hyp positions 1,2 as one chunk, not 0,1 as two
    fmean = (2 / 3) / (0.9 * (2 / 3) + 0.1)
    assert meteor("b a b", "a b").value == pytest.approx(fmean * (1 - 0.5 * (1 / 2) ** 3))


def fewest_chunks_reference(hyp, ref):
    """Matches and chunks of the best alignment, by enumerating every injective matching"""
    best = (0, 0)

    def walk(i, used, pairs):
        nonlocal best
        if i == len(hyp):
            chunks = sum(
                1 for k, (h, r) in enumerate(pairs) if k == 0 or pairs[k - 1] != (h - 1, r - 1)
            )
            if (-len(pairs), chunks) < (-best[0], best[1]):
                best = (len(pairs), chunks)
            return
        walk(i + 1, used, pairs)
        for j, token in enumerate(ref):
            if token == hyp[i] and j not in used:
                walk(i + 1, used | {j}, pairs + [(i, j)])

    walk(0, frozenset(), [])
    return best


def test_meteor_alignment_matches_exhaustive_search():
    rng = np.random.default_rng(12)
    for _ in range(300):
        hyp = [str(t) for t in rng.choice(["a", "b", "c"], size=int(rng.integers(1, 6)))]
        ref = [str(t) for t in rng.choice(["a", "b", "c"], size=int(rng.integers(1, 6)))]
        matches, chunks = fewest_chunks_reference(hyp, ref)
        value = meteor(" ".join(hyp), " ".join(ref)).value
        if matches == 0:
            assert value == 0.0
            continue
        precision, recall = matches / len(hyp), matches / len(ref)
        fmean = precision * recall / (0.9 * precision + 0.1 * recall)
        assert value == pytest.approx(fmean * (1 - 0.5 * (chunks / matches) ** 3), abs=1e-12)


def test_meteor_stem_matching():
    assert meteor("patients discharged", "patient discharge").value > 0.9


@pytest.mark.parametrize("name", LEXICAL_METRICS)
def test_identity_and_disjoint(name):
    assert lexical_metric(name, "the patient was discharged home", "the patient was discharged home").value == 1.0
    assert lexical_metric(name, "alpha beta gamma delta", "one two three four").value == 0.0


@pytest.mark.parametrize("name", LEXICAL_METRICS)
def test_case_folding(name):
    hyp, ref = "Pt stable, sent home on abx.", "pt was stable and went home"
    assert lexical_metric(name, hyp.upper(), ref.upper()).value == lexical_metric(name, hyp, ref).value


def brute_ngrams(tokens, n):
    grams = Counter()
    for i in range(len(tokens) - n + 1):
        grams[" ".join(tokens[i:i + n])] += 1
    return grams


def brute_f1(hyp, ref, n):
    h, r = brute_ngrams(hyp, n), brute_ngrams(ref, n)
    overlap = 0
    for gram, count in h.items():
        overlap += min(count, r.get(gram, 0))
    if overlap == 0:
        return 0.0
    p, rec = overlap / sum(h.values()), overlap / sum(r.values())
    return 2 * p * rec / (p + rec)


def brute_lcs(a, b):
    best = 0
    for mask in range(1, 1 << len(a)):
        sub = [a[i] for i in range(len(a)) if mask >> i & 1]
        it = iter(b)
        if all(token in it for token in sub):
            best = max(best, len(sub))
    return best


def test_rouge_agrees_with_brute_force():
    rng = np.random.default_rng(9)
    vocab = ["a", "b", "c", "d", "e"]
    for _ in range(1000):
        hyp = list(rng.choice(vocab, size=int(rng.integers(0, 8))))
        ref = list(rng.choice(vocab, size=int(rng.integers(0, 8))))
        h, r = " ".join(hyp), " ".join(ref)
        assert rouge_n(h, r, 1).value == brute_f1(hyp, ref, 1)
        assert rouge_n(h, r, 2).value == brute_f1(hyp, ref, 2)
        lcs = brute_lcs(hyp, ref)
        expected = 0.0 if lcs == 0 else 2 * (lcs / len(hyp)) * (lcs / len(ref)) / (lcs / len(hyp) + lcs / len(ref))
        assert rouge_l(h, r).value == expected
        # swapping hypothesis and reference swaps P and R
        assert rouge_l(r, h).value == pytest.approx(rouge_l(h, r).value, abs=1e-15)
        for value in (bleu4(h, r).value, meteor(h, r).value):
            assert 0.0 <= value <= 1.0


def test_published_rows_aggregate():
    aehrc = report_from_percent(row(AEHRC), label="aehrc")
    assert aehrc.overall * 100 == pytest.approx(29.675, abs=1e-9)
    assert "29.7" in render_report_table(aehrc, decimals=1)
    llama3 = report_from_percent(row(LLAMA3), label="Llama3")
    assert llama3.overall * 100 == pytest.approx(28.0475, abs=1e-9)
    assert round(llama3.overall * 100, 2) == 28.05


def test_aggregate_means_targets():
    bhc = {m: 0.2 for m in METRIC_ORDER}
    di = {m: 0.4 for m in METRIC_ORDER}
    report = aggregate(bhc, di)
    assert report.combined[MetricName.BLEU4] == pytest.approx(0.3)
    assert report.overall == pytest.approx(0.3)
    assert report.complete


def test_all_zero_inputs():
    report = aggregate({m: 0.0 for m in METRIC_ORDER}, {m: 0.0 for m in METRIC_ORDER})
    assert report.overall == 0.0


def test_missing_metric_leaves_overall_undefined():
    report = evaluate_run([("a b", "a b")], [("c", "c")])
    assert report.overall is None
    assert not report.complete
    assert report.missing == EXTERNAL_METRICS
    assert "n/a" in render_report_table(report)


def test_evaluate_run_requires_pairs():
    with pytest.raises(InvalidValue):
        evaluate_run([], [("a", "a")])


def test_evaluate_run_with_echo_provider():
    providers = default_providers(" ".join(stub_command("echo_scorer.py")))
    try:
        report = evaluate_run(
            [("the patient went home", "the patient went home"), ("x", "y")],
            [("take your medications", "take your medications")],
            providers=providers,
        )
    finally:
        next(iter(providers.values())).close()
    assert report.complete
    assert report.cases == {TargetKind.BHC: 2, TargetKind.DI: 1}
    for metric in EXTERNAL_METRICS:
        assert report.combined[metric] == 0.5
    assert report.bhc[MetricName.ROUGE1] == pytest.approx(0.5)
    assert report.di[MetricName.ROUGE1] == 1.0
    assert report.overall == pytest.approx(sum(report.combined.values()) / 8, abs=1e-9)


def test_external_metric_echo():
    with ExternalScorer(stub_command("echo_scorer.py")) as scorer:
        assert external_metric(scorer, MetricName.BERTSCORE, [("a", "b"), ("c", "d")]) == [0.5, 0.5]


def test_external_metric_out_of_range():
    with ExternalScorer(stub_command("out_of_range_scorer.py")) as scorer:
        with pytest.raises(OutOfRangeScore):
            external_metric(scorer, MetricName.MEDCON, [("a", "b")])


def test_external_metric_provider_crash():
    providers = {m: ExternalScorer(stub_command("crashing_scorer.py")) for m in EXTERNAL_METRICS}
    with pytest.raises(ProviderUnavailable):
        evaluate_run([("a", "a")], [("b", "b")], providers=providers)


def test_external_metric_malformed_response():
    with ExternalScorer(stub_command("garbage_scorer.py")) as scorer:
        with pytest.raises(MalformedResponse):
            external_metric(scorer, MetricName.ALIGNSCORE, [("a", "b")])


def test_missing_provider_executable():
    with pytest.raises(ProviderUnavailable):
        external_metric(ExternalScorer(["/nonexistent/scorer"]), MetricName.BERTSCORE, [("a", "b")])


def test_leaderboard_ranking():
    reports = [
        report_from_percent(row(LLAMA3), label="Llama3"),
        report_from_percent({"BLEU-4": 10.0}, label="partial"),
        report_from_percent(row(AEHRC), label="aehrc"),
    ]
    assert [r.label for r in rank_reports(reports)] == ["aehrc", "Llama3", "partial"]
    table = render_leaderboard(reports, decimals=2)
    lines = table.splitlines()
    assert [cell.strip() for cell in lines[0].split(" | ")][:3] == ["Rank", "Model", "Overall"]
    assert lines[2].startswith("1    | aehrc")
