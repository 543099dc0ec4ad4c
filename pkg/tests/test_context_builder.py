import pytest

from dischargekit.context_builder import (
    DatasetBudgets,
    build_context,
    build_training_manifest,
    emit_dataset,
    gold_target,
    render_prompt,
)
from dischargekit.errors import InvalidCombination, InvalidValue, NoContext
from dischargekit.models import (
    ContextVariant,
    CorpusRecord,
    DatasetMode,
    GenerationContext,
    ModelFamily,
    SectionKind,
    TargetKind,
)
from dischargekit.note_parser import parse_note, parse_record
from dischargekit.tokenizers import Tokenizer


@pytest.fixture
def note(fixture_note_text):
    return parse_note("n1", fixture_note_text)


def test_bhc_base_context(note):
    context = build_context(note, TargetKind.BHC, ContextVariant.BASE)
    assert context.parts == ["Part1"]
    assert context.text == "HPI: fever and cough for ___ days.\n"


def test_di_base_context(note):
    context = build_context(note, TargetKind.DI, ContextVariant.BASE)
    assert context.parts == ["BHC", "Part2"]
    assert context.text == (
        note.section_text(SectionKind.BRIEF_HOSPITAL_COURSE) + "\n\n" + note.section_text(SectionKind.PART2)
    )


def test_long_di_context(note):
    context = build_context(note, TargetKind.DI, ContextVariant.LONG_DI)
    assert context.parts == ["Part1", "BHC", "Part2"]


def test_long_di_rejected_for_bhc(note):
    with pytest.raises(InvalidCombination):
        build_context(note, TargetKind.BHC, ContextVariant.LONG_DI)


def test_base_plus_rad_context(fixture_record):
    note = parse_record(fixture_record)
    context = build_context(note, TargetKind.BHC, ContextVariant.BASE_PLUS_RAD)
    assert context.parts == ["Part1", "RadReports"]
    assert context.text.endswith(
        "Radiology Report 1:\nCXR: right lower lobe opacity.\n\n"
        "Radiology Report 2:\nCXR: interval improvement."
    )


def test_base_plus_rad_without_reports_equals_base(note):
    plus = build_context(note, TargetKind.DI, ContextVariant.BASE_PLUS_RAD)
    base = build_context(note, TargetKind.DI, ContextVariant.BASE)
    assert plus.text == base.text
    assert plus.parts == base.parts


def test_rad_only(fixture_record, note):
    context = build_context(parse_record(fixture_record), TargetKind.DI, ContextVariant.RAD_ONLY)
    assert context.parts == ["RadReports"]
    with pytest.raises(NoContext):
        build_context(note, TargetKind.DI, ContextVariant.RAD_ONLY)


def test_empty_part1_is_no_context():
    note = parse_note("n2", "Brief Hospital Course:\nb\nDischarge Instructions:\nc\n")
    with pytest.raises(NoContext):
        build_context(note, TargetKind.BHC, ContextVariant.BASE)


def test_context_is_made_of_note_text(synthetic_corpus):
    for record in synthetic_corpus:
        note = parse_record(record)
        for target, variant in [
            (TargetKind.BHC, ContextVariant.BASE),
            (TargetKind.DI, ContextVariant.BASE),
            (TargetKind.DI, ContextVariant.LONG_DI),
        ]:
            context = build_context(note, target, variant, separator="")
            assert context.text in note.raw_text


def test_gold_target_strips_header(note):
    assert gold_target(note, TargetKind.BHC) == "treated with antibiotics, afebrile by day 2."


def test_training_prompt(note):
    context = build_context(note, TargetKind.BHC, ContextVariant.BASE)
    prompt = render_prompt(context, gold_target(note, TargetKind.BHC))
    assert prompt == (
        "Summarize the below clinical text into a section of brief hospital course.\n\n"
        "### Input:\n"
        "HPI: fever and cough for ___ days.\n\n"
        "### Summary:\n"
        "treated with antibiotics, afebrile by day 2."
    )


def test_prompt_blank_lines_do_not_depend_on_input_ending():
    bare = GenerationContext(
        note_id="n2", target=TargetKind.DI, variant=ContextVariant.BASE, text="HPI: cough", parts=["Part1"]
    )
    assert render_prompt(bare) == (
        "Summarize the below clinical text into a section of discharge instruction.\n\n"
        "### Input:\n"
        "HPI: cough\n\n"
        "### Summary:\n"
    )
    padded = bare.model_copy(update={"text": "HPI: cough\n"})
    assert render_prompt(padded) == render_prompt(bare)


def test_inference_prompt_ends_with_summary_marker(note):
    context = build_context(note, TargetKind.BHC, ContextVariant.BASE)
    assert render_prompt(context).endswith("### Summary:\n")


def test_di_prompt_instruction(note):
    context = build_context(note, TargetKind.DI, ContextVariant.BASE)
    assert "discharge instruction" in render_prompt(context).splitlines()[0]


def _corpus(fixture_note_text):
    return [
        CorpusRecord(note_id="a", text=fixture_note_text),
        CorpusRecord(note_id="b", text=fixture_note_text.replace("fever", "chills")),
    ]


def test_specialized_dataset(fixture_note_text):
    result = emit_dataset(_corpus(fixture_note_text), ContextVariant.BASE, DatasetMode.SPECIALIZED, TargetKind.BHC)
    assert len(result.records) == 2
    assert {r.target_kind for r in result.records} == {TargetKind.BHC}


def test_unified_dataset_alternates(fixture_note_text):
    result = emit_dataset(_corpus(fixture_note_text), ContextVariant.BASE, DatasetMode.UNIFIED)
    assert [(r.note_id, r.target_kind) for r in result.records] == [
        ("a", TargetKind.BHC), ("a", TargetKind.DI), ("b", TargetKind.BHC), ("b", TargetKind.DI),
    ]


def test_unified_long_di_keeps_base_bhc(fixture_note_text):
    result = emit_dataset(_corpus(fixture_note_text)[:1], ContextVariant.LONG_DI, DatasetMode.UNIFIED)
    bhc, di = result.records
    assert "HPI: fever" in bhc.prompt and "Brief Hospital Course:" not in bhc.prompt
    assert "HPI: fever" in di.prompt and "Brief Hospital Course:" in di.prompt


def test_specialized_needs_target(fixture_note_text):
    with pytest.raises(InvalidValue):
        emit_dataset(_corpus(fixture_note_text), ContextVariant.BASE, DatasetMode.SPECIALIZED)


def test_failing_note_is_skipped(fixture_note_text):
    corpus = _corpus(fixture_note_text) + [CorpusRecord(note_id="bad", text="no sections here")]
    result = emit_dataset(corpus, ContextVariant.BASE, DatasetMode.SPECIALIZED, TargetKind.DI, jobs=2)
    assert [r.note_id for r in result.records] == ["a", "b"]
    assert [(s.note_id, s.error) for s in result.skipped] == [("bad", "MissingSection")]


def test_dataset_truncation(fixture_note_text):
    budgets = DatasetBudgets(context=3, target=2)
    result = emit_dataset(
        _corpus(fixture_note_text)[:1],
        ContextVariant.BASE,
        DatasetMode.SPECIALIZED,
        TargetKind.BHC,
        budgets=budgets,
        tokenizer=Tokenizer.whitespace(),
    )
    record = result.records[0]
    assert "### Input:\n___ days.\n\n### Summary:\n" in record.prompt
    assert record.completion == "treated with"


def test_training_manifest_defaults():
    manifest = build_training_manifest()
    assert (
        manifest.learning_rate,
        manifest.lora_rank,
        manifest.lora_alpha,
        manifest.batch_size,
        manifest.epochs,
        manifest.warmup_ratio,
    ) == (2e-4, 64, 16, 16, 5, 0.03)
    assert (manifest.max_input_tokens, manifest.max_output_tokens) == (2816, 1280)


def test_training_manifest_override():
    manifest = build_training_manifest({"epochs": 1})
    assert manifest.epochs == 1
    assert manifest.batch_size == 16


def test_training_manifest_encoder_decoder():
    manifest = build_training_manifest({"model_family": "encoder_decoder"})
    assert manifest.model_family == ModelFamily.ENCODER_DECODER
    assert manifest.learning_rate == 5e-5


def test_training_manifest_rejects_zero_batch():
    with pytest.raises(InvalidValue):
        build_training_manifest({"batch_size": 0})
