import json
import sys
from pathlib import Path

import numpy as np
import pytest

from dischargekit.decode_engine import toy_lm_from_tables
from dischargekit.models import CorpusRecord, RawReport

STUBS = Path(__file__).parent / "stubs"

FIXTURE_NOTE = (
    "HPI: fever and cough for ___ days.\n"
    "Brief Hospital Course:\n"
    "treated with antibiotics, afebrile by day 2.\n"
    "Medications:\n"
    "amoxicillin 500 mg\n"
    "Discharge Instructions:\n"
    "Dear Mr. ___, you were admitted for pneumonia.\n"
)

REPORTS = [
    RawReport(report_id="r1", text="CXR: right lower lobe opacity."),
    RawReport(report_id="r2", text="CXR: interval improvement."),
]


@pytest.fixture
def fixture_note_text():
    return FIXTURE_NOTE


@pytest.fixture
def fixture_record():
    return CorpusRecord(note_id="n1", text=FIXTURE_NOTE, radiology_reports=REPORTS)


def synthetic_note(i: int, rng: np.random.Generator) -> str:
    """Discharge note with masks, CRLF variants and headers repeated mid-line"""
    words = ["fever", "___", "stable", "Brief Hospital Course:", "Discharge Instructions:", "pt", "w/", "CT"]
    def body(n):
        return " ".join(rng.choice(words) for _ in range(n))
    newline = "\r\n" if i % 3 == 0 else "\n"
    lines = [
        f"Name: ___ Unit No: {i}",
        f"HPI: {body(int(rng.integers(0, 12)))}",
        "Brief Hospital Course:",
        f"Pt noted {body(int(rng.integers(1, 20)))}",
    ]
    if i % 2:
        lines += ["Discharge Medications:", f"1. {body(3)}"]
    lines += ["Discharge Instructions:", f"Dear ___, {body(int(rng.integers(1, 15)))}"]
    if i % 4 == 0:
        lines += ["Followup Instructions:", "___"]
    text = newline.join(lines)
    return text + newline if i % 5 else text


@pytest.fixture
def synthetic_corpus():
    rng = np.random.default_rng(7)
    return [
        CorpusRecord(
            note_id=f"s{i}",
            text=synthetic_note(i, rng),
            radiology_reports=REPORTS[: i % 3],
        )
        for i in range(60)
    ]


def random_toy_lm(rng: np.random.Generator, vocab: int, dim: int = 3, eos_id: int = 0):
    # quarter-integer logits keep every comparison exact
    logits = rng.integers(-12, 13, size=(vocab, vocab)) / 4.0
    embeddings = rng.integers(-3, 4, size=(vocab, dim)).astype(float)
    return toy_lm_from_tables(logits, embeddings, eos_id)


@pytest.fixture
def toy_lm_factory():
    return random_toy_lm


def stub_command(name: str):
    return [sys.executable, str(STUBS / name)]


@pytest.fixture
def write_corpus(tmp_path):
    def write(records, name="corpus.jsonl"):
        path = tmp_path / name
        path.write_text("".join(json.dumps(r.model_dump()) + "\n" for r in records), encoding="utf-8")
        return str(path)
    return write


@pytest.fixture(autouse=True)
def restore_settings():
    from dischargekit.config import settings

    snapshot = settings.model_copy()
    yield
    settings.update_from(snapshot)
