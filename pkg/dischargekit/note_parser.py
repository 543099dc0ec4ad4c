"""Discharge-note segmentation.

A note is split into Part 1 (everything before the brief hospital course),
the brief hospital course, Part 2 (between the hospital course and the
discharge instructions), the discharge instructions, and any trailing text.
Headers are matched at the start of a line, case-insensitively, and every
span keeps its header line so the spans concatenate back to the raw text.
"""

import logging
import re
from typing import Iterable, List, Optional, Sequence, Union

from pydantic import BaseModel, ConfigDict

from dischargekit.errors import (
    DuplicateSection,
    EmptyNote,
    InvalidValue,
    MissingSection,
    OutOfOrderSection,
)
from dischargekit.models import (
    CorpusRecord,
    ParsedNote,
    RadiologyReport,
    RawReport,
    SectionKind,
    SectionSpan,
)

log = logging.getLogger(__name__)


class HeaderLexicon(BaseModel):
    bhc: List[str] = ["Brief Hospital Course:"]
    di: List[str] = ["Discharge Instructions:"]
    stop: List[str] = [
        "Followup Instructions:",
        "Medications on Admission:",
        "Discharge Medications:",
        "Medications:",
        "Discharge Disposition:",
        "Discharge Diagnosis:",
        "Discharge Condition:",
    ]

    model_config = ConfigDict(frozen=True)


DEFAULT_LEXICON = HeaderLexicon()

_LEXICON_PREFIXES = {"BHC": "bhc", "DI": "di", "STOP": "stop"}


def load_header_lexicon(path: str) -> HeaderLexicon:
    """Read a lexicon file: one header per line, prefixed by BHC:, DI: or STOP:"""
    entries = {"bhc": [], "di": [], "stop": []}
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            prefix, sep, header = line.partition(":")
            key = _LEXICON_PREFIXES.get(prefix.strip().upper())
            if not sep or key is None or not header.strip():
                raise InvalidValue(f"{path}:{line_no}: expected BHC:/DI:/STOP: followed by a header")
            entries[key].append(header.strip())
    if not entries["bhc"] or not entries["di"]:
        raise InvalidValue(f"{path}: lexicon needs at least one BHC and one DI header")
    return HeaderLexicon(**entries)


def _header_pattern(headers: Sequence[str]) -> re.Pattern:
    # longest first so that a header never loses to one of its own prefixes
    alternatives = "|".join(re.escape(h) for h in sorted(headers, key=len, reverse=True))
    return re.compile(rf"^[ \t]*({alternatives})", re.IGNORECASE | re.MULTILINE)


def _find_headers(text: str, headers: Sequence[str]) -> List[re.Match]:
    if not headers:
        return []
    return list(_header_pattern(headers).finditer(text))


def _single(matches: List[re.Match], kind: SectionKind, note_id: str) -> re.Match:
    if not matches:
        raise MissingSection(kind.value, note_id)
    if len(matches) > 1:
        raise DuplicateSection(kind.value, note_id)
    return matches[0]


def parse_note(note_id: str, raw_text: str, header_lexicon: Optional[HeaderLexicon] = None) -> ParsedNote:
    """Segment a discharge note into ordered, span-addressed sections"""
    lexicon = header_lexicon or DEFAULT_LEXICON
    if not raw_text or not raw_text.strip():
        raise EmptyNote(note_id)

    bhc = _single(_find_headers(raw_text, lexicon.bhc), SectionKind.BRIEF_HOSPITAL_COURSE, note_id)
    di = _single(_find_headers(raw_text, lexicon.di), SectionKind.DISCHARGE_INSTRUCTIONS, note_id)
    if di.start() < bhc.start():
        raise OutOfOrderSection(SectionKind.DISCHARGE_INSTRUCTIONS.value, note_id)

    stops = [m.start() for m in _find_headers(raw_text, lexicon.stop)]
    bhc_end = next((s for s in stops if bhc.start() < s < di.start()), di.start())
    di_end = next((s for s in stops if s > di.start()), len(raw_text))

    sections: List[SectionSpan] = []

    def byte_offset(index: int) -> int:
        return len(raw_text[:index].encode("utf-8", "surrogatepass"))

    def add(kind: SectionKind, start: int, end: int, header: Optional[re.Match] = None):
        if start >= end:
            return
        sections.append(SectionSpan(
            kind=kind,
            header_text=header.group(1) if header else "",
            start=start,
            end=end,
            body_start=header.end(1) if header else start,
            byte_start=byte_offset(start),
            byte_end=byte_offset(end),
        ))

    add(SectionKind.PART1, 0, bhc.start())
    add(SectionKind.BRIEF_HOSPITAL_COURSE, bhc.start(), bhc_end, bhc)
    add(SectionKind.PART2, bhc_end, di.start())
    add(SectionKind.DISCHARGE_INSTRUCTIONS, di.start(), di_end, di)
    add(SectionKind.OTHER, di_end, len(raw_text))

    return ParsedNote(note_id=note_id, raw_text=raw_text, sections=sections)


def reconstruct(note: ParsedNote) -> str:
    """Concatenate the spans back into the original text"""
    return "".join(note.raw_text[span.start:span.end] for span in note.sections)


def attach_radiology(
    note: ParsedNote,
    reports: Iterable[Union[RawReport, RadiologyReport, dict]],
) -> ParsedNote:
    """Return a copy of the note carrying exactly the given reports, in order"""
    attached = []
    for index, report in enumerate(reports):
        if isinstance(report, dict):
            report = RawReport.model_validate(report)
        if not report.text or not report.text.strip():
            raise InvalidValue(f"radiology report {report.report_id} is empty", note.note_id)
        attached.append(RadiologyReport(report_id=report.report_id, text=report.text, order_index=index))
    return note.model_copy(update={"radiology_reports": attached})


def parse_record(record: CorpusRecord, header_lexicon: Optional[HeaderLexicon] = None) -> ParsedNote:
    """Parse one corpus record and attach its radiology reports"""
    note = parse_note(record.note_id, record.text, header_lexicon)
    return attach_radiology(note, record.radiology_reports)
