from typing import Optional


class DischargeKitError(Exception):
    """Base class for every error raised by the toolkit"""

    exit_code = 1

    def __init__(self, message: str, note_id: Optional[str] = None):
        self.note_id = note_id
        if note_id is not None:
            message = f"[{note_id}] {message}"
        super().__init__(message)


class InvalidValue(DischargeKitError):
    pass


class CorpusError(DischargeKitError):
    pass


# Note parsing
class NoteParseError(DischargeKitError):
    pass


class EmptyNote(NoteParseError):
    def __init__(self, note_id: Optional[str] = None):
        super().__init__("note text is empty", note_id)


class MissingSection(NoteParseError):
    def __init__(self, kind: str, note_id: Optional[str] = None):
        self.kind = kind
        super().__init__(f"missing section {kind}", note_id)


class DuplicateSection(NoteParseError):
    def __init__(self, kind: str, note_id: Optional[str] = None):
        self.kind = kind
        super().__init__(f"section {kind} appears more than once", note_id)


class OutOfOrderSection(NoteParseError):
    def __init__(self, kind: str, note_id: Optional[str] = None):
        self.kind = kind
        super().__init__(f"section {kind} appears before BriefHospitalCourse", note_id)


# Context building
class ContextError(DischargeKitError):
    pass


class InvalidCombination(ContextError):
    pass


class NoContext(ContextError):
    pass


# Token budgets
class TokenizerError(DischargeKitError):
    pass


class BudgetError(DischargeKitError):
    pass


class EmptyCounts(BudgetError):
    def __init__(self, field: str = "counts"):
        self.field = field
        super().__init__(f"no token counts for {field}")


# Decoding
class DecodeError(DischargeKitError):
    pass


class InvalidK(DecodeError):
    pass


class VocabMismatch(DecodeError):
    pass


class DimensionMismatch(DecodeError):
    pass


# Tensor maps and merging
class MergeError(DischargeKitError):
    pass


class ShapeMismatch(MergeError):
    pass


class MissingBaseTensor(MergeError):
    pass


class NameSetMismatch(MergeError):
    pass


class CorruptFile(MergeError):
    pass


# External scorers and provider processes
class ScorerError(DischargeKitError):
    exit_code = 2


class ProviderUnavailable(ScorerError):
    pass


class MalformedResponse(ScorerError):
    pass


class OutOfRangeScore(ScorerError):
    pass
