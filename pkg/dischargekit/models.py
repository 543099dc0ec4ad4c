from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import Optional, List, Dict
from enum import Enum

# Enums
class SectionKind(str, Enum):
    PART1 = "Part1"
    BRIEF_HOSPITAL_COURSE = "BriefHospitalCourse"
    PART2 = "Part2"
    DISCHARGE_INSTRUCTIONS = "DischargeInstructions"
    OTHER = "Other"

class TargetKind(str, Enum):
    BHC = "BHC"
    DI = "DI"

class ContextVariant(str, Enum):
    BASE = "Base"
    BASE_PLUS_RAD = "BasePlusRad"
    LONG_DI = "LongDI"
    RAD_ONLY = "RadOnly"

class DatasetMode(str, Enum):
    SPECIALIZED = "Specialized"
    UNIFIED = "Unified"

class TruncationSide(str, Enum):
    LEFT = "left"
    RIGHT = "right"

class TokenizerKind(str, Enum):
    WHITESPACE = "whitespace"
    BYTE_PAIR = "bpe"

class ModelFamily(str, Enum):
    DECODER = "decoder"
    ENCODER_DECODER = "encoder_decoder"

class StopReason(str, Enum):
    EOS = "EOS"
    MAX_LEN = "MaxLen"

class DecodeAlgorithm(str, Enum):
    GREEDY = "greedy"
    BEAM = "beam"
    NUCLEUS = "nucleus"
    CONTRASTIVE = "contrastive"
    ENSEMBLE = "ensemble"

class MetricName(str, Enum):
    BLEU4 = "BLEU-4"
    ROUGE1 = "ROUGE-1"
    ROUGE2 = "ROUGE-2"
    ROUGEL = "ROUGE-L"
    BERTSCORE = "BERTScore"
    METEOR = "Meteor"
    ALIGNSCORE = "AlignScore"
    MEDCON = "MEDCON"

# Leaderboard column order
METRIC_ORDER: List[MetricName] = list(MetricName)
LEXICAL_METRICS = [MetricName.BLEU4, MetricName.ROUGE1, MetricName.ROUGE2, MetricName.ROUGEL, MetricName.METEOR]
EXTERNAL_METRICS = [MetricName.BERTSCORE, MetricName.ALIGNSCORE, MetricName.MEDCON]

# Note Models
class RadiologyReport(BaseModel):
    report_id: str
    text: str = Field(min_length=1)
    order_index: int = Field(ge=0)

    model_config = ConfigDict(frozen=True)

class SectionSpan(BaseModel):
    kind: SectionKind
    header_text: str = ""
    start: int = Field(ge=0)
    end: int
    # offset just past the matched header; equals start for header-less spans
    body_start: int
    # UTF-8 byte offsets of the same span, half-open
    byte_start: int = Field(ge=0)
    byte_end: int

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_offsets(self):
        if not self.start < self.end:
            raise ValueError("span start must be before end")
        if not self.start <= self.body_start <= self.end:
            raise ValueError("body_start must lie inside the span")
        if not self.byte_start < self.byte_end:
            raise ValueError("span byte_start must be before byte_end")
        return self

class ParsedNote(BaseModel):
    note_id: str
    raw_text: str
    sections: List[SectionSpan]
    radiology_reports: List[RadiologyReport] = []

    model_config = ConfigDict(frozen=True)

    def span(self, kind: SectionKind) -> Optional[SectionSpan]:
        """First span of the given kind, if any"""
        for span in self.sections:
            if span.kind == kind:
                return span
        return None

    def section_text(self, kind: SectionKind) -> str:
        """Section text including its header line ("" when absent)"""
        span = self.span(kind)
        return self.raw_text[span.start:span.end] if span else ""

    def section_body(self, kind: SectionKind) -> str:
        """Section content with the header stripped"""
        span = self.span(kind)
        return self.raw_text[span.body_start:span.end].strip() if span else ""

# Corpus ingestion
class RawReport(BaseModel):
    report_id: str
    text: str

class CorpusRecord(BaseModel):
    note_id: str
    text: str
    radiology_reports: List[RawReport] = []

# Context Models
class GenerationContext(BaseModel):
    note_id: str
    target: TargetKind
    variant: ContextVariant
    text: str
    parts: List[str] = Field(min_length=1)

class TrainingManifest(BaseModel):
    model_family: ModelFamily = ModelFamily.DECODER
    learning_rate: float = Field(default=2e-4, gt=0)
    lora_rank: int = Field(default=64, gt=0)
    lora_alpha: int = Field(default=16, gt=0)
    lora_target: str = "all linear layers"
    batch_size: int = Field(default=16, gt=0)
    epochs: int = Field(default=5, gt=0)
    warmup_ratio: float = Field(default=0.03, gt=0, lt=1)
    max_input_tokens: int = Field(default=2816, gt=0)
    max_output_tokens: int = Field(default=1280, gt=0)
    optimizer: str = "adam"
    precision: str = "bf16"

class DatasetRecord(BaseModel):
    note_id: str
    target_kind: TargetKind
    prompt: str
    completion: str

class SkipEntry(BaseModel):
    note_id: str
    error: str
    message: str

class DatasetResult(BaseModel):
    records: List[DatasetRecord]
    skipped: List[SkipEntry] = []

# Token Budget Models
class TokenBudgetPolicy(BaseModel):
    percentile: float = Field(default=0.85, gt=0, le=1)
    multiple: int = Field(default=256, gt=0)

class TokenBudgetReport(BaseModel):
    policy: TokenBudgetPolicy
    budgets: Dict[str, int]
    counts: Dict[str, List[int]]
    skipped_fields: List[str] = []
    skipped_notes: List[SkipEntry] = []

# Decoding Models
class DecodeConfig(BaseModel):
    max_new_tokens: int = Field(default=256, ge=0)
    beam_width: int = Field(default=4, gt=0)
    nucleus_p: float = Field(default=0.9, gt=0, le=1)
    contrastive_k: int = Field(default=6, ge=1)
    contrastive_alpha: float = Field(default=0.6, ge=0, le=1)
    seed: int = 0
    length_penalty: float = 1.0

class StepRecord(BaseModel):
    candidates: List[int]
    scores: List[float]
    chosen: Optional[int] = None

class DecodeTrace(BaseModel):
    algorithm: DecodeAlgorithm
    tokens: List[int]
    steps: List[StepRecord] = []
    stop_reason: StopReason

# Merge Models
class TiesConfig(BaseModel):
    density: float = Field(default=0.5, gt=0, le=1)
    weights: Optional[List[float]] = None
    lam: float = Field(default=1.0, alias="lambda")

    model_config = ConfigDict(populate_by_name=True)

    @model_validator(mode="after")
    def check_weights(self):
        if self.weights is not None and any(w <= 0 for w in self.weights):
            raise ValueError("TIES weights must be positive")
        return self

# Metric Models
class MetricValue(BaseModel):
    name: MetricName
    value: float = Field(ge=0, le=1)

class MetricReport(BaseModel):
    bhc: Dict[MetricName, float] = {}
    di: Dict[MetricName, float] = {}
    combined: Dict[MetricName, float] = {}
    overall: Optional[float] = None
    complete: bool = False
    missing: List[MetricName] = []
    cases: Dict[TargetKind, int] = {}
    label: Optional[str] = None

# Run persistence
class RunManifest(BaseModel):
    command: str
    config: Dict[str, object]
    inputs: List[str]
    outputs: List[str]
    digests: Dict[str, str]
    tool_version: str
    duration_seconds: float

# API Request/Response Models
class ParseNoteRequest(BaseModel):
    note_id: str
    text: str

class ContextRequest(BaseModel):
    note_id: str
    text: str
    radiology_reports: List[RawReport] = []
    target: TargetKind
    variant: ContextVariant = ContextVariant.BASE

class ContextResponse(GenerationContext):
    prompt: str
    reference: str

class ScoreRequest(BaseModel):
    metric: MetricName
    hypothesis: str
    reference: str

class AggregateRequest(BaseModel):
    combined: Optional[Dict[MetricName, float]] = None
    bhc: Optional[Dict[MetricName, float]] = None
    di: Optional[Dict[MetricName, float]] = None
    label: Optional[str] = None
