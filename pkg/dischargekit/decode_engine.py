"""Decoding algorithms over an abstract next-token scorer.

All selections break ties toward the lowest token id; beam finalists with
equal normalized scores are ordered lexicographically. Logits are shifted by
their maximum before any softmax so adding a constant to a step's logits
never changes a selection.
"""

import json
import logging
from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from dischargekit.errors import DecodeError, DimensionMismatch, InvalidK, VocabMismatch
from dischargekit.models import DecodeAlgorithm, DecodeConfig, DecodeTrace, StepRecord, StopReason

log = logging.getLogger(__name__)


class LanguageModel(ABC):
    """Next-token scorer. Implementations must tolerate concurrent read-only queries."""

    vocab_size: int
    eos_id: int

    @abstractmethod
    def next_logits(self, prefix: Sequence[int]) -> np.ndarray:
        """Logits over the vocabulary for the token following prefix"""

    @abstractmethod
    def token_repr(self, token_id: int) -> np.ndarray:
        """Fixed-dimension representation of a token"""


class ToyLM(LanguageModel):
    """Table-driven model: the next-token logits depend only on the last token"""

    def __init__(self, logit_table: np.ndarray, embedding_table: np.ndarray, eos_id: int):
        self.logit_table = logit_table
        self.embedding_table = embedding_table
        self.vocab_size = logit_table.shape[0]
        self.eos_id = eos_id

    def next_logits(self, prefix: Sequence[int]) -> np.ndarray:
        if len(prefix) == 0:
            raise DecodeError("prefix must be non-empty")
        return self.logit_table[int(prefix[-1])].copy()

    def token_repr(self, token_id: int) -> np.ndarray:
        return self.embedding_table[int(token_id)].copy()


def toy_lm_from_tables(logit_table, embedding_table, eos_id: int) -> ToyLM:
    """Build a ToyLM, checking that the tables agree on the vocabulary"""
    logits = np.asarray(logit_table, dtype=np.float64)
    embeddings = np.asarray(embedding_table, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] != logits.shape[1]:
        raise DimensionMismatch(f"logit table must be square, got shape {logits.shape}")
    if embeddings.ndim != 2 or embeddings.shape[0] != logits.shape[0] or embeddings.shape[1] < 1:
        raise DimensionMismatch(
            f"embedding table must be [{logits.shape[0]} x d>=1], got shape {embeddings.shape}"
        )
    if not 0 <= int(eos_id) < logits.shape[0]:
        raise DimensionMismatch(f"eos id {eos_id} outside vocabulary of {logits.shape[0]}")
    return ToyLM(logits, embeddings, int(eos_id))


def load_toy_lm(path: str) -> ToyLM:
    """Read {"logits": [[...]], "embeddings": [[...]], "eos": id}"""
    with open(path, "r", encoding="utf-8") as handle:
        data = json.load(handle)
    try:
        return toy_lm_from_tables(data["logits"], data["embeddings"], data["eos"])
    except KeyError as e:
        raise DimensionMismatch(f"{path}: missing field {e}")
    except ValueError as e:
        raise DimensionMismatch(f"{path}: ragged table ({e})")


class LogitEnsemble(LanguageModel):
    """Two models behind one interface; logits are the elementwise mean"""

    def __init__(self, lm_a: LanguageModel, lm_b: LanguageModel):
        if lm_a.vocab_size != lm_b.vocab_size or lm_a.eos_id != lm_b.eos_id:
            raise VocabMismatch(
                f"ensemble members disagree: vocab {lm_a.vocab_size}/{lm_b.vocab_size}, "
                f"eos {lm_a.eos_id}/{lm_b.eos_id}"
            )
        self.lm_a = lm_a
        self.lm_b = lm_b
        self.vocab_size = lm_a.vocab_size
        self.eos_id = lm_a.eos_id

    def next_logits(self, prefix: Sequence[int]) -> np.ndarray:
        a = np.asarray(self.lm_a.next_logits(prefix), dtype=np.float64)
        b = np.asarray(self.lm_b.next_logits(prefix), dtype=np.float64)
        return (a + b) / 2.0

    def token_repr(self, token_id: int) -> np.ndarray:
        return self.lm_a.token_repr(token_id)


def _logits(lm: LanguageModel, sequence: Sequence[int]) -> np.ndarray:
    logits = np.asarray(lm.next_logits(sequence), dtype=np.float64)
    if logits.shape != (lm.vocab_size,):
        raise DimensionMismatch(f"model returned {logits.shape} logits for vocab {lm.vocab_size}")
    return logits


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    return shifted - np.log(np.sum(np.exp(shifted)))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - np.max(logits))
    return shifted / np.sum(shifted)


def _check_prefix(prefix: Sequence[int]) -> List[int]:
    prefix = [int(t) for t in prefix]
    if not prefix:
        raise DecodeError("prefix must be non-empty")
    return prefix


def _finish(algorithm: DecodeAlgorithm, tokens: List[int], steps: List[StepRecord], eos_id: int) -> DecodeTrace:
    stop = StopReason.EOS if tokens and tokens[-1] == eos_id else StopReason.MAX_LEN
    return DecodeTrace(algorithm=algorithm, tokens=tokens, steps=steps, stop_reason=stop)


def _stepwise(lm: LanguageModel, prefix, cfg: DecodeConfig, algorithm: DecodeAlgorithm, choose) -> DecodeTrace:
    """Shared loop for the one-token-per-step decoders"""
    sequence = _check_prefix(prefix)
    tokens: List[int] = []
    steps: List[StepRecord] = []
    for _ in range(cfg.max_new_tokens):
        token, record = choose(sequence, _logits(lm, sequence))
        steps.append(record)
        tokens.append(token)
        sequence.append(token)
        if token == lm.eos_id:
            break
    return _finish(algorithm, tokens, steps, lm.eos_id)


def _greedy_choice(sequence, logits) -> Tuple[int, StepRecord]:
    # np.argmax returns the first maximum, i.e. the lowest id on ties
    token = int(np.argmax(logits))
    return token, StepRecord(candidates=[token], scores=[float(logits[token])], chosen=token)


def greedy_decode(lm: LanguageModel, prefix: Sequence[int], cfg: Optional[DecodeConfig] = None) -> DecodeTrace:
    return _stepwise(lm, prefix, cfg or DecodeConfig(), DecodeAlgorithm.GREEDY, _greedy_choice)


def beam_decode(lm: LanguageModel, prefix: Sequence[int], cfg: Optional[DecodeConfig] = None) -> DecodeTrace:
    """Beam search over summed log-probabilities with length-normalized finalists"""
    cfg = cfg or DecodeConfig()
    base = _check_prefix(prefix)
    width = cfg.beam_width
    if cfg.max_new_tokens == 0:
        return _finish(DecodeAlgorithm.BEAM, [], [], lm.eos_id)

    def normalized(tokens: Tuple[int, ...], score: float) -> float:
        return score / (len(tokens) ** cfg.length_penalty)

    live: List[Tuple[Tuple[int, ...], float]] = [((), 0.0)]
    finished: List[Tuple[float, Tuple[int, ...]]] = []
    steps: List[StepRecord] = []

    for _ in range(cfg.max_new_tokens):
        candidates = []
        for tokens, score in live:
            logprobs = log_softmax(_logits(lm, base + list(tokens)))
            for token_id in range(lm.vocab_size):
                candidates.append((tokens + (token_id,), score + float(logprobs[token_id])))
        candidates.sort(key=lambda c: (-c[1], c[0]))

        live = []
        for rank, (tokens, score) in enumerate(candidates):
            if tokens[-1] == lm.eos_id:
                # only finished hypotheses ranking inside the beam are kept
                if rank < width:
                    finished.append((normalized(tokens, score), tokens))
            else:
                live.append((tokens, score))
            if len(live) == width:
                break
        steps.append(StepRecord(
            candidates=[t[-1] for t, _ in live],
            scores=[s for _, s in live],
        ))
        if len(finished) >= width or not live:
            break

    if len(finished) < width:
        finished.extend((normalized(tokens, score), tokens) for tokens, score in live)
    best = min(finished, key=lambda f: (-f[0], f[1]))
    return _finish(DecodeAlgorithm.BEAM, list(best[1]), steps, lm.eos_id)


def nucleus_filter(logits: np.ndarray, p: float) -> Tuple[np.ndarray, np.ndarray]:
    """Smallest probability-sorted prefix with mass >= p, renormalized"""
    probs = softmax(np.asarray(logits, dtype=np.float64))
    # stable sort on negated probabilities keeps lower ids first on ties
    order = np.argsort(-probs, kind="stable")
    cumulative = np.cumsum(probs[order])
    cutoff = min(int(np.searchsorted(cumulative, p, side="left")), len(order) - 1)
    kept = order[: cutoff + 1]
    kept_probs = probs[kept] / np.sum(probs[kept])
    return kept, kept_probs


def nucleus_decode(lm: LanguageModel, prefix: Sequence[int], cfg: Optional[DecodeConfig] = None) -> DecodeTrace:
    cfg = cfg or DecodeConfig()
    rng = np.random.default_rng(cfg.seed)

    def choose(sequence, logits):
        kept, kept_probs = nucleus_filter(logits, cfg.nucleus_p)
        draw = rng.random()
        index = min(int(np.searchsorted(np.cumsum(kept_probs), draw, side="right")), len(kept) - 1)
        token = int(kept[index])
        return token, StepRecord(candidates=kept.tolist(), scores=kept_probs.tolist(), chosen=token)

    return _stepwise(lm, prefix, cfg, DecodeAlgorithm.NUCLEUS, choose)


def _unit(vector: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vector)
    return vector / norm if norm > 0 else np.zeros_like(vector)


def contrastive_decode(lm: LanguageModel, prefix: Sequence[int], cfg: Optional[DecodeConfig] = None) -> DecodeTrace:
    """Top-k candidates scored by (1-alpha)*p(v) - alpha*max cosine to the context.

    Token representations are static embedding rows, not contextual states.
    """
    cfg = cfg or DecodeConfig()
    if cfg.contrastive_k > lm.vocab_size:
        raise InvalidK(f"contrastive k={cfg.contrastive_k} exceeds vocab size {lm.vocab_size}")
    alpha = cfg.contrastive_alpha
    reprs: Dict[int, np.ndarray] = {}

    def unit_repr(token_id: int) -> np.ndarray:
        if token_id not in reprs:
            reprs[token_id] = _unit(np.asarray(lm.token_repr(token_id), dtype=np.float64))
        return reprs[token_id]

    def choose(sequence, logits):
        probs = softmax(logits)
        top = np.argsort(-probs, kind="stable")[: cfg.contrastive_k]
        candidates = np.sort(top)
        context = np.stack([unit_repr(t) for t in sequence])
        scores = []
        for token_id in candidates:
            penalty = float(np.max(context @ unit_repr(int(token_id))))
            scores.append((1 - alpha) * float(probs[token_id]) - alpha * penalty)
        token = int(candidates[int(np.argmax(scores))])
        return token, StepRecord(candidates=candidates.tolist(), scores=scores, chosen=token)

    return _stepwise(lm, prefix, cfg, DecodeAlgorithm.CONTRASTIVE, choose)


def ensemble_greedy_decode(
    lm_a: LanguageModel,
    lm_b: LanguageModel,
    prefix: Sequence[int],
    cfg: Optional[DecodeConfig] = None,
) -> DecodeTrace:
    """Greedy search over the mean of two models' raw logits"""
    return _stepwise(LogitEnsemble(lm_a, lm_b), prefix, cfg or DecodeConfig(), DecodeAlgorithm.ENSEMBLE, _greedy_choice)


def decode(
    algorithm: DecodeAlgorithm,
    lm: LanguageModel,
    prefix: Sequence[int],
    cfg: Optional[DecodeConfig] = None,
    second_lm: Optional[LanguageModel] = None,
) -> DecodeTrace:
    algorithm = DecodeAlgorithm(algorithm)
    if algorithm == DecodeAlgorithm.ENSEMBLE:
        if second_lm is None:
            raise DecodeError("ensemble decoding needs a second model")
        return ensemble_greedy_decode(lm, second_lm, prefix, cfg)
    decoders = {
        DecodeAlgorithm.GREEDY: greedy_decode,
        DecodeAlgorithm.BEAM: beam_decode,
        DecodeAlgorithm.NUCLEUS: nucleus_decode,
        DecodeAlgorithm.CONTRASTIVE: contrastive_decode,
    }
    return decoders[algorithm](lm, prefix, cfg)
