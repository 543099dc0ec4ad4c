"""LoRA merge-into-base, TIES merging and the NTM1 tensor file format.

Tensors are float32 numpy arrays; arithmetic is carried out in float64 and
cast back to float32 on output.
"""

import json
import logging
import math
import struct
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from dischargekit.errors import (
    CorruptFile,
    InvalidValue,
    MissingBaseTensor,
    NameSetMismatch,
    ShapeMismatch,
)
from dischargekit.models import TiesConfig

log = logging.getLogger(__name__)

NamedTensorMap = Dict[str, np.ndarray]

MAGIC = b"NTM1"
LORA_A_SUFFIX = ".lora_A"
LORA_B_SUFFIX = ".lora_B"


def as_tensor(values) -> np.ndarray:
    tensor = np.asarray(values, dtype=np.float32)
    if tensor.ndim == 0 or any(d <= 0 for d in tensor.shape):
        raise ShapeMismatch(f"tensor shape must be a list of positive integers, got {list(tensor.shape)}")
    return tensor


class LoraAdapter:
    """Low-rank update pairs: for weight W [out x in], A is [r x in] and B is [out x r]"""

    def __init__(self, pairs: Dict[str, Tuple[np.ndarray, np.ndarray]], rank: int, alpha: int):
        if rank <= 0:
            raise InvalidValue("LoRA rank must be positive")
        self.pairs = {name: (as_tensor(a), as_tensor(b)) for name, (a, b) in pairs.items()}
        self.rank = int(rank)
        self.alpha = int(alpha)
        for name, (a, b) in self.pairs.items():
            if a.ndim != 2 or b.ndim != 2 or a.shape[0] != self.rank or b.shape[1] != self.rank:
                raise ShapeMismatch(
                    f"{name}: expected A [{self.rank} x in] and B [out x {self.rank}], "
                    f"got {list(a.shape)} and {list(b.shape)}"
                )

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    @classmethod
    def from_tensor_map(cls, tensors: NamedTensorMap, alpha: int, rank: Optional[int] = None) -> "LoraAdapter":
        """Pair up `<name>.lora_A` / `<name>.lora_B` entries; rank defaults to A's row count"""
        pairs = {}
        for key in tensors:
            if key.endswith(LORA_A_SUFFIX):
                name = key[: -len(LORA_A_SUFFIX)]
                b_key = name + LORA_B_SUFFIX
                if b_key not in tensors:
                    raise NameSetMismatch(f"{key} has no matching {b_key}")
                pairs[name] = (tensors[key], tensors[b_key])
            elif key.endswith(LORA_B_SUFFIX):
                if key[: -len(LORA_B_SUFFIX)] + LORA_A_SUFFIX not in tensors:
                    raise NameSetMismatch(f"{key} has no matching lora_A")
            else:
                raise NameSetMismatch(f"{key} is not a LoRA tensor name")
        if not pairs:
            raise NameSetMismatch("adapter file holds no LoRA pairs")
        if rank is None:
            rank = next(iter(pairs.values()))[0].shape[0]
        return cls(pairs, rank, alpha)

    def to_tensor_map(self) -> NamedTensorMap:
        tensors = {}
        for name, (a, b) in self.pairs.items():
            tensors[name + LORA_A_SUFFIX] = a
            tensors[name + LORA_B_SUFFIX] = b
        return tensors


def _delta(adapter: LoraAdapter, name: str) -> np.ndarray:
    a, b = adapter.pairs[name]
    return adapter.scaling * (b.astype(np.float64) @ a.astype(np.float64))


def lora_merge(base: NamedTensorMap, adapter: LoraAdapter) -> NamedTensorMap:
    """W' = W + (alpha / r) * B @ A for every adapted weight"""
    merged = {name: tensor.copy() for name, tensor in base.items()}
    for name, (a, b) in adapter.pairs.items():
        if name not in base:
            raise MissingBaseTensor(f"adapter targets {name}, which is not in the base map")
        weight = base[name]
        expected = (b.shape[0], a.shape[1])
        if weight.shape != expected:
            raise ShapeMismatch(f"{name}: base shape {list(weight.shape)}, adapter update {list(expected)}")
        merged[name] = (weight.astype(np.float64) + _delta(adapter, name)).astype(np.float32)
    return merged


def compose_delta(adapter: LoraAdapter) -> NamedTensorMap:
    """The full-rank update (alpha / r) * B @ A for each adapted weight"""
    return {name: _delta(adapter, name).astype(np.float32) for name in adapter.pairs}


def _check_same_layout(maps: Sequence[NamedTensorMap]):
    names = set(maps[0])
    for other in maps[1:]:
        if set(other) != names:
            raise NameSetMismatch(f"tensor names differ: {sorted(names ^ set(other))}")
    for name in names:
        shapes = {tuple(m[name].shape) for m in maps}
        if len(shapes) > 1:
            raise ShapeMismatch(f"{name}: shapes differ across inputs {sorted(shapes)}")


def task_vector(base: NamedTensorMap, finetuned: NamedTensorMap) -> NamedTensorMap:
    """Elementwise finetuned - base"""
    _check_same_layout([base, finetuned])
    return {
        name: (finetuned[name].astype(np.float64) - base[name].astype(np.float64)).astype(np.float32)
        for name in base
    }


def apply_delta(base: NamedTensorMap, delta: NamedTensorMap) -> NamedTensorMap:
    """base + delta for every name in delta; other tensors copied"""
    merged = {name: tensor.copy() for name, tensor in base.items()}
    for name, update in delta.items():
        if name not in base:
            raise MissingBaseTensor(f"delta targets {name}, which is not in the base map")
        if base[name].shape != update.shape:
            raise ShapeMismatch(f"{name}: base shape {list(base[name].shape)}, delta {list(update.shape)}")
        merged[name] = (base[name].astype(np.float64) + update.astype(np.float64)).astype(np.float32)
    return merged


def trim_count(density: float, numel: int) -> int:
    return min(numel, math.ceil(Fraction(str(density)) * numel))


def _trim(flat: np.ndarray, keep: int) -> np.ndarray:
    # largest magnitudes first, lower flat index wins ties
    order = np.lexsort((np.arange(flat.size), -np.abs(flat)))
    trimmed = np.zeros_like(flat)
    trimmed[order[:keep]] = flat[order[:keep]]
    return trimmed


def _ties_tensor(tensors: List[np.ndarray], weights: List[float], density: float, lam: float) -> np.ndarray:
    shape = tensors[0].shape
    flats = [t.astype(np.float64).ravel() for t in tensors]
    keep = trim_count(density, flats[0].size)
    trimmed = [_trim(flat, keep) for flat in flats]

    total = np.zeros_like(trimmed[0])
    for w, values in zip(weights, trimmed):
        total = total + w * values
    # zero sums elect the positive sign
    positive = total >= 0

    numerator = np.zeros_like(total)
    denominator = np.zeros_like(total)
    for w, values in zip(weights, trimmed):
        agrees = np.where(positive, values > 0, values < 0)
        numerator = numerator + np.where(agrees, w * values, 0.0)
        denominator = denominator + np.where(agrees, w, 0.0)
    merged = np.divide(numerator, denominator, out=np.zeros_like(numerator), where=denominator > 0)
    return (lam * merged).reshape(shape).astype(np.float32)


def ties_merge(inputs: Sequence[NamedTensorMap], cfg: Optional[TiesConfig] = None) -> NamedTensorMap:
    """Trim, elect sign and disjoint-merge task vectors tensor by tensor"""
    cfg = cfg or TiesConfig()
    if not inputs:
        raise InvalidValue("TIES merging needs at least one input")
    weights = cfg.weights if cfg.weights is not None else [1.0] * len(inputs)
    if len(weights) != len(inputs):
        raise InvalidValue(f"{len(weights)} weights given for {len(inputs)} inputs")
    _check_same_layout(inputs)
    log.info("TIES merging %d inputs (density %s, lambda %s)", len(inputs), cfg.density, cfg.lam)
    return {
        name: _ties_tensor([m[name] for m in inputs], weights, cfg.density, cfg.lam)
        for name in inputs[0]
    }


def ties_merge_adapters(adapters: Sequence[LoraAdapter], cfg: Optional[TiesConfig] = None) -> LoraAdapter:
    """TIES applied to the A and B matrices of each adapted weight separately"""
    if not adapters:
        raise InvalidValue("TIES merging needs at least one adapter")
    ranks = {a.rank for a in adapters}
    alphas = {a.alpha for a in adapters}
    if len(ranks) > 1 or len(alphas) > 1:
        raise ShapeMismatch(f"adapters disagree on rank/alpha: {sorted(ranks)} / {sorted(alphas)}")
    merged = ties_merge([a.to_tensor_map() for a in adapters], cfg)
    return LoraAdapter.from_tensor_map(merged, alpha=adapters[0].alpha, rank=adapters[0].rank)


# File format: magic, u64 LE header length, JSON header, little-endian f32 data region
def save_tensor_map(tensors: NamedTensorMap, path: str) -> str:
    header = {}
    chunks = []
    offset = 0
    for name in sorted(tensors):
        tensor = as_tensor(tensors[name])
        data = tensor.astype("<f4").tobytes(order="C")
        header[name] = {"dtype": "f32", "shape": list(tensor.shape), "offset": offset, "nbytes": len(data)}
        chunks.append(data)
        offset += len(data)
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<Q", len(header_bytes)))
        handle.write(header_bytes)
        for chunk in chunks:
            handle.write(chunk)
    return path


def load_tensor_map(path: str) -> NamedTensorMap:
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:4] != MAGIC:
        raise CorruptFile(f"{path}: bad magic bytes")
    if len(blob) < 12:
        raise CorruptFile(f"{path}: truncated header length")
    (header_len,) = struct.unpack("<Q", blob[4:12])
    if 12 + header_len > len(blob):
        raise CorruptFile(f"{path}: truncated header")
    try:
        header = json.loads(blob[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptFile(f"{path}: unreadable header ({e})")
    if not isinstance(header, dict):
        raise CorruptFile(f"{path}: header must be a JSON object")

    data = blob[12 + header_len:]
    tensors: NamedTensorMap = {}
    regions = []
    for name, entry in header.items():
        try:
            shape = [int(d) for d in entry["shape"]]
            offset, nbytes = int(entry["offset"]), int(entry["nbytes"])
            dtype = entry["dtype"]
        except (KeyError, TypeError, ValueError):
            raise CorruptFile(f"{path}: malformed header entry for {name}")
        if dtype != "f32":
            raise CorruptFile(f"{path}: {name} has unsupported dtype {dtype}")
        if not shape or any(d <= 0 for d in shape) or nbytes != 4 * math.prod(shape):
            raise CorruptFile(f"{path}: {name} shape {shape} does not match {nbytes} bytes")
        if offset < 0 or offset + nbytes > len(data):
            raise CorruptFile(f"{path}: {name} payload is truncated")
        regions.append((offset, offset + nbytes, name))
        tensors[name] = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=offset).astype(np.float32).reshape(shape)

    regions.sort()
    for (_, end, first), (start, _, second) in zip(regions, regions[1:]):
        if start < end:
            raise CorruptFile(f"{path}: regions of {first} and {second} overlap")
    return tensors
