"""Built-in tokenizers: whitespace+punctuation and a loadable byte-pair vocabulary."""

import json
import logging
import re
from typing import Dict, List, Optional, Sequence, Tuple

from dischargekit.errors import InvalidValue, TokenizerError
from dischargekit.models import TokenizerKind, TruncationSide

log = logging.getLogger(__name__)

# maximal word-character runs, every other non-space character on its own
WORD_PATTERN = re.compile(r"\w+|[^\w\s]")
END_OF_WORD = "</w>"


def split_words(text: str) -> List[str]:
    return WORD_PATTERN.findall(text)


class Tokenizer:
    def __init__(
        self,
        kind: TokenizerKind = TokenizerKind.WHITESPACE,
        vocabulary: Optional[Dict[str, int]] = None,
        merges: Optional[Sequence[Tuple[str, str]]] = None,
        unk_id: Optional[int] = None,
        eos_id: Optional[int] = None,
    ):
        self.kind = TokenizerKind(kind)
        self.vocabulary = dict(vocabulary or {})
        self.merges = [tuple(m) for m in (merges or [])]
        self.unk_id = unk_id
        self.eos_id = eos_id
        self._ranks = {pair: rank for rank, pair in enumerate(self.merges)}
        self._id_to_token = {i: t for t, i in self.vocabulary.items()}
        self._word_cache: Dict[str, Tuple[str, ...]] = {}
        self._validate()

    def _validate(self):
        if self.kind == TokenizerKind.WHITESPACE and self.merges:
            raise TokenizerError("whitespace tokenizer takes no merges")
        if not self.vocabulary:
            return
        ids = sorted(self.vocabulary.values())
        if ids != list(range(len(ids))):
            raise TokenizerError("vocabulary ids must be dense in [0, vocab_size)")
        for name, value in (("eos", self.eos_id), ("unk", self.unk_id)):
            if value is not None and not 0 <= value < len(ids):
                raise TokenizerError(f"{name} id {value} outside the vocabulary")

    @classmethod
    def whitespace(cls, vocabulary: Optional[Dict[str, int]] = None, **kwargs) -> "Tokenizer":
        return cls(TokenizerKind.WHITESPACE, vocabulary=vocabulary, **kwargs)

    @classmethod
    def from_file(cls, path: str) -> "Tokenizer":
        """Load {"vocab": {...}, "merges": ["a b", ...], "eos": id} (optional "kind", "unk")"""
        try:
            with open(path, "r", encoding="utf-8") as handle:
                data = json.load(handle)
        except (OSError, json.JSONDecodeError) as e:
            raise TokenizerError(f"cannot read tokenizer file {path}: {e}")
        vocab = data.get("vocab") or {}
        kind = TokenizerKind(data.get("kind", TokenizerKind.BYTE_PAIR.value))
        merges = []
        for entry in data.get("merges", []):
            parts = entry.split(" ") if isinstance(entry, str) else list(entry)
            if len(parts) != 2:
                raise TokenizerError(f"malformed merge entry {entry!r}")
            merges.append((parts[0], parts[1]))
        unk = data.get("unk", vocab.get("<unk>"))
        return cls(kind, vocabulary=vocab, merges=merges, unk_id=unk, eos_id=data.get("eos"))

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    def _bpe_word(self, word: str) -> Tuple[str, ...]:
        cached = self._word_cache.get(word)
        if cached is not None:
            return cached
        symbols = list(word[:-1]) + [word[-1] + END_OF_WORD]
        while len(symbols) > 1:
            ranked = [
                (self._ranks[pair], i)
                for i, pair in enumerate(zip(symbols, symbols[1:]))
                if pair in self._ranks
            ]
            if not ranked:
                break
            first, second = self.merges[min(ranked)[0]]
            merged, i = [], 0
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == first and symbols[i + 1] == second:
                    merged.append(first + second)
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        result = tuple(symbols)
        self._word_cache[word] = result
        return result

    def tokenize(self, text: str) -> List[str]:
        if self.kind == TokenizerKind.WHITESPACE:
            return split_words(text)
        tokens: List[str] = []
        for word in text.split():
            tokens.extend(self._bpe_word(word))
        return tokens

    def spans(self, text: str) -> List[Tuple[int, int]]:
        """Character span of every token, in order"""
        if self.kind == TokenizerKind.WHITESPACE:
            return [m.span() for m in WORD_PATTERN.finditer(text)]
        spans = []
        for match in re.finditer(r"\S+", text):
            position = match.start()
            for symbol in self._bpe_word(match.group()):
                width = len(symbol[: -len(END_OF_WORD)] if symbol.endswith(END_OF_WORD) else symbol)
                spans.append((position, position + width))
                position += width
        return spans

    def encode(self, text: str) -> List[int]:
        ids = []
        for token in self.tokenize(text):
            token_id = self.vocabulary.get(token, self.unk_id)
            if token_id is None:
                raise TokenizerError(f"token {token!r} is not in the vocabulary and no unk id is set")
            ids.append(token_id)
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        tokens = [self._id_to_token.get(int(i), "") for i in ids if int(i) != self.eos_id]
        if self.kind == TokenizerKind.WHITESPACE:
            return " ".join(tokens)
        return "".join(tokens).replace(END_OF_WORD, " ").strip()


def truncate_text(tokenizer: Tokenizer, text: str, budget: int, side: TruncationSide) -> str:
    """Keep at most `budget` tokens of text, cutting at token boundaries"""
    if budget <= 0:
        raise InvalidValue("budget must be positive")
    spans = tokenizer.spans(text)
    if len(spans) <= budget:
        return text
    if TruncationSide(side) == TruncationSide.LEFT:
        return text[spans[-budget][0]:]
    return text[: spans[budget - 1][1]]
