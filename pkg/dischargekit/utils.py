import hashlib
import json
import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, Iterator, List, TypeVar

from pydantic import BaseModel, ValidationError

from dischargekit.errors import CorpusError
from dischargekit.models import CorpusRecord

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def read_jsonl(path: str) -> Iterator[dict]:
    """Yield one JSON object per non-blank line"""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as e:
                    raise CorpusError(f"{path}:{line_no}: invalid JSON ({e.msg})")
    except FileNotFoundError:
        raise CorpusError(f"{path}: no such file")


def load_corpus(path: str) -> List[CorpusRecord]:
    """Load a line-delimited JSON corpus of discharge notes"""
    records = []
    for index, row in enumerate(read_jsonl(path)):
        try:
            records.append(CorpusRecord.model_validate(row))
        except ValidationError as e:
            raise CorpusError(f"{path}: record {index} is malformed: {e.errors()[0]['msg']}")
    if not records:
        raise CorpusError(f"{path}: no records")
    log.info("Loaded %d corpus records from %s", len(records), path)
    return records


def dumps(value: Any) -> str:
    """Deterministic single-line JSON"""
    if isinstance(value, BaseModel):
        value = value.model_dump(mode="json", by_alias=True)
    return json.dumps(value, ensure_ascii=False, sort_keys=True)


def atomic_write_text(path: str, text: str) -> str:
    """Write text via a temporary file in the target directory, then rename"""
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        raise OSError(f"output directory does not exist: {directory}")
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise
    return path


def write_jsonl(path: str, rows: Iterable[Any]) -> str:
    return atomic_write_text(path, "".join(dumps(row) + "\n" for row in rows))


def write_json(path: str, value: Any) -> str:
    if isinstance(value, BaseModel):
        value = value.model_dump(mode="json", by_alias=True)
    return atomic_write_text(path, json.dumps(value, ensure_ascii=False, sort_keys=True, indent=2) + "\n")


def file_digest(path: str) -> str:
    """sha256 of a file's bytes"""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return "sha256:" + digest.hexdigest()


def ordered_map(fn: Callable[[T], R], items: Iterable[T], jobs: int = 1) -> List[R]:
    """Map fn over items, optionally in threads; results keep input order"""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
