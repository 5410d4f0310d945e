"""Key-value knowledge bank: ingest, exact k-NN retrieval, persistence.

The bank maps embedding keys to paragraph values. Keys are float32
vectors of one shared dimension; values carry the paragraph text and
metadata. Retrieval is exact brute-force nearest neighbour under L2
distance, which keeps results reproducible and makes the bank a valid
oracle for any approximate index layered on later.

On-disk layout (all little-endian):

    magic   8 bytes  b"ARRKB01\\n"
    dim     u32
    count   u64
    entries count * (u32 id + dim * f32 key)

Paragraph values live in a JSONL sidecar at ``<path>.jsonl``, one object
per entry, same order as the binary file.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import (
    ArrError,
    BankConsistencyError,
    BankFormatError,
    DimensionMismatchError,
    DuplicateIdError,
    EmptyCorpusError,
    MalformedRecordError,
)

MAGIC = b"ARRKB01\n"
_MAX_ID = 0xFFFFFFFF  # ids are stored as u32


@dataclass(frozen=True)
class Paragraph:
    """One retrievable unit: a titled paragraph with optional provenance."""

    id: int
    title: str
    body: str
    source: Optional[str] = None

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError(f"id must be non-negative, got {self.id}")
        if not self.body:
            raise ValueError(f"paragraph {self.id} has an empty body")

    def key_text(self) -> str:
        """The text that gets embedded as this paragraph's key."""
        return self.title + "\n" + self.body


@dataclass(frozen=True)
class RetrievalHit:
    """One k-NN result; ``rank`` is 1-based in ascending distance."""

    rank: int
    distance: float
    paragraph: Paragraph

    @property
    def paragraph_id(self) -> int:
        return self.paragraph.id


def _check_id(record_id: int) -> None:
    if not 0 <= record_id <= _MAX_ID:
        raise ValueError(f"id {record_id} outside storable range [0, {_MAX_ID}]")


def ingest_corpus(path: Union[str, Path]) -> list[Paragraph]:
    """Read a corpus JSONL file into paragraphs, preserving file order.

    Each non-blank line must be a JSON object with string ``title`` and
    ``body``, an optional non-negative integer ``id``, and an optional
    string ``source``. A record without an id gets its 0-based position
    among the file's records. Duplicate ids and empty files are errors.
    """
    paragraphs: list[Paragraph] = []
    seen: set[int] = set()
    record_index = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecordError(line_no, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(record, dict):
                raise MalformedRecordError(line_no, "record is not a JSON object")
            title = record.get("title")
            body = record.get("body")
            if not isinstance(title, str):
                raise MalformedRecordError(line_no, "missing or non-string 'title'")
            if not isinstance(body, str):
                raise MalformedRecordError(line_no, "missing or non-string 'body'")
            record_id = record.get("id", record_index)
            if isinstance(record_id, bool) or not isinstance(record_id, int):
                raise MalformedRecordError(line_no, "'id' must be an integer")
            try:
                _check_id(record_id)
            except ValueError as exc:
                raise MalformedRecordError(line_no, str(exc)) from exc
            source = record.get("source")
            if source is not None and not isinstance(source, str):
                raise MalformedRecordError(line_no, "'source' must be a string")
            if not body:
                raise MalformedRecordError(line_no, "'body' must be nonempty")
            if record_id in seen:
                raise DuplicateIdError(record_id)
            seen.add(record_id)
            paragraphs.append(Paragraph(id=record_id, title=title, body=body, source=source))
            record_index += 1
    if not paragraphs:
        raise EmptyCorpusError(f"no records in {path}")
    return paragraphs


class KnowledgeBank:
    """In-memory key-value store with exact L2 nearest-neighbour search.

    Entries are held in ascending-id order; combined with a stable sort
    in ``knn`` this makes equal-distance ties resolve to the lower id,
    so retrieval output is fully deterministic.
    """

    def __init__(
        self,
        ids: np.ndarray,
        keys: np.ndarray,
        paragraphs: Sequence[Paragraph],
        embedder_tag: str = "",
    ):
        ids = np.asarray(ids, dtype=np.int64)
        keys = np.asarray(keys, dtype=np.float32)
        if keys.ndim != 2:
            raise ValueError(f"keys must be a 2-D matrix, got shape {keys.shape}")
        if not (len(ids) == keys.shape[0] == len(paragraphs)):
            raise BankConsistencyError(
                f"ids ({len(ids)}), keys ({keys.shape[0]}) and paragraphs "
                f"({len(paragraphs)}) disagree on entry count"
            )
        if len(ids) > 1 and not np.all(ids[1:] > ids[:-1]):
            raise BankConsistencyError("ids must be strictly increasing")
        for i, paragraph in enumerate(paragraphs):
            if paragraph.id != int(ids[i]):
                raise BankConsistencyError(
                    f"paragraph at position {i} has id {paragraph.id}, key row says {int(ids[i])}"
                )
        self._ids = ids
        self._keys = keys
        self._paragraphs = list(paragraphs)
        # not persisted by save_bank; loaded banks report ""
        self.embedder_tag = embedder_tag
        self._keys64: Optional[np.ndarray] = None  # lazy float64 view for search

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def dim(self) -> int:
        return int(self._keys.shape[1])

    @property
    def ids(self) -> np.ndarray:
        return self._ids

    @property
    def keys(self) -> np.ndarray:
        return self._keys

    @property
    def paragraphs(self) -> list[Paragraph]:
        return list(self._paragraphs)

    def get(self, paragraph_id: int) -> Paragraph:
        pos = int(np.searchsorted(self._ids, paragraph_id))
        if pos == len(self._ids) or int(self._ids[pos]) != paragraph_id:
            raise KeyError(paragraph_id)
        return self._paragraphs[pos]

    def knn(self, query: np.ndarray, k: int) -> list[RetrievalHit]:
        """Exact k nearest entries to ``query`` under L2 distance.

        Distances are computed in float64 (keys widened from their
        float32 storage) so the ordering matches an independent
        double-precision computation. Ties on distance resolve to the
        lower id. ``k`` larger than the bank returns every entry.
        """
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        query = np.asarray(query, dtype=np.float64).reshape(-1)
        if query.shape[0] != self.dim:
            raise DimensionMismatchError(
                f"query has dim {query.shape[0]}, bank has dim {self.dim}"
            )
        if len(self._ids) == 0:
            return []
        if self._keys64 is None:
            self._keys64 = self._keys.astype(np.float64)
        diff = self._keys64 - query
        distances = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        # stable sort + ascending-id storage order = lower id wins ties
        order = np.argsort(distances, kind="stable")[: min(k, len(self._ids))]
        return [
            RetrievalHit(
                rank=rank,
                distance=float(distances[pos]),
                paragraph=self._paragraphs[pos],
            )
            for rank, pos in enumerate(order.tolist(), start=1)
        ]


def build_bank(paragraphs: Sequence[Paragraph], embedder) -> KnowledgeBank:
    """Embed each paragraph's key text and assemble a bank.

    Entries are sorted by ascending id regardless of input order, which
    is what the storage format and tie-breaking require. The embedder
    must expose ``embed_many`` and ``dim``.
    """
    if not paragraphs:
        raise EmptyCorpusError("cannot build a bank from zero paragraphs")
    seen: set[int] = set()
    for paragraph in paragraphs:
        _check_id(paragraph.id)
        if paragraph.id in seen:
            raise DuplicateIdError(paragraph.id)
        seen.add(paragraph.id)
    ordered = sorted(paragraphs, key=lambda p: p.id)
    texts = [p.key_text() for p in ordered]
    try:
        keys = embedder.embed_many(texts)
    except ArrError:
        # batch failed: retry one at a time to name the failing paragraph
        for paragraph, text in zip(ordered, texts):
            try:
                embedder.embed_one(text)
            except ArrError as exc:
                raise type(exc)(f"embedding paragraph id {paragraph.id}: {exc}") from exc
        raise
    keys = np.asarray(keys, dtype=np.float32)
    if keys.ndim != 2 or keys.shape[0] != len(ordered):
        raise DimensionMismatchError(
            f"embedder returned shape {keys.shape} for {len(ordered)} paragraphs"
        )
    ids = np.array([p.id for p in ordered], dtype=np.int64)
    return KnowledgeBank(
        ids=ids, keys=keys, paragraphs=ordered, embedder_tag=getattr(embedder, "tag", "")
    )


def _sidecar_path(path: Union[str, Path]) -> str:
    return str(path) + ".jsonl"


def save_bank(bank: KnowledgeBank, path: Union[str, Path]) -> None:
    """Write the bank's binary key file and its paragraph sidecar.

    Serialization is deterministic: the same bank always produces the
    same bytes, so saved files can be compared directly.
    """
    dim = bank.dim
    entry_dtype = np.dtype([("id", "<u4"), ("key", "<f4", (dim,))])
    entries = np.zeros(len(bank), dtype=entry_dtype)
    entries["id"] = bank.ids.astype(np.uint32)
    entries["key"] = bank.keys
    header = MAGIC + struct.pack("<IQ", dim, len(bank))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(entries.tobytes())
    with open(_sidecar_path(path), "w", encoding="utf-8") as fh:
        for paragraph in bank.paragraphs:
            record: dict = {"id": paragraph.id, "title": paragraph.title, "body": paragraph.body}
            if paragraph.source is not None:
                record["source"] = paragraph.source
            fh.write(json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n")


def load_bank(path: Union[str, Path]) -> KnowledgeBank:
    """Read a bank written by ``save_bank``, verifying structure as it goes.

    Raises ``BankFormatError`` for a bad magic, a truncated file, or
    trailing bytes; ``BankConsistencyError`` when the sidecar is missing
    or disagrees with the binary ids.
    """
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4 + 8:
        raise BankFormatError(f"file too short to hold a header ({len(raw)} bytes)")
    if raw[: len(MAGIC)] != MAGIC:
        raise BankFormatError(f"bad magic {raw[:len(MAGIC)]!r}")
    dim = int(np.frombuffer(raw, dtype="<u4", count=1, offset=len(MAGIC))[0])
    count = int(np.frombuffer(raw, dtype="<u8", count=1, offset=len(MAGIC) + 4)[0])
    if dim < 1:
        raise BankFormatError(f"dim must be >= 1, got {dim}")
    expected_size = len(MAGIC) + 4 + 8 + count * (4 + dim * 4)
    if len(raw) != expected_size:
        raise BankFormatError(
            f"file is {len(raw)} bytes, header implies {expected_size}"
        )
    entry_dtype = np.dtype([("id", "<u4"), ("key", "<f4", (dim,))])
    entries = np.frombuffer(raw, dtype=entry_dtype, count=count, offset=len(MAGIC) + 4 + 8)
    ids = entries["id"].astype(np.int64)
    if count > 1 and not np.all(ids[1:] > ids[:-1]):
        raise BankFormatError("ids are not strictly increasing")
    keys = entries["key"].astype(np.float32).reshape(count, dim)

    sidecar = Path(_sidecar_path(path))
    if not sidecar.exists():
        raise BankConsistencyError(f"missing paragraph sidecar {sidecar}")
    paragraphs: list[Paragraph] = []
    with open(sidecar, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BankConsistencyError(f"sidecar line {line_no}: invalid JSON") from exc
            if (
                not isinstance(record, dict)
                or not isinstance(record.get("id"), int)
                or not isinstance(record.get("title"), str)
                or not isinstance(record.get("body"), str)
            ):
                raise BankConsistencyError(f"sidecar line {line_no}: bad record shape")
            source = record.get("source")
            if source is not None and not isinstance(source, str):
                raise BankConsistencyError(f"sidecar line {line_no}: 'source' must be a string")
            try:
                paragraphs.append(
                    Paragraph(id=record["id"], title=record["title"], body=record["body"], source=source)
                )
            except ValueError as exc:
                raise BankConsistencyError(f"sidecar line {line_no}: {exc}") from exc
    if len(paragraphs) != count:
        raise BankConsistencyError(
            f"sidecar has {len(paragraphs)} records, binary file has {count}"
        )
    for i, paragraph in enumerate(paragraphs):
        if paragraph.id != int(ids[i]):
            raise BankConsistencyError(
                f"sidecar record {i} has id {paragraph.id}, binary file says {int(ids[i])}"
            )
    return KnowledgeBank(ids=ids, keys=keys, paragraphs=paragraphs)
