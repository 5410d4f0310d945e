"""Corpus ingestion, exact k-NN search, and bank persistence."""

import json
import math

import numpy as np
import pytest

from arrkit import (
    MAGIC,
    ArrError,
    BankConsistencyError,
    BankFormatError,
    DimensionMismatchError,
    DuplicateIdError,
    EmptyCorpusError,
    HashEmbedder,
    KnowledgeBank,
    MalformedRecordError,
    Paragraph,
    build_bank,
    ingest_corpus,
    load_bank,
    save_bank,
)
from arrkit.errors import TransportError


def _write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def _paragraphs(n=3):
    return [Paragraph(id=i, title=f"title {i}", body=f"body {i}") for i in range(n)]


class TestParagraph:
    def test_key_text_joins_title_and_body(self):
        p = Paragraph(id=1, title="t", body="b")
        assert p.key_text() == "t\nb"

    def test_negative_id_rejected(self):
        with pytest.raises(ValueError):
            Paragraph(id=-1, title="t", body="b")

    def test_empty_body_rejected(self):
        with pytest.raises(ValueError):
            Paragraph(id=1, title="t", body="")

    def test_empty_title_allowed(self):
        assert Paragraph(id=1, title="", body="b").title == ""


class TestIngestCorpus:
    def test_reads_records_in_order(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        _write_jsonl(
            path,
            [
                {"id": 5, "title": "a", "body": "aa", "source": "s1"},
                {"id": 2, "title": "b", "body": "bb"},
            ],
        )
        paragraphs = ingest_corpus(path)
        assert [p.id for p in paragraphs] == [5, 2]
        assert paragraphs[0].source == "s1"
        assert paragraphs[1].source is None

    def test_missing_id_defaults_to_record_position(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        path.write_text(
            '{"title": "a", "body": "aa"}\n'
            "\n"  # blank lines are skipped and do not shift positions
            '{"title": "b", "body": "bb"}\n',
            encoding="utf-8",
        )
        assert [p.id for p in ingest_corpus(path)] == [0, 1]

    def test_invalid_json_names_the_line(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        path.write_text('{"title": "a", "body": "aa"}\nnot json\n', encoding="utf-8")
        with pytest.raises(MalformedRecordError, match="line 2"):
            ingest_corpus(path)

    @pytest.mark.parametrize(
        "record",
        [
            "[1, 2]",
            '{"body": "aa"}',
            '{"title": "a"}',
            '{"title": "a", "body": ""}',
            '{"title": "a", "body": "aa", "id": true}',
            '{"title": "a", "body": "aa", "id": "7"}',
            '{"title": "a", "body": "aa", "id": -1}',
            '{"title": "a", "body": "aa", "id": 4294967296}',
            '{"title": "a", "body": "aa", "source": 9}',
            '{"title": 3, "body": "aa"}',
        ],
    )
    def test_malformed_records(self, tmp_path, record):
        path = tmp_path / "corpus.jsonl"
        path.write_text(record + "\n", encoding="utf-8")
        with pytest.raises(MalformedRecordError, match="line 1"):
            ingest_corpus(path)

    def test_duplicate_id(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        _write_jsonl(
            path,
            [{"id": 7, "title": "a", "body": "aa"}, {"id": 7, "title": "b", "body": "bb"}],
        )
        with pytest.raises(DuplicateIdError, match="7"):
            ingest_corpus(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        path.write_text("\n\n", encoding="utf-8")
        with pytest.raises(EmptyCorpusError):
            ingest_corpus(path)


class TestKnowledgeBankConstruction:
    def test_count_disagreement(self):
        with pytest.raises(BankConsistencyError):
            KnowledgeBank(np.array([0, 1]), np.zeros((3, 2), dtype=np.float32), _paragraphs(3))

    def test_ids_must_increase(self):
        paragraphs = [Paragraph(id=1, title="", body="b"), Paragraph(id=1, title="", body="b")]
        with pytest.raises(BankConsistencyError):
            KnowledgeBank(np.array([1, 1]), np.zeros((2, 2), dtype=np.float32), paragraphs)

    def test_paragraph_alignment(self):
        paragraphs = [Paragraph(id=0, title="", body="b"), Paragraph(id=9, title="", body="b")]
        with pytest.raises(BankConsistencyError):
            KnowledgeBank(np.array([0, 1]), np.zeros((2, 2), dtype=np.float32), paragraphs)

    def test_keys_must_be_matrix(self):
        with pytest.raises(ValueError):
            KnowledgeBank(np.array([0]), np.zeros(2, dtype=np.float32), _paragraphs(1))

    def test_get(self):
        bank = KnowledgeBank(
            np.array([0, 1, 2]), np.zeros((3, 2), dtype=np.float32), _paragraphs(3)
        )
        assert bank.get(1).title == "title 1"
        with pytest.raises(KeyError):
            bank.get(5)
        with pytest.raises(KeyError):
            bank.get(-3)


def _hand_bank():
    ids = np.array([1, 2, 3])
    keys = np.array([[0.0, 0.0], [3.0, 4.0], [1.0, 1.0]], dtype=np.float32)
    paragraphs = [Paragraph(id=i, title=f"t{i}", body=f"b{i}") for i in (1, 2, 3)]
    return KnowledgeBank(ids, keys, paragraphs)


class TestKnn:
    def test_hand_example_order_and_distances(self):
        hits = _hand_bank().knn(np.array([0.0, 0.5]), k=3)
        assert [h.paragraph_id for h in hits] == [1, 3, 2]
        assert [h.rank for h in hits] == [1, 2, 3]
        assert hits[0].distance == pytest.approx(0.5, abs=1e-12)
        assert hits[1].distance == pytest.approx(math.sqrt(1.25), abs=1e-12)
        assert hits[2].distance == pytest.approx(math.sqrt(21.25), abs=1e-12)

    def test_identity_query_has_distance_zero(self):
        hits = _hand_bank().knn(np.array([3.0, 4.0]), k=1)
        assert hits[0].paragraph_id == 2
        assert hits[0].distance == 0.0

    def test_tie_resolves_to_lower_id(self):
        ids = np.array([1, 2])
        keys = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
        paragraphs = [Paragraph(id=i, title="", body="b") for i in (1, 2)]
        bank = KnowledgeBank(ids, keys, paragraphs)
        hits = bank.knn(np.array([0.0, 0.0]), k=2)
        assert [h.paragraph_id for h in hits] == [1, 2]
        assert hits[0].distance == hits[1].distance == 1.0

    def test_k_larger_than_bank_returns_everything(self):
        assert len(_hand_bank().knn(np.array([0.0, 0.0]), k=50)) == 3

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            _hand_bank().knn(np.array([0.0, 0.0]), k=0)

    def test_query_dim_checked(self):
        with pytest.raises(DimensionMismatchError):
            _hand_bank().knn(np.array([0.0, 0.0, 0.0]), k=1)

    def test_accepts_row_vector_and_float32(self):
        hits = _hand_bank().knn(np.array([[0.0, 0.5]], dtype=np.float32), k=1)
        assert hits[0].paragraph_id == 1


class _FailingEmbedder:
    """embed_many always fails; embed_one fails only for the poisoned text."""

    dim = 4
    tag = "failing"

    def __init__(self, poison: str):
        self.poison = poison

    def embed_many(self, texts):
        raise TransportError("batch failed")

    def embed_one(self, text):
        if self.poison in text:
            raise TransportError("endpoint rejected this text")
        return np.zeros(4, dtype=np.float32)


class TestBuildBank:
    def test_sorts_by_id(self):
        paragraphs = [
            Paragraph(id=9, title="i", body="x"),
            Paragraph(id=1, title="a", body="x"),
            Paragraph(id=4, title="d", body="x"),
        ]
        bank = build_bank(paragraphs, HashEmbedder(dim=8))
        assert bank.ids.tolist() == [1, 4, 9]
        assert [p.id for p in bank.paragraphs] == [1, 4, 9]

    def test_keys_come_from_key_text(self):
        paragraphs = [Paragraph(id=0, title="alpha", body="beta")]
        emb = HashEmbedder(dim=16)
        bank = build_bank(paragraphs, emb)
        assert np.array_equal(bank.keys[0], emb.embed_one("alpha\nbeta"))

    def test_embedder_tag_recorded(self):
        bank = build_bank(_paragraphs(2), HashEmbedder(dim=8))
        assert bank.embedder_tag == "hash-bigram-v1:dim=8:norm=true"

    def test_empty_input(self):
        with pytest.raises(EmptyCorpusError):
            build_bank([], HashEmbedder(dim=8))

    def test_duplicate_ids(self):
        paragraphs = [Paragraph(id=3, title="", body="x"), Paragraph(id=3, title="", body="y")]
        with pytest.raises(DuplicateIdError, match="3"):
            build_bank(paragraphs, HashEmbedder(dim=8))

    def test_id_too_large_for_storage(self):
        with pytest.raises(ValueError, match="range"):
            build_bank([Paragraph(id=2**32, title="", body="x")], HashEmbedder(dim=8))

    def test_embedding_failure_names_the_paragraph(self):
        paragraphs = [
            Paragraph(id=3, title="fine", body="x"),
            Paragraph(id=7, title="poisoned", body="x"),
        ]
        with pytest.raises(TransportError, match="paragraph id 7"):
            build_bank(paragraphs, _FailingEmbedder(poison="poisoned"))

    def test_wrong_shape_from_embedder(self):
        class _Flat:
            dim = 4

            def embed_many(self, texts):
                return np.zeros(4, dtype=np.float32)

        with pytest.raises(DimensionMismatchError):
            build_bank(_paragraphs(2), _Flat())


class TestPersistence:
    def _bank(self, n=20, dim=8, with_source=True):
        paragraphs = [
            Paragraph(
                id=i * 3,
                title=f"标题 {i}",
                body=f"body text {i}",
                source=f"src-{i}" if with_source and i % 2 == 0 else None,
            )
            for i in range(n)
        ]
        return build_bank(paragraphs, HashEmbedder(dim=dim))

    def test_roundtrip_preserves_everything(self, tmp_path):
        bank = self._bank()
        path = tmp_path / "bank.bin"
        save_bank(bank, path)
        loaded = load_bank(path)
        assert len(loaded) == len(bank)
        assert loaded.dim == bank.dim
        assert np.array_equal(loaded.ids, bank.ids)
        assert np.array_equal(loaded.keys, bank.keys)
        assert loaded.paragraphs == bank.paragraphs

    def test_save_load_save_is_byte_identical(self, tmp_path):
        bank = self._bank()
        first, second = tmp_path / "a.bin", tmp_path / "b.bin"
        save_bank(bank, first)
        save_bank(load_bank(first), second)
        assert first.read_bytes() == second.read_bytes()
        assert (tmp_path / "a.bin.jsonl").read_bytes() == (tmp_path / "b.bin.jsonl").read_bytes()

    def test_header_layout(self, tmp_path):
        bank = self._bank(n=5, dim=8)
        path = tmp_path / "bank.bin"
        save_bank(bank, path)
        raw = path.read_bytes()
        assert raw[:8] == MAGIC
        assert int.from_bytes(raw[8:12], "little") == 8
        assert int.from_bytes(raw[12:20], "little") == 5
        assert len(raw) == 20 + 5 * (4 + 8 * 4)

    def test_sidecar_is_compact_utf8(self, tmp_path):
        bank = self._bank(n=2)
        path = tmp_path / "bank.bin"
        save_bank(bank, path)
        lines = (tmp_path / "bank.bin.jsonl").read_text(encoding="utf-8").splitlines()
        assert len(lines) == 2
        assert "标题" in lines[0]  # not \u-escaped
        assert ", " not in lines[0] and ": " not in lines[0]
        assert list(json.loads(lines[1])) == ["id", "title", "body"]  # no null source key

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bank.bin"
        save_bank(self._bank(), path)
        raw = bytearray(path.read_bytes())
        raw[0] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(BankFormatError, match="magic"):
            load_bank(path)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "bank.bin"
        save_bank(self._bank(), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-7])
        with pytest.raises(BankFormatError, match="bytes"):
            load_bank(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        path = tmp_path / "bank.bin"
        save_bank(self._bank(), path)
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(BankFormatError):
            load_bank(path)

    def test_header_only_file_rejected(self, tmp_path):
        path = tmp_path / "bank.bin"
        path.write_bytes(MAGIC[:4])
        with pytest.raises(BankFormatError, match="short"):
            load_bank(path)

    def test_missing_sidecar_rejected(self, tmp_path):
        path = tmp_path / "bank.bin"
        save_bank(self._bank(), path)
        (tmp_path / "bank.bin.jsonl").unlink()
        with pytest.raises(BankConsistencyError, match="sidecar"):
            load_bank(path)

    def test_sidecar_count_mismatch_rejected(self, tmp_path):
        path = tmp_path / "bank.bin"
        save_bank(self._bank(n=3), path)
        sidecar = tmp_path / "bank.bin.jsonl"
        lines = sidecar.read_text(encoding="utf-8").splitlines()
        sidecar.write_text("\n".join(lines[:-1]) + "\n", encoding="utf-8")
        with pytest.raises(BankConsistencyError, match="records"):
            load_bank(path)

    def test_sidecar_id_mismatch_rejected(self, tmp_path):
        path = tmp_path / "bank.bin"
        save_bank(self._bank(n=3), path)
        sidecar = tmp_path / "bank.bin.jsonl"
        lines = sidecar.read_text(encoding="utf-8").splitlines()
        record = json.loads(lines[0])
        record["id"] = 999
        lines[0] = json.dumps(record, ensure_ascii=False, separators=(",", ":"))
        sidecar.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(BankConsistencyError, match="id"):
            load_bank(path)

    def test_sidecar_bad_json_rejected(self, tmp_path):
        path = tmp_path / "bank.bin"
        save_bank(self._bank(n=2), path)
        sidecar = tmp_path / "bank.bin.jsonl"
        lines = sidecar.read_text(encoding="utf-8").splitlines()
        lines[1] = "{broken"
        sidecar.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(BankConsistencyError, match="line 2"):
            load_bank(path)

    def test_loaded_bank_retrieves_like_the_original(self, tmp_path):
        bank = self._bank(n=30, dim=16)
        path = tmp_path / "bank.bin"
        save_bank(bank, path)
        loaded = load_bank(path)
        query = HashEmbedder(dim=16).embed_one("body text 4")
        original_hits = bank.knn(query, 5)
        loaded_hits = loaded.knn(query, 5)
        assert [h.paragraph_id for h in original_hits] == [h.paragraph_id for h in loaded_hits]
        assert [h.distance for h in original_hits] == [h.distance for h in loaded_hits]

    def test_errors_are_arr_errors(self):
        assert issubclass(BankFormatError, ArrError)
        assert issubclass(BankConsistencyError, ArrError)
