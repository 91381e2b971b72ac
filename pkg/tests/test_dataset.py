import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxnorm.dataset import (
    Dataset,
    DatasetError,
    Document,
    FormatStyle,
    KvGenConfig,
    KvSample,
    QaSample,
    apply_format_style,
    generate_kv_dataset,
    load_qa_dataset,
    render_kv_prompt,
    render_kv_prompt_with_span,
    save_dataset,
    strip_non_hex,
)

UUID_HEX = "550e8400e29b41d4a716446655440000"
hex_strings = st.integers(2, 40).flatmap(
    lambda n: st.text(alphabet="0123456789abcdef", min_size=4 * n, max_size=4 * n)
)


class TestFormatStyle:
    def test_uuid(self):
        assert apply_format_style(UUID_HEX, FormatStyle.uuid()) == "550e8400-e29b-41d4-a716-446655440000"

    def test_modified_uuid(self):
        assert apply_format_style(UUID_HEX, FormatStyle.modified("&")) == "550e8400&e29b&41d4&a716&446655440000"

    def test_plain(self):
        assert apply_format_style(UUID_HEX, FormatStyle.plain()) == UUID_HEX

    def test_long_strings_group_by_four(self):
        s = "0123456789abcdef" * 8
        out = apply_format_style(s, FormatStyle.uuid())
        assert out.count("-") == 31
        assert all(len(g) == 4 for g in out.split("-"))

    @pytest.mark.parametrize("bad", ["", "ABC1", "xyz0", "0123456789"])
    def test_rejects_bad_input(self, bad):
        with pytest.raises(DatasetError):
            apply_format_style(bad, FormatStyle.uuid())

    @pytest.mark.parametrize("delim", ["a", "5", " ", "&&", ""])
    def test_modified_delimiter_validation(self, delim):
        with pytest.raises(DatasetError):
            FormatStyle.modified(delim)

    @given(hex_strings, st.sampled_from([FormatStyle.uuid(), FormatStyle.plain(), FormatStyle.modified(":"), FormatStyle.modified("~")]))
    def test_content_preserved(self, s, style):
        assert strip_non_hex(apply_format_style(s, style)) == s


class TestGenerate:
    def test_low_density(self):
        ds = generate_kv_dataset(KvGenConfig(num_pairs=40, char_len=32, num_samples=500, seed=7))
        assert len(ds) == 500
        for s in ds:
            assert len(s.pairs) == 40
            assert all(len(k) == 32 and len(v) == 32 for k, v in s.pairs)

    def test_high_density(self):
        ds = generate_kv_dataset(KvGenConfig(num_pairs=10, char_len=128, num_samples=20, seed=1))
        assert all(len(s.pairs) == 10 and len(s.gold_key) == 128 for s in ds)

    def test_deterministic(self, tmp_path):
        cfg = KvGenConfig(num_pairs=5, char_len=16, num_samples=30, seed=3)
        save_dataset(generate_kv_dataset(cfg), tmp_path / "a.jsonl")
        save_dataset(generate_kv_dataset(cfg), tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_seed_changes_output(self):
        a = generate_kv_dataset(KvGenConfig(4, 8, 3, seed=1))
        b = generate_kv_dataset(KvGenConfig(4, 8, 3, seed=2))
        assert a.samples != b.samples

    def test_uniqueness(self):
        ds = generate_kv_dataset(KvGenConfig(num_pairs=40, char_len=8, num_samples=200, seed=0))
        for s in ds:
            flat = [x for kv in s.pairs for x in kv]
            assert len(set(flat)) == len(flat)

    def test_hex_alphabet_roughly_uniform(self):
        ds = generate_kv_dataset(KvGenConfig(num_pairs=40, char_len=32, num_samples=50, seed=11))
        chars = "".join(x for s in ds for kv in s.pairs for x in kv)
        counts = [chars.count(c) for c in "0123456789abcdef"]
        expected = len(chars) / 16
        assert max(abs(c - expected) for c in counts) < 0.05 * expected

    @pytest.mark.parametrize(
        "cfg,field",
        [
            (KvGenConfig(num_pairs=1), "num_pairs"),
            (KvGenConfig(char_len=6), "char_len"),
            (KvGenConfig(char_len=30), "char_len"),
            (KvGenConfig(num_samples=0), "num_samples"),
        ],
    )
    def test_invalid_config_names_field(self, cfg, field):
        with pytest.raises(DatasetError, match=field):
            generate_kv_dataset(cfg)


class TestKvPrompt:
    sample = KvSample("s", (("aaaa1111", "bbbb2222"), ("cccc3333", "dddd4444")), gold_index=1)

    def test_gold_first(self):
        lines = render_kv_prompt(self.sample, FormatStyle.plain(), 0).splitlines()
        assert lines[2] == "cccc3333: dddd4444"
        assert lines[3] == "aaaa1111: bbbb2222"

    def test_gold_last(self):
        lines = render_kv_prompt(self.sample, FormatStyle.plain(), 1).splitlines()
        assert lines[3] == "cccc3333: dddd4444"

    def test_trailer(self):
        text = render_kv_prompt(self.sample, FormatStyle.uuid(), 0)
        assert text.endswith("\n\nKey: cccc-3333\nCorresponding value:")
        assert text.startswith("Extract the value corresponding to the specified key")

    def test_span_points_at_gold_line(self):
        for pos in (0, 1):
            text, (a, b) = render_kv_prompt_with_span(self.sample, FormatStyle.modified("&"), pos)
            assert text[a:b] == "cccc&3333: dddd&4444"

    def test_out_of_range(self):
        with pytest.raises(DatasetError):
            render_kv_prompt(self.sample, FormatStyle.plain(), 2)

    def test_golden(self, golden):
        ds = generate_kv_dataset(KvGenConfig(num_pairs=4, char_len=32, num_samples=1, seed=7))
        assert render_kv_prompt(ds[0], FormatStyle.modified("&"), 1) == golden("kv_prompt_modified_amp.txt")

    def test_non_gold_keep_relative_order(self):
        ds = generate_kv_dataset(KvGenConfig(num_pairs=8, char_len=8, num_samples=1, seed=2))
        s = ds[0]
        for pos in range(8):
            lines = render_kv_prompt(s, FormatStyle.plain(), pos).splitlines()[2:10]
            others = [ln for i, ln in enumerate(lines) if i != pos]
            expected = [f"{k}: {v}" for i, (k, v) in enumerate(s.pairs) if i != s.gold_index]
            assert others == expected


def _qa_record(**over):
    rec = {
        "id": "q1",
        "question": "capital of France?",
        "gold_answers": ["Paris"],
        "documents": [
            {"id": "d1", "text": "Paris is the capital.", "is_gold": True},
            {"id": "d2", "text": "Lyon is a city.", "is_gold": False},
        ],
    }
    rec.update(over)
    return rec


def _write(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


class TestLoad:
    def test_two_lines(self, tmp_path):
        ds = load_qa_dataset(_write(tmp_path / "d.jsonl", [_qa_record(), _qa_record(id="q2")]))
        assert len(ds) == 2
        assert ds[0].documents[0].is_gold
        assert ds.kind == "qa"

    def test_no_gold_names_sample(self, tmp_path):
        docs = [{"id": "d1", "text": "x", "is_gold": False}]
        path = _write(tmp_path / "d.jsonl", [_qa_record(id="lonely", documents=docs)])
        with pytest.raises(DatasetError, match="lonely"):
            load_qa_dataset(path)

    def test_empty_answers(self, tmp_path):
        with pytest.raises(DatasetError, match="gold_answers"):
            load_qa_dataset(_write(tmp_path / "d.jsonl", [_qa_record(gold_answers=[])]))

    def test_duplicate_id_has_line_number(self, tmp_path):
        with pytest.raises(DatasetError, match=":2:.*duplicate"):
            load_qa_dataset(_write(tmp_path / "d.jsonl", [_qa_record(), _qa_record()]))

    def test_parse_error_line(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text(json.dumps(_qa_record()) + "\n{broken\n", encoding="utf-8")
        with pytest.raises(DatasetError, match=":2: parse error"):
            load_qa_dataset(p)

    def test_empty_document_text(self, tmp_path):
        docs = [{"id": "d1", "text": "", "is_gold": True}]
        with pytest.raises(DatasetError, match="empty"):
            load_qa_dataset(_write(tmp_path / "d.jsonl", [_qa_record(documents=docs)]))

    def test_qa_round_trip(self, tmp_path, qa_corpus):
        save_dataset(qa_corpus, tmp_path / "qa.jsonl")
        assert load_qa_dataset(tmp_path / "qa.jsonl") == qa_corpus

    def test_kv_round_trip(self, tmp_path):
        ds = generate_kv_dataset(KvGenConfig(num_pairs=6, char_len=12, num_samples=10, seed=5))
        save_dataset(ds, tmp_path / "kv.jsonl")
        back = load_qa_dataset(tmp_path / "kv.jsonl")
        assert back == ds and back.kind == "kv"

    def test_unicode_and_lf(self, tmp_path):
        ds = Dataset([QaSample("u1", "Où est Zürich?", ("Zürich",), (Document("d", "Zürich liegt.", True),))])
        save_dataset(ds, tmp_path / "u.jsonl")
        raw = (tmp_path / "u.jsonl").read_bytes()
        assert b"\r\n" not in raw and "Zürich".encode() in raw
        assert load_qa_dataset(tmp_path / "u.jsonl") == ds

    @settings(max_examples=30)
    @given(st.integers(0, 10_000))
    def test_round_trip_property(self, seed):
        import tempfile
        from pathlib import Path

        rng = random.Random(seed)
        n = rng.randrange(1, 4)
        ds = generate_kv_dataset(KvGenConfig(rng.randrange(2, 6), 8, n, seed))
        with tempfile.TemporaryDirectory() as d:
            save_dataset(ds, Path(d) / "x.jsonl")
            assert load_qa_dataset(Path(d) / "x.jsonl") == ds


def test_dataset_rejects_duplicate_ids():
    s = KvSample("a", (("aaaa", "bbbb"), ("cccc", "dddd")), 0)
    with pytest.raises(DatasetError):
        Dataset([s, s])


def test_kv_sample_rejects_collisions():
    with pytest.raises(DatasetError):
        KvSample("a", (("aaaa", "bbbb"), ("bbbb", "dddd")), 0)
