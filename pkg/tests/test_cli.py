import json

import pytest

from conftest import make_qa_corpus
from ctxnorm.cli import main
from ctxnorm.dataset import load_qa_dataset, save_dataset
from ctxnorm.harness import read_json


@pytest.fixture
def qa_file(tmp_path):
    path = tmp_path / "qa.jsonl"
    save_dataset(make_qa_corpus(n_samples=4, n_docs=6, words_per_doc=20, seed=2), path)
    return path


@pytest.fixture
def mock_cfg(tmp_path):
    path = tmp_path / "mock.json"
    path.write_text(json.dumps({"profiles": {"-": [1, 1, 1], "&": [1, 0, 3], "none": [1, 0, 3]}}))
    return path


def strip_time(doc):
    if isinstance(doc, dict):
        return {k: strip_time(v) for k, v in doc.items() if k != "created_at"}
    if isinstance(doc, list):
        return [strip_time(x) for x in doc]
    return doc


class TestGenKv:
    def test_writes_records(self, tmp_path, capsys):
        out = tmp_path / "kv.jsonl"
        assert main(["gen-kv", "--pairs", "40", "--chars", "32", "--n", "500", "--seed", "7", "-o", str(out)]) == 0
        assert len(out.read_text().splitlines()) == 500
        assert len(load_qa_dataset(out)) == 500
        assert "500" in capsys.readouterr().out

    def test_missing_flag(self, tmp_path, capsys):
        assert main(["gen-kv", "--pairs", "40", "--chars", "32", "--seed", "7", "-o", str(tmp_path / "x")]) == 2
        assert "--n" in capsys.readouterr().err

    def test_refuses_overwrite(self, tmp_path):
        out = tmp_path / "kv.jsonl"
        out.write_text("keep me")
        args = ["gen-kv", "--pairs", "4", "--chars", "8", "--n", "3", "--seed", "1", "-o", str(out)]
        assert main(args) == 1
        assert out.read_text() == "keep me"
        assert main(args + ["--force"]) == 0
        assert len(out.read_text().splitlines()) == 3

    def test_invalid_config(self, tmp_path, capsys):
        assert main(["gen-kv", "--pairs", "1", "--chars", "8", "--n", "3", "--seed", "1", "-o", str(tmp_path / "x")]) == 1
        assert "num_pairs" in capsys.readouterr().err

    def test_idempotent(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for out in (a, b):
            main(["gen-kv", "--pairs", "5", "--chars", "16", "--n", "20", "--seed", "3", "-o", str(out)])
        assert a.read_bytes() == b.read_bytes()


class TestCalibrate:
    def test_selects_uniform_delimiter(self, tmp_path, qa_file, mock_cfg, capsys):
        out = tmp_path / "cal.json"
        rc = main(["calibrate", "--dataset", str(qa_file), "--backend", "mock", "--mock-config", str(mock_cfg),
                   "--delimiters", "none,-,&", "--samples", "3", "-o", str(out)])
        assert rc == 0
        doc = read_json(out)
        assert doc["schema"] == "ctxnorm.calibration/1"
        assert doc["selected"]["delimiter"] == "-"
        assert "selected delimiter: -" in capsys.readouterr().out

    def test_defaults(self):
        from ctxnorm.cli import parse_args

        args = parse_args(["calibrate", "--dataset", "x", "--backend", "mock", "-o", "y"])
        assert args.samples == 8 and args.ratio == 0.5

    def test_attentionless_backend(self, tmp_path, qa_file, capsys):
        trace = tmp_path / "t.jsonl"
        trace.write_text(json.dumps({"prompt_id": "x", "text": "a", "token_count": 1, "T": None, "weights": None}) + "\n")
        rc = main(["calibrate", "--dataset", str(qa_file), "--backend", "replay", "--trace", str(trace),
                   "-o", str(tmp_path / "c.json")])
        assert rc != 0
        assert "attention" in capsys.readouterr().err

    def test_two_sources_is_usage_error(self, tmp_path, qa_file):
        rc = main(["calibrate", "--dataset", str(qa_file), "--kv-pairs", "4", "--backend", "mock",
                   "-o", str(tmp_path / "c.json")])
        assert rc == 2

    def test_no_backend(self, tmp_path, qa_file):
        assert main(["calibrate", "--dataset", str(qa_file), "-o", str(tmp_path / "c.json")]) == 2


class TestRunPerm:
    def test_replay_reproduces_live(self, tmp_path, qa_file, mock_cfg):
        live, replay, trace = tmp_path / "live.json", tmp_path / "replay.json", tmp_path / "t.jsonl"
        common = ["run-perm", "--dataset", str(qa_file), "--delimiter", "&", "--seeds", "0,1"]
        assert main(common + ["--backend", "mock", "--mock-config", str(mock_cfg),
                              "--record-trace", str(trace), "-o", str(live)]) == 0
        assert main(common + ["--backend", "replay", "--trace", str(trace), "-o", str(replay)]) == 0
        a, b = read_json(live), read_json(replay)
        assert json.dumps(a["metrics"]) == json.dumps(b["metrics"])
        assert a["cells"] == b["cells"]

    def test_kv_source_and_table(self, tmp_path, capsys):
        out = tmp_path / "r.json"
        rc = main(["run-perm", "--kv-pairs", "6", "--kv-chars", "32", "--kv-n", "4", "--kv-seed", "1",
                   "--backend", "mock", "--delimiter", "none", "--positions", "0,3,5", "-o", str(out)])
        assert rc == 0
        text = capsys.readouterr().out
        assert "OAA" in text and "OPA" in text
        assert read_json(out)["metrics"]["positions"] == [0, 3, 5]

    def test_workers_and_force_are_byte_identical(self, tmp_path, qa_file, mock_cfg):
        out = tmp_path / "r.json"
        base = ["run-perm", "--dataset", str(qa_file), "--backend", "mock", "--mock-config", str(mock_cfg),
                "--delimiter", "-", "-o", str(out)]
        main(base)
        first = strip_time(read_json(out))
        main(base + ["--force", "--workers", "3"])
        assert strip_time(read_json(out)) == first

    def test_config_file_and_override(self, tmp_path, qa_file, mock_cfg):
        cfg = tmp_path / "run.yaml"
        cfg.write_text(
            f"dataset: {qa_file}\nbackend: mock\nmock_config: {mock_cfg}\ndelimiter: '&'\npositions: 0,1\nseeds: [0, 2]\n"
        )
        out = tmp_path / "r.json"
        assert main(["--config", str(cfg), "run-perm", "--delimiter", "-", "-o", str(out)]) == 0
        doc = read_json(out)
        assert doc["config"]["format"]["delimiter"] == "-"
        assert doc["metrics"]["positions"] == [0, 1] and doc["seeds"] == [0, 2]

    def test_config_unknown_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        with pytest.raises(SystemExit) as e:
            main(["--config", str(cfg), "run-perm", "-o", str(tmp_path / "r.json")])
        assert e.value.code == 2
        assert "bogus" in capsys.readouterr().err


class TestPipelineAndReport:
    def test_pipeline_then_report(self, tmp_path, qa_file, mock_cfg, capsys):
        out = tmp_path / "p.json"
        rc = main(["pipeline", "--dataset", str(qa_file), "--backend", "mock", "--mock-config", str(mock_cfg),
                   "--delimiters", "none,-,&", "--samples", "2", "-o", str(out)])
        assert rc == 0
        doc = read_json(out)
        assert doc["schema"] == "ctxnorm.pipeline/1"
        assert doc["result"]["metrics"]["oaa"] > doc["baseline"]["metrics"]["oaa"]
        capsys.readouterr()
        csv_path = tmp_path / "t.csv"
        assert main(["report", "--in", str(out), "--csv", str(csv_path)]) == 0
        text = capsys.readouterr().out
        assert "delta" in text and "mean_ABS" in text
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "position,baseline,c-norm,delta"
        assert lines[-2].startswith("OAA,") and lines[-1].startswith("OPA,")

    def test_report_two_files(self, tmp_path, qa_file, mock_cfg, capsys):
        paths = []
        for d in ("none", "-"):
            p = tmp_path / f"{'base' if d == 'none' else 'dash'}.json"
            main(["run-perm", "--dataset", str(qa_file), "--backend", "mock", "--mock-config", str(mock_cfg),
                  "--delimiter", d, "-o", str(p)])
            paths.append(str(p))
        capsys.readouterr()
        assert main(["report", "--in", *paths]) == 0
        header = capsys.readouterr().out.splitlines()[0].split()
        assert header == ["position", "base:none", "dash:-", "delta"]

    def test_report_unknown_schema(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text(json.dumps({"schema": "nope"}))
        assert main(["report", "--in", str(p)]) == 1

    def test_tok_study(self, tmp_path, capsys):
        cfg = tmp_path / "m.json"
        cfg.write_text(json.dumps({"profiles": {"none": [1, 1, 1], "-": [1, 1, 1], "&": [1, 0, 1]}, "split_chars": "&"}))
        out = tmp_path / "t.json"
        rc = main(["tok-study", "--kv-pairs", "10", "--kv-chars", "32", "--kv-n", "3", "--kv-seed", "3",
                   "--backend", "mock", "--mock-config", str(cfg), "--delimiters", "none,-,&", "-o", str(out)])
        assert rc == 0
        doc = read_json(out)
        assert doc["schema"] == "ctxnorm.tokenization/1"
        assert abs(doc["pearson_r"] + 1) < 1e-9
        assert "pearson_r" in capsys.readouterr().out


def test_abs_command(tmp_path, capsys):
    trace = tmp_path / "t.jsonl"
    recs = [
        {"prompt_id": "calib/a/-", "format_tag": "-", "T": 4, "weights": [1, 1, 1, 1]},
        {"prompt_id": "calib/a/&", "format_tag": "&", "T": 4, "weights": [0, 0, 1, 3]},
    ]
    trace.write_text("".join(json.dumps(r) + "\n" for r in recs))
    assert main(["abs", "--trace", str(trace), "--bins", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    rows = [ln.split() for ln in lines if ln[:2] in ("- ", "& ")]
    # '&': mu = (2/3 * 1 + 1 * 3) / 4 = 11/12, ABS = 1/6; binned halves are (0, 1)
    assert rows[:2] == [["&", "1", "0.1667"], ["-", "1", "1.0000", "*"]]
    assert rows[2:] == [["&", "0.0000", "1.0000"], ["-", "0.5000", "0.5000"]]
