"""CLI subcommands end to end on temporary directories."""

import json

import pytest

from casevec.cli import build_parser, main


def run_cli(*argv):
    return main(list(argv))


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


@pytest.fixture
def corpus_dir(tmp_path):
    out = tmp_path / "corpus"
    assert run_cli(
        "gen-corpus", "--out", str(out),
        "--num-articles", "2", "--branches-per-article", "2",
        "--cases-per-branch", "4", "--queries-per-branch", "1",
        "--vocab-size", "40", "--seed", "11",
    ) == 0
    return out


class TestPipeline:
    def test_full_pipeline(self, tmp_path, corpus_dir):
        weights = tmp_path / "weights.csv"
        assert run_cli("weights", "--articles", str(corpus_dir / "articles.json"),
                       "--cases", str(corpus_dir / "cases.jsonl"), "--out", str(weights)) == 0
        assert weights.exists()

        batches = tmp_path / "batches.jsonl"
        assert run_cli("sample", "--weights", str(weights), "--out", str(batches),
                       "--num-batches", "3", "--batch-quadruples", "2", "--seed", "5") == 0
        lines = [json.loads(l) for l in batches.read_text().splitlines()]
        assert len(lines) == 3
        assert all(len(l["case_ids"]) == 4 for l in lines)

        run_dir = tmp_path / "run"
        assert run_cli("pretrain", "--articles", str(corpus_dir / "articles.json"),
                       "--cases", str(corpus_dir / "cases.jsonl"), "--out", str(run_dir),
                       "--steps", "5", "--hidden-size", "16", "--num-layers", "1",
                       "--num-heads", "2", "--ffn-size", "24", "--max-len", "64",
                       "--seed", "3") == 0
        assert (run_dir / "encoder.params").exists()
        assert (run_dir / "vocab.txt").exists()
        assert len((run_dir / "trainlog.jsonl").read_text().splitlines()) == 5

        run_tsv = tmp_path / "run.tsv"
        assert run_cli("rank", "--checkpoint", str(run_dir / "encoder.params"),
                       "--vocab", str(run_dir / "vocab.txt"),
                       "--queries", str(corpus_dir / "queries.jsonl"),
                       "--cases", str(corpus_dir / "cases.jsonl"),
                       "--out", str(run_tsv)) == 0

        metrics = tmp_path / "metrics.json"
        assert run_cli("evaluate", "--run", str(run_tsv),
                       "--qrels", str(corpus_dir / "qrels.tsv"),
                       "--out", str(metrics), "--ks", "5,10") == 0
        loaded = json.loads(metrics.read_text())
        assert set(loaded) == {"ndcg@5", "ndcg@10"}

        emb = tmp_path / "emb.csv"
        assert run_cli("encode", "--checkpoint", str(run_dir / "encoder.params"),
                       "--vocab", str(run_dir / "vocab.txt"),
                       "--cases", str(corpus_dir / "cases.jsonl"), "--out", str(emb)) == 0
        header = emb.read_text().splitlines()[0]
        assert header.startswith("case_id,dim0")

        emb2d = tmp_path / "emb2d.csv"
        assert run_cli("export-embeddings", "--checkpoint", str(run_dir / "encoder.params"),
                       "--vocab", str(run_dir / "vocab.txt"),
                       "--cases", str(corpus_dir / "cases.jsonl"),
                       "--labels", str(corpus_dir / "labels.csv"),
                       "--out", str(emb2d), "--projection", "pca2d") == 0
        assert emb2d.read_text().splitlines()[0] == "case_id,label,x,y"

    def test_expand_articles(self, tmp_path, corpus_dir):
        out = tmp_path / "branches.jsonl"
        assert run_cli("expand-articles", "--articles", str(corpus_dir / "articles.json"),
                       "--out", str(out)) == 0
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(lines) == 4
        assert {l["article_id"] for l in lines} == {"art-00", "art-01"}

    def test_config_echo_written(self, tmp_path, corpus_dir):
        weights = tmp_path / "w.csv"
        run_cli("weights", "--articles", str(corpus_dir / "articles.json"),
                "--cases", str(corpus_dir / "cases.jsonl"), "--out", str(weights))
        echo = json.loads((tmp_path / "weights.config.json").read_text())
        assert echo["command"] == "weights"
        assert echo["options"]["k1"] == 1.5


class TestDeterminism:
    def test_identical_seeds_give_identical_bytes(self, tmp_path):
        outputs = []
        for name in ("first", "second"):
            base = tmp_path / name
            corpus = base / "corpus"
            run_cli("gen-corpus", "--out", str(corpus), "--cases-per-branch", "3",
                    "--queries-per-branch", "1", "--seed", "9")
            weights = base / "weights.csv"
            run_cli("weights", "--articles", str(corpus / "articles.json"),
                    "--cases", str(corpus / "cases.jsonl"), "--out", str(weights))
            batches = base / "batches.jsonl"
            run_cli("sample", "--weights", str(weights), "--out", str(batches),
                    "--num-batches", "2", "--batch-quadruples", "2", "--seed", "4")
            outputs.append((read(weights), read(batches), read(corpus / "cases.jsonl")))
        assert outputs[0] == outputs[1]


class TestEvaluateCommand:
    def test_ideal_run_scores_one(self, tmp_path):
        run_tsv = tmp_path / "run.tsv"
        run_tsv.write_text("q1\t1\ta\t0.9\nq1\t2\tb\t0.5\n")
        qrels = tmp_path / "qrels.tsv"
        qrels.write_text("q1\ta\t3\nq1\tb\t1\n")
        metrics = tmp_path / "metrics.json"
        assert run_cli("evaluate", "--run", str(run_tsv), "--qrels", str(qrels),
                       "--out", str(metrics)) == 0
        loaded = json.loads(metrics.read_text())
        assert all(loaded[k]["mean"] == 1.0 for k in loaded)


class TestWeightsCommand:
    def test_disjoint_article_cases_weigh_zero(self, tmp_path):
        articles = tmp_path / "articles.json"
        articles.write_text(json.dumps({"articles": [
            {"article_id": "a", "acts": [[["red fox"]]]},
            {"article_id": "b", "acts": [[["blue owl"]]]},
        ]}))
        cases = tmp_path / "cases.jsonl"
        cases.write_text(
            '{"case_id": "c1", "facts": "f", "holding": "red fox", "articles": ["a"]}\n'
            '{"case_id": "c2", "facts": "f", "holding": "blue owl", "articles": ["b"]}\n'
        )
        out = tmp_path / "w.csv"
        assert run_cli("weights", "--articles", str(articles), "--cases", str(cases),
                       "--out", str(out)) == 0
        rows = out.read_text().splitlines()
        assert "c1,c2,0.0" in rows
        assert "c1,c1,1.0" in rows


class TestConfigPrecedence:
    def test_flag_beats_config_beats_default(self, tmp_path, corpus_dir):
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"k1": 2.0}')
        out = tmp_path / "w.csv"

        run_cli("weights", "--articles", str(corpus_dir / "articles.json"),
                "--cases", str(corpus_dir / "cases.jsonl"), "--out", str(out))
        assert json.loads((tmp_path / "weights.config.json").read_text())["options"]["k1"] == 1.5

        run_cli("weights", "--articles", str(corpus_dir / "articles.json"),
                "--cases", str(corpus_dir / "cases.jsonl"), "--out", str(out),
                "--config", str(cfg))
        assert json.loads((tmp_path / "weights.config.json").read_text())["options"]["k1"] == 2.0

        run_cli("weights", "--articles", str(corpus_dir / "articles.json"),
                "--cases", str(corpus_dir / "cases.jsonl"), "--out", str(out),
                "--config", str(cfg), "--k1", "3.0")
        assert json.loads((tmp_path / "weights.config.json").read_text())["options"]["k1"] == 3.0

    def test_unknown_config_key_rejected(self, tmp_path, corpus_dir, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"zap": 1}')
        code = run_cli("weights", "--articles", str(corpus_dir / "articles.json"),
                       "--cases", str(corpus_dir / "cases.jsonl"),
                       "--out", str(tmp_path / "w.csv"), "--config", str(cfg))
        assert code == 2
        assert "unknown config keys" in capsys.readouterr().err


class TestErrorsAndHelp:
    def test_missing_file_exits_nonzero(self, tmp_path, capsys):
        code = run_cli("weights", "--articles", str(tmp_path / "nope.json"),
                       "--cases", str(tmp_path / "nope.jsonl"),
                       "--out", str(tmp_path / "w.csv"))
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_unknown_flag_exits_nonzero(self):
        with pytest.raises(SystemExit) as excinfo:
            run_cli("evaluate", "--bogus", "x")
        assert excinfo.value.code != 0

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            run_cli("--version")
        assert excinfo.value.code == 0
        assert "casevec" in capsys.readouterr().out

    def test_every_subcommand_help_lists_defaults(self, capsys):
        parser = build_parser()
        subcommands = ["gen-corpus", "expand-articles", "weights", "sample", "pretrain",
                       "encode", "rank", "evaluate", "export-embeddings"]
        for name in subcommands:
            with pytest.raises(SystemExit):
                parser.parse_args([name, "--help"])
            text = capsys.readouterr().out
            assert "(default:" in text
        # spot-check a few documented defaults
        with pytest.raises(SystemExit):
            parser.parse_args(["pretrain", "--help"])
        text = capsys.readouterr().out
        assert "(default: 16.0)" in text      # gamma
        assert "(default: 1.25)" in text      # within-class optimum
        assert "(default: 0.001)" in text     # learning rate
