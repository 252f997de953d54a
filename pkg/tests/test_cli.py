"""Subcommand behavior: defaults, exit codes, determinism, format round-trips."""

import numpy as np
import pytest

from ties.cli import main
from ties.data_io import read_labels
from ties.graph_embed import read_embedding_table
from ties.model import build_examples, encode, load_model


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--normal", "60", "--bad", "20", "--seed", "3",
                 "--out-dir", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained_ckpt(synth_dir, tmp_path_factory):
    ckpt = tmp_path_factory.mktemp("model") / "ckpt"
    args = ["train",
            "--interactions", str(synth_dir / "interactions.tsv"),
            "--labels", str(synth_dir / "labels.tsv"),
            "--src-emb", str(synth_dir / "embeddings.tsv"),
            "--tgt-emb", str(synth_dir / "embeddings.tsv"),
            "--encoder", "deepset", "--hidden", "16", "--max-len", "32",
            "--action-dim", "8", "--epochs", "3", "--batch-size", "8",
            "--seed", "1", "--out", str(ckpt)]
    assert main(args) == 0
    return ckpt


class TestHelp:

    @pytest.mark.parametrize("command,expected", [
        ("train", ["0.0005", "1.0", "0.1", "64", "512"]),
        ("train-graph", ["0.5", "0.1"]),
        ("protocol", ["5", "0.0005"]),
    ])
    def test_help_lists_defaults(self, capsys, command, expected):
        with pytest.raises(SystemExit) as exc:
            main([command, "--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        for token in expected:
            assert token in text

    def test_invalid_encoder_exits_2_listing_kinds(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--interactions", "x", "--labels", "y",
                  "--encoder", "transformer", "--out", "z"])
        assert exc.value.code == 2
        err = capsys.readouterr().err
        for kind in ("rnn", "cnn", "deepset"):
            assert kind in err


class TestTrainGraphCommand:

    def test_clique_fixture_writes_all_rows(self, tmp_path, capsys):
        edges = tmp_path / "edges.tsv"
        lines = []
        for group in ("a", "b"):
            names = [f"{group}{i}" for i in range(4)]
            for i in range(4):
                for j in range(i + 1, 4):
                    lines.append(f"{names[i]}\tr\t{names[j]}")
        lines.append("a0\tr\tb0")
        edges.write_text("\n".join(lines) + "\n", encoding="utf-8")
        out = tmp_path / "emb.tsv"
        assert main(["train-graph", str(edges), "--dim", "8", "--epochs", "5",
                     "--seed", "0", "--out", str(out)]) == 0
        assert "final mean margin loss" in capsys.readouterr().out
        table = read_embedding_table(out)
        assert len(table) == 8 and table.dim == 8

    def test_missing_edge_file_exit_2_names_path(self, capsys):
        code = main(["train-graph", "no_such_file.tsv", "--out", "x.tsv"])
        assert code == 2
        assert "no_such_file.tsv" in capsys.readouterr().err

    def test_zero_epochs_embeddings_within_init_bounds(self, tmp_path):
        edges = tmp_path / "edges.tsv"
        edges.write_text("a\tr\tb\nb\tr\tc\n", encoding="utf-8")
        out = tmp_path / "emb.tsv"
        assert main(["train-graph", str(edges), "--dim", "16", "--epochs", "0",
                     "--out", str(out)]) == 0
        table = read_embedding_table(out)
        assert np.abs(table.vectors).max() <= 0.5 / np.sqrt(16)


class TestInferCommand:

    def test_infer_reproduces_training_time_scores(self, synth_dir, trained_ckpt,
                                                   tmp_path):
        scores_path = tmp_path / "scores.tsv"
        assert main(["infer", "--model", str(trained_ckpt),
                     "--interactions", str(synth_dir / "interactions.tsv"),
                     "--out", str(scores_path)]) == 0
        model = load_model(trained_ckpt)
        from ties.data_io import group_records, parse_interactions
        groups = group_records(parse_interactions(synth_dir / "interactions.tsv").records)
        examples = build_examples(groups, None, model)
        direct = {ex.source_id: encode(model, ex).score for ex in examples}
        for line in scores_path.read_text().splitlines():
            sid, score = line.split("\t")
            assert abs(float(score) - direct[sid]) <= 1e-9

    def test_emit_embeddings_row_width_is_hidden_plus_one(self, synth_dir,
                                                          trained_ckpt, tmp_path):
        z_path = tmp_path / "z.tsv"
        assert main(["infer", "--model", str(trained_ckpt),
                     "--interactions", str(synth_dir / "interactions.tsv"),
                     "--out", str(tmp_path / "s.tsv"),
                     "--emit-embeddings", str(z_path)]) == 0
        lines = z_path.read_text().splitlines()
        assert lines[0] == "#dim 16"
        for line in lines[1:3]:
            assert len(line.split("\t")) == 16 + 1

    def test_unseen_sources_scored_with_warning(self, trained_ckpt, tmp_path,
                                                capsys):
        log = tmp_path / "new.tsv"
        log.write_text("stranger\tt00000\tact00\t1600000000\n"
                       "stranger\tt00000\tact01\t1600000100\n", encoding="utf-8")
        out = tmp_path / "scores.tsv"
        assert main(["infer", "--model", str(trained_ckpt),
                     "--interactions", str(log), "--out", str(out)]) == 0
        err = capsys.readouterr().err
        assert "unknown entity" in err
        assert out.read_text().startswith("stranger\t")


class TestProtocolCommand:

    def test_missing_baseline_file_exit_2(self, synth_dir, tmp_path, capsys):
        code = main(["protocol",
                     "--interactions", str(synth_dir / "interactions.tsv"),
                     "--labels", str(synth_dir / "labels.tsv"),
                     "--baseline-scores", str(tmp_path / "nope.tsv"),
                     "--out-report", str(tmp_path / "r.txt")])
        assert code == 2
        assert "nope.tsv" in capsys.readouterr().err

    def test_report_files_written_and_deterministic(self, synth_dir, tmp_path):
        labels = read_labels(synth_dir / "labels.tsv")
        rng = np.random.default_rng(0)
        baseline = tmp_path / "baseline.tsv"
        with open(baseline, "w") as fh:
            for sid, y in labels.items():
                fh.write(f"{sid}\t{min(0.6 * y + 0.3 * rng.random(), 1.0):.6f}\n")
        args = ["protocol",
                "--interactions", str(synth_dir / "interactions.tsv"),
                "--labels", str(synth_dir / "labels.tsv"),
                "--baseline-scores", str(baseline),
                "--splits", "3", "--encoders", "deepset",
                "--hidden", "8", "--max-len", "16", "--action-dim", "4",
                "--epochs", "1", "--fractions", "0.6,0.2,0.2", "--seed", "4"]
        r1 = tmp_path / "r1.txt"
        r2 = tmp_path / "r2.txt"
        assert main(args + ["--out-report", str(r1)]) == 0
        assert main(args + ["--out-report", str(r2)]) == 0
        assert r1.read_bytes() == r2.read_bytes()
        assert r1.with_suffix(".json").read_bytes() == r2.with_suffix(".json").read_bytes()
        assert r1.with_suffix(".png").exists()
        text = r1.read_text()
        assert "TIES-Deepset" in text and "Hybrid+Deepset" in text


class TestSynthCommand:

    def test_same_seed_byte_identical(self, tmp_path):
        for name in ("one", "two"):
            assert main(["synth", "--normal", "15", "--bad", "5", "--seed", "9",
                         "--out-dir", str(tmp_path / name)]) == 0
        for fname in ("interactions.tsv", "labels.tsv", "embeddings.tsv"):
            assert (tmp_path / "one" / fname).read_bytes() == \
                (tmp_path / "two" / fname).read_bytes()

    def test_output_parses_back(self, synth_dir):
        from ties.data_io import parse_interactions
        result = parse_interactions(synth_dir / "interactions.tsv")
        assert not result.issues
        labels = read_labels(synth_dir / "labels.tsv")
        assert set(r.source_id for r in result.records) == set(labels)


class TestProjectCommand:

    def test_projection_of_graph_embeddings(self, synth_dir, tmp_path):
        out = tmp_path / "proj.tsv"
        assert main(["project", "--embeddings", str(synth_dir / "embeddings.tsv"),
                     "--labels", str(synth_dir / "labels.tsv"),
                     "--out", str(out)]) == 2  # targets have no labels
        # restrict to labeled sources only
        table = read_embedding_table(synth_dir / "embeddings.tsv")
        labels = read_labels(synth_dir / "labels.tsv")
        subset = tmp_path / "sources_only.tsv"
        with open(subset, "w") as fh:
            fh.write(f"#dim {table.dim}\n")
            for sid, vec in table.items():
                if sid in labels:
                    fh.write(sid + "\t" + "\t".join(f"{v:.17g}" for v in vec) + "\n")
        assert main(["project", "--embeddings", str(subset),
                     "--labels", str(synth_dir / "labels.tsv"),
                     "--out", str(out)]) == 0
        assert len(out.read_text().splitlines()) == len(labels)
        assert out.with_suffix(".png").exists()

    def test_too_few_points_exit_2(self, tmp_path):
        emb = tmp_path / "two.tsv"
        emb.write_text("#dim 2\na\t1.0\t2.0\nb\t3.0\t4.0\n", encoding="utf-8")
        labels = tmp_path / "labels.tsv"
        labels.write_text("a\t0\nb\t1\n", encoding="utf-8")
        assert main(["project", "--embeddings", str(emb), "--labels", str(labels),
                     "--out", str(tmp_path / "p.tsv")]) == 2


class TestConfigFile:

    def test_config_supplies_defaults_flags_override(self, tmp_path, capsys):
        edges = tmp_path / "edges.tsv"
        edges.write_text("a\tr\tb\nb\tr\tc\n", encoding="utf-8")
        cfg = tmp_path / "run.cfg"
        cfg.write_text("dim=4\nepochs=0\nseed=11\n", encoding="utf-8")
        out = tmp_path / "emb.tsv"
        assert main(["train-graph", str(edges), "--config", str(cfg),
                     "--dim", "6", "--out", str(out)]) == 0
        table = read_embedding_table(out)
        assert table.dim == 6  # flag wins over config file

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        edges = tmp_path / "edges.tsv"
        edges.write_text("a\tr\tb\n", encoding="utf-8")
        cfg = tmp_path / "run.cfg"
        cfg.write_text("warp_factor=9\n", encoding="utf-8")
        code = main(["train-graph", str(edges), "--config", str(cfg),
                     "--out", str(tmp_path / "e.tsv")])
        assert code == 2
        assert "warp_factor" in capsys.readouterr().err
