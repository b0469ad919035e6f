import json
import subprocess
import sys

import jsonschema
import numpy as np
import pytest

from geaet import tensor
from geaet.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_FAILED, EXIT_OK, main

TINY = [
    "--set", 'dataset.kind="sbm"', "--set", "dataset.n_per_cluster=4", "--set", "dataset.clusters=3",
    "--set", "dataset.p_in=0.8", "--set", "dataset.p_out=0.1", "--set", "dataset.count=12",
    "--set", "model.layers=1", "--set", "model.dim=8", "--set", "model.units=4",
    "--set", "model.self_heads=2", "--set", "model.ext_heads=2", "--set", 'model.mpnn="gcn"',
    "--set", "optim.epochs=2", "--set", "optim.warmup_epochs=1", "--set", "optim.batch_size=4",
]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", *TINY, "--out", str(out)]) == EXIT_OK
    return out


class TestGenerate:
    def test_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            assert main(["generate", "tree", "--r", "2", "--count", "40", "--seed", "3", "--out", str(tmp_path / name)]) == 0
        for f in ("train.jsonl", "valid.jsonl", "test.jsonl", "meta.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_split_sizes(self, tmp_path, capsys):
        main(["generate", "tree", "--r", "2", "--count", "96", "--out", str(tmp_path)])
        assert "train 77, valid 10, test 9" in capsys.readouterr().out
        assert sum(1 for _ in open(tmp_path / "train.jsonl")) == 77

    def test_sbm(self, tmp_path):
        args = ["generate", "sbm", "--count", "5", "--clusters", "3", "--n-per-cluster", "4", "--out", str(tmp_path)]
        assert main(args) == 0
        meta = json.loads((tmp_path / "meta.json").read_text())
        assert sum(meta["sizes"]) == 5


class TestExitCodes:
    def test_invalid_depth(self, tmp_path, capsys):
        assert main(["generate", "tree", "--r", "1", "--out", str(tmp_path)]) == EXIT_CONFIG
        assert "dataset.r" in capsys.readouterr().err

    def test_unknown_key(self, capsys):
        assert main(["train", "--set", "model.widht=3"]) == EXIT_CONFIG
        assert "widht" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG

    def test_missing_dataset_dir(self, tmp_path):
        args = ["train", "--set", 'dataset.kind="jsonl"', "--set", f'dataset.path="{tmp_path / "none"}"']
        assert main(args) == EXIT_CONFIG

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self, capsys):
        assert main(["train", *TINY, "--set", "optim.lr=1e300"]) == EXIT_DIVERGED
        assert "step" in capsys.readouterr().err

    def test_bad_checkpoint(self, tmp_path, trained):
        args = ["eval", *TINY, "--set", "model.units=2", "--checkpoint", str(trained / "checkpoint.json")]
        assert main(args) == EXIT_CONFIG


class TestTrainEval:
    def test_config_echo(self, trained):
        cfg = json.loads((trained / "config.resolved.json").read_text())
        report = json.loads((trained / "report.json").read_text())
        assert cfg == report["config"]
        assert cfg["model"]["dim"] == 8 and cfg["optim"]["lr"] == 1e-3

    def test_config_file_and_override_precedence(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"model": {"dim": 16}, "seed": 4}))
        out = tmp_path / "o"
        main(["generate", "tree", "--config", str(tmp_path / "c.json"), "--set", "model.dim=12", "--count", "10",
              "--out", str(out)])
        cfg = json.loads((out / "config.resolved.json").read_text())
        assert cfg["model"]["dim"] == 12 and cfg["seed"] == 4

    def test_eval_reproduces_test_metric(self, trained, tmp_path):
        assert main(["eval", *TINY, "--checkpoint", str(trained / "checkpoint.json"), "--out", str(tmp_path)]) == 0
        report = json.loads((trained / "report.json").read_text())
        ev = json.loads((tmp_path / "eval.json").read_text())
        assert ev["splits"]["test"]["metric"] == report["test_metric"]
        assert ev["splits"]["valid"]["metric"] == report["best_val_metric"]

    def test_rerun_bit_identical(self, trained, tmp_path):
        assert main(["train", *TINY, "--out", str(tmp_path)]) == 0
        assert (tmp_path / "checkpoint.json").read_bytes() == (trained / "checkpoint.json").read_bytes()
        a = json.loads((tmp_path / "report.json").read_text())
        b = json.loads((trained / "report.json").read_text())
        a.pop("seconds"), b.pop("seconds")
        assert a == b


class TestAttnDump:
    def test_rows_and_schema(self, trained, tmp_path):
        args = ["attn-dump", *TINY, "--checkpoint", str(trained / "checkpoint.json"), "--split", "train",
                "--limit", "3", "--out", str(tmp_path)]
        assert main(args) == 0
        schema = json.loads((tmp_path / "attention.schema.json").read_text())
        lines = (tmp_path / "attention.jsonl").read_text().splitlines()
        assert len(lines) == 3
        for line in lines:
            entry = json.loads(line)
            jsonschema.validate(entry, schema)
            for layer in entry["layers"]:
                for kind in ("gea", "self"):
                    for head in layer[kind]["heads"]:
                        np.testing.assert_allclose(np.sum(head, axis=1), 1.0, atol=1e-9)
            assert len(entry["salience"]) == 12

    def test_bad_split(self, trained):
        args = ["attn-dump", *TINY, "--checkpoint", str(trained / "checkpoint.json"), "--split", "dev"]
        assert main(args) == EXIT_CONFIG


class TestGradcheck:
    def test_passes(self, tmp_path, capsys):
        assert main(["gradcheck", "--out", str(tmp_path)]) == EXIT_OK
        rows = json.loads((tmp_path / "gradcheck.json").read_text())
        assert all(r["ok"] for r in rows) and len(rows) >= 30
        assert "components passed" in capsys.readouterr().out

    def test_corrupted_backward_is_caught(self, monkeypatch, capsys):
        good = tensor.BACKWARD["sigmoid"]
        monkeypatch.setitem(tensor.BACKWARD, "sigmoid", lambda ctx, g: tuple(1.01 * x for x in good(ctx, g)))
        assert main(["gradcheck"]) == EXIT_FAILED
        failed = [line for line in capsys.readouterr().out.splitlines() if line.startswith("failed:")]
        assert failed and "sigmoid" in failed[0] and "gatedgcn" in failed[0]
        assert "matmul" not in failed[0]


def test_bench(tmp_path, capsys):
    assert main(["bench", "--sizes", "64,128,256", "--out", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "bench.json").read_text())
    assert {d["variant"] for d in data} == {"geanet", "geaet_self_attention"}
    assert all(len(d["rows"]) == 3 for d in data)


def test_sweep(tmp_path):
    assert main(["sweep", "heads", *TINY, "--seeds", "0", "--values", "1,2", "--out", str(tmp_path)]) == 0
    table = json.loads((tmp_path / "table.json").read_text())
    assert [r["setting"] for r in table["rows"]] == ["heads=1", "heads=2"]
    assert (tmp_path / "table.txt").read_text().count("\n") == 3


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "geaet", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("geaet ")


def test_shipped_configs_match_acceptance_runs():
    from pathlib import Path

    import test_acceptance as acc
    from geaet.config import load_config, resolve, to_dict, with_overrides

    root = Path(__file__).resolve().parents[1] / "configs"
    pairs = {
        "tree_r3.json": resolve(acc.TREE_R3),
        "tree_r4.json": resolve(acc.TREE_R4),
        "tree_r4_gcn.json": with_overrides(resolve(acc.TREE_R4), acc.GCN_MATCHED),
        "sbm_gcn_geanet.json": resolve(acc.SBM_BASE),
        "sbm_gcn.json": with_overrides(resolve(acc.SBM_BASE), {"model.use_geanet": False}),
    }
    for name, cfg in pairs.items():
        assert to_dict(load_config(root / name)) == to_dict(cfg), name
