import json

import numpy as np
import pytest

from conftest import exponential_air
from rt60track.cli import load_air_pool, main, read_config
from rt60track.datagen import DatasetManifest
from rt60track.errors import ArgumentError
from rt60track.features import read_gtsp
from rt60track.neuralnet.train import read_loss_trace
from rt60track.signal import write_wav


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pool(tmp_path_factory):
    out = tmp_path_factory.mktemp("pool")
    assert run("simulate", "--n", 12, "--rt60", "0.1:0.8", "--seed", 7, "--out", out) == 0
    return out


@pytest.fixture(scope="module")
def small_run(tmp_path_factory, pool):
    out = tmp_path_factory.mktemp("run")
    common = ("--seed", 3, "--out", out, "--airs", pool / "airs")
    assert run("dataset", "--regime", "static2", "--regime", "test_dynamic6", "--n", 10, "--n-test", 4, *common) == 0
    assert run("train", "--regime", "static2", "--epochs", 2, "--batch-size", 4, *common) == 0
    return out, common


class TestSimulate:
    def test_outputs(self, pool):
        lines = (pool / "airs" / "airs.jsonl").read_text().splitlines()
        assert len(lines) == 12
        recs = [json.loads(l) for l in lines]
        assert all(0.01 <= r["rt60_true"] <= 0.9 for r in recs)
        assert all((pool / "airs" / f"{r['id']}.wav").exists() for r in recs)
        record = json.loads((pool / "run_simulate.json").read_text())
        assert record["args"]["seed"] == 7 and len(record["outputs"]) == 13

    def test_deterministic(self, pool, tmp_path):
        assert run("simulate", "--n", 12, "--rt60", "0.1:0.8", "--seed", 7, "--out", tmp_path) == 0
        for f in (pool / "airs").iterdir():
            assert (tmp_path / "airs" / f.name).read_bytes() == f.read_bytes()

    @pytest.mark.parametrize("argv", [("--n", 0), ("--rt60", "0.5:2.0"), ("--rt60", "x")])
    def test_bad_arguments_exit_2(self, tmp_path, argv, capsys):
        code = None
        try:
            code = run("simulate", *argv, "--seed", 1, "--out", tmp_path)
        except SystemExit as exc:
            code = exc.code
        assert code == 2

    def test_missing_seed(self, tmp_path):
        assert run("simulate", "--n", 2, "--out", tmp_path) == 2


class TestDataset:
    def test_dynamic_split_and_switches(self, pool, tmp_path):
        assert run("dataset", "--regime", "dynamic_rand", "--n", 200, "--seed", 7, "--out", tmp_path,
                   "--airs", pool / "airs", "--no-audio") == 0
        m = DatasetManifest.read(tmp_path / "dataset" / "manifest.jsonl")
        train, val = m.subset("dynamic_rand", "train"), m.subset("dynamic_rand", "val")
        assert (len(train), len(val)) == (160, 40)
        assert all(0.8 <= e.switch_time_s <= 3.2 for e in train + val)

    def test_static2_samples(self, small_run):
        out, _ = small_run
        d = out / "dataset" / "static2"
        wavs = sorted(d.glob("*.wav"))
        assert len(wavs) == 10
        from rt60track.signal import read_wav

        assert read_wav(wavs[0]).samples.size == 32000
        spec = read_gtsp(next(d.glob("*.gtsp")))
        assert spec.shape == (21, 999)
        gt = (d / f"{wavs[0].stem}_gt.csv").read_text().splitlines()
        assert gt[0] == "frame_index,rt60_s" and len(gt) == 1000

    def test_sizing_error(self, tmp_path):
        # each speech signal needs 4 distinct AIRs
        assert run("simulate", "--n", 3, "--seed", 1, "--out", tmp_path) == 0
        assert run("dataset", "--regime", "static4", "--n", 8, "--seed", 1, "--out", tmp_path, "--no-audio") == 3

    def test_missing_pool(self, tmp_path):
        assert run("dataset", "--seed", 1, "--out", tmp_path, "--no-audio") == 3


class TestTrainEvaluateExplain:
    def test_train_outputs(self, small_run):
        out, _ = small_run
        trace = read_loss_trace(out / "models" / "static2_loss.csv")
        assert [t[0] for t in trace] == [1, 2]
        assert all(np.isfinite(t[1]) and np.isfinite(t[2]) for t in trace)

    def test_seed_repeat(self, small_run, tmp_path):
        out, common = small_run
        args = [a if a != out else tmp_path for a in common]
        (tmp_path / "dataset").mkdir()
        (tmp_path / "dataset" / "manifest.jsonl").write_bytes((out / "dataset" / "manifest.jsonl").read_bytes())
        assert run("train", "--regime", "static2", "--epochs", 2, "--batch-size", 4, *args) == 0
        for name in ("static2.crnn", "static2_loss.csv"):
            assert (tmp_path / "models" / name).read_bytes() == (out / "models" / name).read_bytes()

    def test_zero_learning_rate(self, small_run, tmp_path):
        out, common = small_run
        args = [a if a != out else tmp_path for a in common]
        (tmp_path / "dataset").mkdir()
        (tmp_path / "dataset" / "manifest.jsonl").write_bytes((out / "dataset" / "manifest.jsonl").read_bytes())
        assert run("train", "--regime", "static2", "--epochs", 3, "--lr", 0, "--dropout", 0,
                   "--batch-size", 64, *args) == 0
        trace = read_loss_trace(tmp_path / "models" / "static2_loss.csv")
        train_mse = [t[1] for t in trace]
        # validation still moves with the batch-norm running statistics
        assert max(train_mse) - min(train_mse) <= 1e-6

    def test_evaluate(self, small_run):
        out, common = small_run
        assert run("evaluate", "--checkpoints", out / "models" / "static2.crnn", *common) == 0
        table = (out / "eval" / "table.csv").read_text(encoding="utf-8").splitlines()
        assert table[0].startswith("model,test_dynamic6:μ,test_dynamic6:σ")
        assert table[1].startswith("static2,")
        assert list((out / "eval").glob("curves_static2_test_dynamic6.csv"))

    def test_explain(self, small_run):
        out, common = small_run
        m = DatasetManifest.read(out / "dataset" / "manifest.jsonl")
        sid = m.subset("test_dynamic6", "test")[0].id
        assert run("explain", "--checkpoint", out / "models" / "static2.crnn", "--sample-id", sid,
                   "--frame", 10, "--steps", 50, *common) == 0
        sal = read_gtsp(out / "explain" / f"{sid}_saliency.gtsp")
        assert sal.shape == (21, 2999)
        assert not np.any(sal[:, 10 * 32 + 103 :])
        curves = (out / "explain" / f"{sid}_curves.csv").read_text().splitlines()
        assert len(curves) == 3000

    def test_explain_unknown_id(self, small_run):
        out, common = small_run
        assert run("explain", "--checkpoint", out / "models" / "static2.crnn", "--sample-id", "nope", *common) == 3

    def test_explain_bad_frame(self, small_run):
        out, common = small_run
        m = DatasetManifest.read(out / "dataset" / "manifest.jsonl")
        sid = m.subset("test_dynamic6", "test")[0].id
        assert run("explain", "--checkpoint", out / "models" / "static2.crnn", "--sample-id", sid,
                   "--frame", 9999, *common) == 2

    def test_corrupt_checkpoint(self, small_run, tmp_path):
        out, common = small_run
        bad = tmp_path / "bad.crnn"
        bad.write_bytes(b"NOPE")
        assert run("evaluate", "--checkpoints", bad, *common) == 3


class TestConfig:
    def test_config_supplies_defaults(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# pool\nseed = 7\nn = 3\nrt60 = 0.2:0.4\n")
        assert run("simulate", "--config", cfg, "--out", tmp_path) == 0
        record = json.loads((tmp_path / "run_simulate.json").read_text())
        assert record["args"]["n"] == 3 and record["args"]["rt60"] == [0.2, 0.4]

    def test_flag_wins(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("seed = 7\nn = 3\n")
        assert run("simulate", "--config", cfg, "--n", 2, "--out", tmp_path) == 0
        assert json.loads((tmp_path / "run_simulate.json").read_text())["args"]["n"] == 2

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("seed = 7\nbogus = 1\n")
        assert run("simulate", "--config", cfg, "--out", tmp_path) == 2

    def test_malformed(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("seed 7\n")
        with pytest.raises(ArgumentError):
            read_config(cfg)


def test_measured_pool_filtering(tmp_path):
    write_wav(tmp_path / "good.wav", exponential_air(0.4, carrier=True))
    write_wav(tmp_path / "long.wav", exponential_air(2.5, seconds=4.0, carrier=True))
    write_wav(tmp_path / "flat.wav", np.r_[1.0, np.zeros(4000)])
    airs = load_air_pool(None, tmp_path)
    assert [a.id for a in airs] == ["meas-good"]
    assert airs[0].source == "measured" and airs[0].rt60_true == pytest.approx(0.4, rel=0.05)
