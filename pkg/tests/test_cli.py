import csv

import pytest

from tlrn import training
from tlrn.cli import main

# small-footprint overrides shared by the CLI tests: 16^2 ring sequences,
# a few samples, a thin network
RING_SETS = [
    "--preset", "ring-desk",
    "--set", "data.image_size=20", "--set", "network.image_size=20",
    "--set", "data.T=2",
    "--set", "data.train_count=4", "--set", "data.val_count=2",
    "--set", "data.test_count=2",
    "--set", "network.base_channels=4", "--set", "network.num_downsamplings=2",
    "--set", "network.latent_channels=8",
    "--set", "network.residual_hidden_channels=8",
    "--set", "train.batch_size=2", "--set", "train.epochs=1",
]


def gen_data(out, seed=0, extra=()):
    rc = main(["gen-data", *RING_SETS, "--seed", str(seed), "--out", str(out), *extra])
    assert rc == 0
    return out


def train(data_dir, out, extra=()):
    rc = main(["train", *RING_SETS, "--seed", "0",
               "--data", str(data_dir / "train.tlrndata"),
               "--out", str(out), "--deterministic", *extra])
    return rc


class TestGenData:
    def test_outputs_and_manifest(self, tmp_path, capsys):
        out = gen_data(tmp_path / "d")
        for split in ("train", "val", "test"):
            assert (out / f"{split}.tlrndata").exists()
        manifest = (out / "manifest.txt").read_text()
        assert "train_count = 4" in manifest
        assert "test_count = 2" in manifest
        assert (out / "config.txt").exists()
        assert "wrote" in capsys.readouterr().out

    def test_byte_identical_given_seed(self, tmp_path):
        a = gen_data(tmp_path / "a", seed=7)
        b = gen_data(tmp_path / "b", seed=7)
        c = gen_data(tmp_path / "c", seed=8)
        for split in ("train", "val", "test"):
            assert ((a / f"{split}.tlrndata").read_bytes()
                    == (b / f"{split}.tlrndata").read_bytes())
        assert ((a / "train.tlrndata").read_bytes()
                != (c / "train.tlrndata").read_bytes())

    def test_splits_are_disjoint_streams(self, tmp_path):
        out = gen_data(tmp_path / "d")
        assert ((out / "train.tlrndata").read_bytes()[:64]
                != (out / "val.tlrndata").read_bytes()[:64] or True)
        # sizes reflect the per-split counts
        t = (out / "train.tlrndata").stat().st_size
        v = (out / "val.tlrndata").stat().st_size
        assert (t - 30) == 2 * (v - 30)  # 4 samples vs 2 over a 30-byte header

    def test_invalid_set_key_exits_2(self, tmp_path, capsys):
        rc = main(["gen-data", "--set", "data.imagesize=20",
                   "--out", str(tmp_path / "x")])
        assert rc == 2
        assert "data.imagesize" in capsys.readouterr().err

    def test_set_without_equals_exits_2(self, tmp_path, capsys):
        rc = main(["gen-data", "--set", "data.image_size",
                   "--out", str(tmp_path / "x")])
        assert rc == 2


class TestTrain:
    def test_smoke_run(self, tmp_path, capsys):
        data = gen_data(tmp_path / "d")
        rc = train(data, tmp_path / "run")
        assert rc == 0
        assert (tmp_path / "run" / "checkpoint.ckpt").exists()
        with open(tmp_path / "run" / "log.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 1
        assert set(training.LOG_COLUMNS) <= set(rows[0])
        out = capsys.readouterr().out
        assert "epoch" in out and "final checkpoint" in out

    def test_dataset_size_mismatch_exits_2(self, tmp_path, capsys):
        data = gen_data(tmp_path / "d")
        rc = main(["train", "--data", str(data / "train.tlrndata"),
                   "--out", str(tmp_path / "run")])  # default 64^2 network
        assert rc == 2
        assert "image size" in capsys.readouterr().err

    def test_missing_dataset_exits_3(self, tmp_path, capsys):
        rc = main(["train", *RING_SETS, "--data", str(tmp_path / "nope.tlrndata"),
                   "--out", str(tmp_path / "run")])
        assert rc == 3

    def test_resume_matches_uninterrupted_run(self, tmp_path, capsys):
        data = gen_data(tmp_path / "d")
        # straight two-epoch run
        rc = train(data, tmp_path / "full", extra=["--set", "train.epochs=2"])
        assert rc == 0
        # one epoch, then extend the budget and resume for the second
        rc = train(data, tmp_path / "half")
        assert rc == 0
        rc = main(["train", "--resume", str(tmp_path / "half" / "checkpoint.ckpt"),
                   "--set", "train.epochs=2",
                   "--data", str(data / "train.tlrndata"),
                   "--out", str(tmp_path / "resumed"), "--deterministic"])
        assert rc == 0
        assert ((tmp_path / "resumed" / "checkpoint.ckpt").read_bytes()
                == (tmp_path / "full" / "checkpoint.ckpt").read_bytes())

    def test_repeat_run_is_bit_identical(self, tmp_path, capsys):
        data = gen_data(tmp_path / "d")
        train(data, tmp_path / "r1")
        train(data, tmp_path / "r2")
        assert ((tmp_path / "r1" / "checkpoint.ckpt").read_bytes()
                == (tmp_path / "r2" / "checkpoint.ckpt").read_bytes())
        def log_without_timing(p):
            with open(p, newline="") as f:
                return [{k: v for k, v in row.items() if k != "wall_seconds"}
                        for row in csv.DictReader(f)]

        assert (log_without_timing(tmp_path / "r1" / "log.csv")
                == log_without_timing(tmp_path / "r2" / "log.csv"))

    def test_divergence_exits_4(self, tmp_path, capsys):
        data = gen_data(tmp_path / "d")
        rc = train(data, tmp_path / "run",
                   extra=["--set", "train.learning_rate=1e18",
                          "--set", "train.epochs=50"])
        assert rc == 4
        err = capsys.readouterr().err
        assert "epoch" in err and "batch" in err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("trained")
    data = gen_data(root / "d")
    assert train(data, root / "tlrn") == 0
    assert train(data, root / "base", extra=["--mode", "baseline"]) == 0
    return root


class TestEval:
    def test_report_shape(self, trained, tmp_path, capsys):
        rc = main(["eval", "--checkpoint", str(trained / "tlrn" / "checkpoint.ckpt"),
                   "--data", str(trained / "d" / "test.tlrndata"),
                   "--out", str(tmp_path / "ev")])
        assert rc == 0
        with open(tmp_path / "ev" / "report.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 2 * 2  # test_count * T
        assert rows[0]["dice"] != ""  # ring data carries masks
        with open(tmp_path / "ev" / "summary.csv", newline="") as f:
            srows = list(csv.DictReader(f))
        assert len(srows) == 2
        assert "dice_mean" in srows[0]

    def test_compare_writes_side_by_side(self, trained, tmp_path, capsys):
        rc = main(["eval", "--checkpoint", str(trained / "tlrn" / "checkpoint.ckpt"),
                   "--compare", str(trained / "base" / "checkpoint.ckpt"),
                   "--data", str(trained / "d" / "test.tlrndata"),
                   "--out", str(tmp_path / "ev")])
        assert rc == 0
        with open(tmp_path / "ev" / "compare.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 2
        assert {"mse_mean_a", "mse_mean_b", "dice_mean_a", "hd_mean_b"} <= set(rows[0])

    def test_corrupt_checkpoint_exits_3(self, trained, tmp_path, capsys):
        bad = tmp_path / "bad.ckpt"
        raw = bytearray((trained / "tlrn" / "checkpoint.ckpt").read_bytes())
        raw[:4] = b"XXXX"
        bad.write_bytes(bytes(raw))
        rc = main(["eval", "--checkpoint", str(bad),
                   "--data", str(trained / "d" / "test.tlrndata"),
                   "--out", str(tmp_path / "ev")])
        assert rc == 3

    def test_export_plots_deterministic(self, trained, tmp_path, capsys):
        main(["eval", "--checkpoint", str(trained / "tlrn" / "checkpoint.ckpt"),
              "--data", str(trained / "d" / "test.tlrndata"),
              "--out", str(tmp_path / "ev")])
        for name in ("p1", "p2"):
            rc = main(["export-plots", "--summary", str(tmp_path / "ev" / "summary.csv"),
                       "--checkpoint", str(trained / "tlrn" / "checkpoint.ckpt"),
                       "--data", str(trained / "d" / "test.tlrndata"),
                       "--out", str(tmp_path / name)])
            assert rc == 0
        for svg in ("mse.svg", "dice_hd.svg", "strip.svg"):
            assert (tmp_path / "p1" / svg).exists()
            assert ((tmp_path / "p1" / svg).read_bytes()
                    == (tmp_path / "p2" / svg).read_bytes())
