import numpy as np
import pytest

from cocorec import cli


def run(argv, capsys):
    rc = cli.main(argv)
    out = capsys.readouterr()
    return rc, out.out, out.err


@pytest.fixture
def synth_snapshot(tmp_path):
    path = str(tmp_path / "data.txt")
    rc = cli.main([
        "synth", "--out", path, "--users", "12", "--items", "40",
        "--sessions", "120", "--clusters", "4", "--n-folds", "3", "--seed", "0",
    ])
    assert rc == 0
    return path


class TestSynthCommand:
    def test_writes_snapshot_and_labels(self, tmp_path, capsys):
        path = str(tmp_path / "d.txt")
        rc, out, _ = run(["synth", "--out", path, "--users", "10", "--items",
                          "30", "--sessions", "80", "--clusters", "3"], capsys)
        assert rc == 0
        assert "snapshot" in out
        assert (tmp_path / "d.txt").exists()
        assert (tmp_path / "d.txt.labels").exists()

    def test_same_seed_identical_snapshot(self, tmp_path, capsys):
        blobs = []
        for name in ("a.txt", "b.txt"):
            path = str(tmp_path / name)
            rc, _, _ = run(["synth", "--out", path, "--users", "10", "--items",
                            "30", "--sessions", "80", "--clusters", "3",
                            "--seed", "7"], capsys)
            assert rc == 0
            blobs.append((tmp_path / name).read_bytes())
        assert blobs[0] == blobs[1]


class TestPrepareCommand:
    def test_stats_printed(self, tmp_path, capsys):
        raw = tmp_path / "raw.tsv"
        rows = []
        t = 0
        for u in range(6):
            for k in range(12):
                rows.append(f"u{u}\ti{(u + k) % 5}\t{t}")
                t += 60 if k % 3 != 2 else 8 * 3600
        raw.write_text("\n".join(rows) + "\n")
        out_path = str(tmp_path / "snap.txt")
        rc, out, _ = run(["prepare", str(raw), "--out", out_path,
                          "--min-interactions", "2", "--n-folds", "2"], capsys)
        assert rc == 0
        assert "#sessions" in out and "interactions/user" in out

    def test_empty_file_fails(self, tmp_path, capsys):
        raw = tmp_path / "empty.tsv"
        raw.write_text("")
        rc, _, err = run(["prepare", str(raw), "--out", str(tmp_path / "s.txt")],
                         capsys)
        assert rc == 1
        assert "error" in err


class TestTrainEvalRecommend:
    def test_full_roundtrip(self, synth_snapshot, tmp_path, capsys):
        ckpt = str(tmp_path / "model.bin")
        rc, out, _ = run(["train", "--data", synth_snapshot, "--out", ckpt,
                          "--dim", "8", "--epochs", "2", "--batch-size", "32"],
                         capsys)
        assert rc == 0
        assert (tmp_path / "model.bin").exists()
        assert (tmp_path / "model.bin.report.txt").exists()

        csv_path = str(tmp_path / "metrics.csv")
        rc, out, _ = run(["eval", "--data", synth_snapshot, "--model", "sknn",
                          "--out", csv_path], capsys)
        assert rc == 0
        assert "sknn" in out
        assert "model,fold,K" in (tmp_path / "metrics.csv").read_text()

        rc, out, _ = run(["recommend", "--data", synth_snapshot,
                          "--checkpoint", ckpt, "--user", "0",
                          "--items", "1,2", "--k", "5"], capsys)
        assert rc == 0
        lines = [ln for ln in out.strip().splitlines() if ln]
        assert len(lines) == 5
        for rank, line in enumerate(lines, 1):
            parts = line.split(",")
            assert int(parts[0]) == rank
            float(parts[2])

    def test_recommend_unknown_user(self, synth_snapshot, tmp_path, capsys):
        ckpt = str(tmp_path / "model.bin")
        run(["train", "--data", synth_snapshot, "--out", ckpt, "--dim", "4",
             "--epochs", "1"], capsys)
        with pytest.raises(SystemExit):
            cli.main(["recommend", "--data", synth_snapshot, "--checkpoint",
                      ckpt, "--user", "nope", "--items", "1"])

    def test_bad_fold_rejected(self, synth_snapshot, tmp_path, capsys):
        with pytest.raises(SystemExit):
            cli.main(["train", "--data", synth_snapshot, "--fold", "9",
                      "--out", str(tmp_path / "m.bin")])


class TestGradcheckCommand:
    def test_passes_on_seeded_toys(self, capsys):
        rc, out, _ = run(["gradcheck", "--trials", "3"], capsys)
        assert rc == 0
        assert "PASS" in out

    def test_fails_with_absurd_tolerance(self, capsys):
        rc, out, _ = run(["gradcheck", "--trials", "2", "--tol", "1e-300"], capsys)
        assert rc == 1
        assert "FAIL" in out


class TestConfigFile:
    def test_file_overrides_defaults(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("users = 9\nitems = 30\nsessions = 60\nclusters = 3\n")
        path = str(tmp_path / "d.txt")
        rc, out, _ = run(["synth", "--out", path, "--config", str(cfg)], capsys)
        assert rc == 0
        snap = (tmp_path / "d.txt").read_text().splitlines()
        assert snap[1] == "users\t9"

    def test_flag_beats_file(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("users = 9\nitems = 30\nsessions = 60\nclusters = 3\n")
        path = str(tmp_path / "d.txt")
        rc, _, _ = run(["synth", "--out", path, "--config", str(cfg),
                        "--users", "11"], capsys)
        assert rc == 0
        snap = (tmp_path / "d.txt").read_text().splitlines()
        assert snap[1] == "users\t11"

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("frobnicate = 1\n")
        with pytest.raises(SystemExit):
            cli.main(["synth", "--out", str(tmp_path / "d.txt"),
                      "--config", str(cfg)])
