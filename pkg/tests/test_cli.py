from __future__ import annotations

import csv
import os
import sys

import numpy as np
import pytest

from ecgc.cli import LOCK_NAME, aggregate, main
from ecgc.config import load_config
from ecgc.errors import ConfigError, MissingSummary

SMALL = """\
[data]
n_records = 48
duration_s = 4.0
stratify = true

[encoder]
n_blocks = 2
base_channels = 4
embed_dim = 8
stem_kernel = 8
stem_stride = 8

[strategy]
kind = Rhythm

[train]
epochs = 2
lr = 0.001
batch_size = 16

[eval]
probe_epochs = 2
baseline_epochs = 2
"""


def run(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.ini"
    cfg.write_text(SMALL)
    assert run("synth", "--config", cfg, "--output-dir", root / "data", "--seed", 1, "--log-level", "WARNING") == 0
    manifest = root / "data" / "manifest.csv"
    common = ["--config", cfg, "--set", f"data.manifest={manifest}", "--log-level", "WARNING"]
    assert run("pretrain", *common, "--output-dir", root / "pre") == 0
    assert run("probe", *common, "--output-dir", root / "probe", "--set", f"eval.checkpoint={root / 'pre' / 'encoder.ckpt'}") == 0
    assert run("baseline", *common, "--output-dir", root / "base") == 0
    return root, cfg, common


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestSynth:
    def test_counts_and_bytes(self, tmp_path, workspace):
        root, cfg, _ = workspace
        assert run("synth", "--config", cfg, "--output-dir", tmp_path / "a", "--set", "data.n_records=100", "--log-level", "WARNING") == 0
        assert len(read_rows(tmp_path / "a" / "manifest.csv")) == 100
        signals = [p for p in (tmp_path / "a").rglob("*") if p.is_file() and p.name not in ("manifest.csv", "run.meta")]
        assert len(signals) == 100
        assert run("synth", "--config", cfg, "--output-dir", tmp_path / "b", "--set", "data.n_records=100", "--log-level", "WARNING") == 0
        for p in (tmp_path / "a").rglob("*"):
            if p.is_file() and p.name != "run.meta":  # run.meta records the output_dir
                assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()

    @pytest.mark.skipif(sys.platform == "win32" or os.geteuid() == 0, reason="root ignores directory permissions")
    def test_unwritable(self, tmp_path, capsys):
        locked = tmp_path / "ro"
        locked.mkdir()
        locked.chmod(0o500)
        try:
            assert run("synth", "--output-dir", locked / "x", "--set", "data.n_records=4") == 70
            assert "IoError" in capsys.readouterr().err
        finally:
            locked.chmod(0o700)

    def test_unwritable_path_is_a_file(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert run("synth", "--output-dir", blocker / "x", "--set", "data.n_records=4") == 70
        err = capsys.readouterr().err
        assert err.startswith("error: IoError:") and str(blocker) in err


class TestConfig:
    def test_unknown_key(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[train]\nepochz = 3\n")
        assert run("synth", "--config", bad, "--output-dir", tmp_path / "o") == 2
        assert "ConfigError" in capsys.readouterr().err
        assert run("synth", "--set", "nope.x=1", "--output-dir", tmp_path / "o") == 2

    def test_override_precedence(self, tmp_path):
        ini = tmp_path / "c.ini"
        ini.write_text("[run]\nseed = 3\n[train]\nlr = 0.5\n")
        cfg = load_config(ini, ["train.lr=0.25"])
        assert cfg.seed == 3 and cfg["train"]["lr"] == 0.25
        assert cfg["train"]["epochs"] == 50

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            load_config(None, ["train.epochs=many"])

    def test_meta_round_trip(self, workspace):
        root, _, _ = workspace
        cfg = load_config(root / "pre" / "run.meta")
        again = root / "pre.ini"
        again.write_text(cfg.to_ini())
        assert load_config(again).values == cfg.values
        assert cfg["strategy"]["kind"] == "Rhythm"
        assert "[meta]" in (root / "pre" / "run.meta").read_text()


class TestRuns:
    def test_artifacts(self, workspace):
        root, _, _ = workspace
        for name in ("encoder.ckpt", "metrics.csv", "run.meta"):
            assert (root / "pre" / name).is_file()
        assert not (root / "pre" / LOCK_NAME).exists()
        assert read_rows(root / "probe" / "summary.csv")[0]["label"] == "Rhythm"
        assert read_rows(root / "base" / "summary.csv")[0]["label"] == "Baseline"

    def test_schema_equal(self, workspace):
        root, _, _ = workspace
        head = lambda p: p.read_text().splitlines()[0]  # noqa: E731
        assert head(root / "probe" / "metrics.csv") == head(root / "base" / "metrics.csv")
        assert head(root / "probe" / "summary.csv") == head(root / "base" / "summary.csv")

    def test_lock(self, workspace, tmp_path, capsys):
        _, _, common = workspace
        out = tmp_path / "busy"
        out.mkdir()
        (out / LOCK_NAME).write_text("123")
        assert run("baseline", *common, "--output-dir", out) == 72
        assert "OutputLocked" in capsys.readouterr().err

    def test_probe_shape_mismatch(self, workspace, tmp_path, capsys):
        root, _, common = workspace
        code = run("probe", *common, "--output-dir", tmp_path / "p", "--set", f"eval.checkpoint={root / 'pre' / 'encoder.ckpt'}", "--set", "encoder.embed_dim=16")
        assert code == 50
        assert "ShapeMismatch" in capsys.readouterr().err

    def test_replay_from_meta(self, workspace, tmp_path):
        root, _, _ = workspace
        for sub in ("pre", "probe", "base"):
            meta_cmd = [line.split("=", 1)[1].strip() for line in (root / sub / "run.meta").read_text().splitlines() if line.startswith("command")][0]
            assert run(meta_cmd, "--config", root / sub / "run.meta", "--output-dir", tmp_path / sub, "--log-level", "WARNING") == 0
            assert (tmp_path / sub / "metrics.csv").read_bytes() == (root / sub / "metrics.csv").read_bytes()
        assert (tmp_path / "pre" / "encoder.ckpt").read_bytes() == (root / "pre" / "encoder.ckpt").read_bytes()

    def test_inputs_untouched(self, workspace):
        root, cfg, common = workspace
        manifest = root / "data" / "manifest.csv"
        before = manifest.read_bytes()
        assert run("extract-attrs", *common, "--output-dir", root / "data") == 70
        assert manifest.read_bytes() == before


class TestReport:
    def write(self, d, label, auroc):
        d.mkdir(parents=True)
        (d / "summary.csv").write_text(f"label,phase,seed,auroc_macro\n{label},probe,0,{auroc!r}\n")
        return d

    def test_five_seeds(self, tmp_path):
        vals = [0.9, 0.91, 0.92, 0.95, 0.97]
        dirs = [self.write(tmp_path / f"s{i}", "Rhythm", v) for i, v in enumerate(vals)]
        dirs.append(self.write(tmp_path / "b", "Baseline", 0.8))
        rows = aggregate(dirs)
        assert rows[0][:2] == ("Rhythm", 5)
        assert rows[0][2] == pytest.approx(np.mean(vals)) and rows[0][3] == pytest.approx(np.std(vals))
        assert rows[1] == ("Baseline", 1, 0.8, 0.0)
        assert run("report", *dirs, "--output-dir", tmp_path / "rep") == 0
        assert "Rhythm" in (tmp_path / "rep" / "summary.txt").read_text()
        assert len(read_rows(tmp_path / "rep" / "summary.csv")) == 2

    def test_missing_summary(self, tmp_path, capsys):
        (tmp_path / "empty").mkdir()
        with pytest.raises(MissingSummary):
            aggregate([tmp_path / "empty"])
        assert run("report", tmp_path / "empty", "--output-dir", tmp_path / "r") == 71

    def test_empty_list_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["report"])
        assert exc.value.code == 2

    def test_threads_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ECGC_THREADS", "zero")
        assert run("synth", "--output-dir", tmp_path / "t", "--set", "data.n_records=4") == 2
        monkeypatch.setenv("ECGC_THREADS", "1")
        assert run("synth", "--output-dir", tmp_path / "t", "--set", "data.n_records=4", "--set", "data.duration_s=2.0") == 0


class TestResnet18:
    def test_flag_resolves_into_meta(self, tmp_path):
        assert run("synth", "--resnet18", "--set", "encoder.base_channels=32", "--output-dir", tmp_path, "--set", "data.n_records=4", "--set", "data.duration_s=2.0") == 0
        enc = load_config(tmp_path / "run.meta")["encoder"]
        assert (enc["n_blocks"], enc["base_channels"], enc["stem_stride"]) == (8, 32, 4)
