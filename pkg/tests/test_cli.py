import json

import numpy as np
import pytest

from biaslens.cli import report_csv_text, report_json_text, run_command
from biaslens.imgio import load_dataset


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """A small synthetic pair generated through the CLI itself."""
    root = tmp_path_factory.mktemp("corpus")
    code = run_command(["synth", "--out", str(root), "--classes", "2",
                        "--samples-per-class", "10", "--size", "32",
                        "--seed", "0"])
    assert code == 0
    return root


def run_audit(data, out, *extra):
    return run_command(["audit", "--data", str(data), "--out", str(out),
                        "--epochs", "0", "--input-size", "16",
                        "--crop-size", "8", *extra])


class TestSynthCommand:
    def test_writes_both_trees_with_masks_and_spec(self, corpus):
        for kind in ("unbiased", "biased"):
            ds = load_dataset(corpus / kind)
            assert len(ds) == 20
            assert (corpus / kind / "synth.json").exists()
            assert any((corpus / kind / "_masks").rglob("*.png"))

    def test_refuses_to_overwrite_without_force(self, corpus, capsys):
        assert run_command(["synth", "--out", str(corpus), "--classes", "2",
                            "--samples-per-class", "10", "--size", "32"]) == 1
        assert "error" in capsys.readouterr().err

    def test_biased_tree_differs_from_unbiased(self, corpus):
        a = load_dataset(corpus / "unbiased")
        b = load_dataset(corpus / "biased")
        assert any(not np.array_equal(ia, ib)
                   for ia, ib in zip(a.images, b.images))


class TestAuditCommand:
    def test_default_audit_writes_five_condition_report(self, corpus,
                                                        tmp_path, capsys):
        out = tmp_path / "run"
        assert run_audit(corpus / "unbiased", out) == 0
        report = json.loads((out / "report.json").read_text())
        names = [c["name"] for c in report["conditions"]]
        assert names == ["original", "fourier", "wavelet:haar", "median:5",
                         "median:5+wavelet:haar"]
        assert report["crop_probe"]["status"] == "OK"
        assert (out / "report.csv").exists()
        assert (out / "config.json").exists()
        stdout = capsys.readouterr().out
        assert "original: Accuracy:" in stdout
        assert "crop_probe:" in stdout

    def test_flags_and_deltas_present(self, corpus, tmp_path):
        out = tmp_path / "run"
        run_audit(corpus / "unbiased", out, "--transforms", "median:3")
        report = json.loads((out / "report.json").read_text())
        for cond in report["conditions"]:
            assert cond["flag"] in ("BIAS_INDICATED", "NO_INDICATION",
                                    "EXCLUDED_FROM_RULE")
            assert isinstance(cond["delta_pp"], float)

    def test_repeat_run_falls_back_to_hash_name(self, corpus, tmp_path):
        out = tmp_path / "run"
        run_audit(corpus / "unbiased", out, "--transforms", "median:3")
        # different config: new report lands beside the old one
        assert run_audit(corpus / "unbiased", out,
                         "--transforms", "wavelet:haar") == 0
        extra = [p for p in out.glob("report-*.json")]
        assert len(extra) == 1
        # identical config without --force: refused
        assert run_audit(corpus / "unbiased", out,
                         "--transforms", "wavelet:haar") == 1

    def test_force_overwrites_in_place(self, corpus, tmp_path):
        out = tmp_path / "run"
        run_audit(corpus / "unbiased", out, "--transforms", "median:3")
        before = (out / "report.json").read_text()
        assert run_audit(corpus / "unbiased", out, "--transforms", "median:3",
                         "--force") == 0
        after = (out / "report.json").read_text()
        assert json.loads(after)["config"] == json.loads(before)["config"]
        assert not list(out.glob("report-*.json"))

    def test_missing_data_dir_is_runtime_error(self, tmp_path, capsys):
        assert run_audit(tmp_path / "nope", tmp_path / "out") == 1
        err = capsys.readouterr().err
        assert json.loads(err.strip())["error"]


class TestUsageErrors:
    def test_unknown_wavelet_family_exits_2(self, corpus, tmp_path, capsys):
        code = run_audit(corpus / "unbiased", tmp_path / "out",
                         "--transforms", "wavelet:qux")
        assert code == 2
        capsys.readouterr()

    def test_unknown_subcommand_exits_2(self, capsys):
        assert run_command(["frobnicate"]) == 2
        capsys.readouterr()

    def test_missing_required_flag_exits_2(self, capsys):
        assert run_command(["audit", "--out", "x"]) == 2
        capsys.readouterr()

    def test_version_exits_0(self, capsys):
        assert run_command(["--version"]) == 0
        capsys.readouterr()


class TestTransformAndCropCommands:
    def test_transform_materializes_trees(self, corpus, tmp_path, capsys):
        out = tmp_path / "t"
        code = run_command(["transform", "--data", str(corpus / "unbiased"),
                            "--out", str(out),
                            "--transforms", "median:3,wavelet:haar"])
        assert code == 0
        capsys.readouterr()
        assert len(load_dataset(out / "median_3")) == 20
        assert len(load_dataset(out / "wavelet_haar")) == 20

    def test_crop_materializes_tree(self, corpus, tmp_path, capsys):
        out = tmp_path / "c"
        code = run_command(["crop", "--data", str(corpus / "unbiased"),
                            "--out", str(out), "--crop-size", "8",
                            "--corner", "br"])
        assert code == 0
        capsys.readouterr()
        ds = load_dataset(out)
        assert all(img.shape[:2] == (8, 8) for img in ds.images)


class TestTrainCommand:
    def test_writes_checkpoint_and_metrics(self, corpus, tmp_path, capsys):
        out = tmp_path / "m"
        code = run_command(["train", "--data", str(corpus / "unbiased"),
                            "--out", str(out), "--epochs", "1",
                            "--input-size", "16"])
        assert code == 0
        assert (out / "model.bin").exists()
        result = json.loads((out / "metrics.json").read_text())
        assert result["transform"] == "identity"
        assert len(result["history"]) == 1
        assert "Accuracy:" in capsys.readouterr().out


class TestReportRendering:
    def test_csv_rerender_is_byte_identical(self, corpus, tmp_path, capsys):
        out = tmp_path / "run"
        run_audit(corpus / "unbiased", out, "--transforms", "median:3")
        capsys.readouterr()
        rerender = tmp_path / "re"
        code = run_command(["report", "--report", str(out / "report.json"),
                            "--out", str(rerender)])
        assert code == 0
        capsys.readouterr()
        assert (rerender / "report.csv").read_bytes() == \
            (out / "report.csv").read_bytes()

    def test_json_text_is_stable(self):
        d = {"b": 1, "a": [1, 2]}
        assert report_json_text(d) == report_json_text(dict(reversed(
            list(d.items()))))

    def test_csv_layout(self):
        d = {
            "conditions": [{
                "name": "original", "transform": "identity", "accuracy": 1.0,
                "macro_precision": 1.0, "macro_recall": 1.0, "macro_f1": 1.0,
                "delta_pp": 0.0, "flag": "EXCLUDED_FROM_RULE"}],
            "crop_probe": {"accuracy": 0.25, "flag": "NO_INDICATION"},
        }
        lines = report_csv_text(d).splitlines()
        assert lines[0].startswith("name,transform,accuracy")
        assert lines[1].startswith("original,identity,1.0")
        assert lines[2].startswith("crop_probe,,0.25")
