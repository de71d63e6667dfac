import json
from pathlib import Path

import numpy as np
import pytest

from rotvol.cli import build_parser, main


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    """Run the dataset + training pipeline once through the CLI entry point."""
    out = tmp_path_factory.mktemp("cli")
    data = out / "data"
    run = out / "run"
    assert main(["dataset", "synth", "--n", "2", "--style", "room", "--seed", "3",
                 "--width", "256", "--out", str(data)]) == 0
    assert main(["dataset", "crops", "--out", str(data), "--views-per-pano", "4",
                 "--pitch", "indoor", "--size", "64", "--seed", "5"]) == 0
    assert main(["dataset", "pairs", "--out", str(data), "--mode", "same",
                 "--quota", "8", "--seed", "7"]) == 0
    assert main(["train", "--out", str(run), "--manifest",
                 str(data / "manifest_train.jsonl"), "--preset", "desk",
                 "--set", "model_preset=gradcheck", "--set", "train.total_iters=4",
                 "--set", "train.decay_start=2", "--set", "train.batch_size=2",
                 "--set", "train.checkpoint_every=2", "--seed", "1"]) == 0
    return data, run


class TestDatasetCommands:
    def test_synth_outputs(self, cli_workspace):
        data, _ = cli_workspace
        assert (data / "panos.json").exists()
        assert len(list((data / "panos").glob("*.png"))) == 2

    def test_synth_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["dataset", "synth", "--n", "1", "--style", "street",
                         "--seed", "11", "--width", "256", "--out", str(out)]) == 0
        pa = next((a / "panos").glob("*.png")).read_bytes()
        pb = next((b / "panos").glob("*.png")).read_bytes()
        assert pa == pb

    def test_pairs_manifest_lines(self, cli_workspace):
        data, _ = cli_workspace
        lines = (data / "manifest_train.jsonl").read_text().strip().splitlines()
        assert len(lines) == 1 + 8
        record = json.loads(lines[1])
        assert set(record) == {"crop1_ref", "crop2_ref", "cam1", "cam2", "gt",
                               "overlap", "pano1_id", "pano2_id", "translation_m"}

    def test_lint_passes(self, cli_workspace, capsys):
        data, _ = cli_workspace
        assert main(["dataset", "lint", "--out", str(data)]) == 0
        assert "lint ok" in capsys.readouterr().out

    def test_translated_pairs_respect_threshold(self, tmp_path):
        data = tmp_path / "tdata"
        assert main(["dataset", "synth", "--n", "3", "--style", "street", "--seed", "2",
                     "--width", "256", "--shared-world", "--out", str(data)]) == 0
        assert main(["dataset", "crops", "--out", str(data), "--views-per-pano", "3",
                     "--pitch", "outdoor", "--size", "64", "--seed", "4"]) == 0
        assert main(["dataset", "pairs", "--out", str(data), "--mode", "translated",
                     "--max-dist", "3", "--quota", "6", "--seed", "6"]) == 0
        lines = (data / "manifest_train.jsonl").read_text().strip().splitlines()
        for line in lines[1:]:
            rec = json.loads(line)
            assert 0.0 < rec["translation_m"] < 3.0

    def test_files_manifest_written(self, cli_workspace):
        data, _ = cli_workspace
        index = json.loads((data / "files.json").read_text())
        assert "dataset.synth" in index and "dataset.pairs" in index


class TestTrainEvalCommands:
    def test_train_outputs(self, cli_workspace):
        _, run = cli_workspace
        assert (run / "final.pt").exists()
        assert (run / "trainlog.csv").exists()
        assert (run / "ckpt_0000002.pt").exists()

    def test_eval_writes_report(self, cli_workspace, tmp_path):
        data, run = cli_workspace
        out = tmp_path / "eval"
        assert main(["eval", "--checkpoint", str(run / "final.pt"),
                     "--manifest", str(data / "manifest_train.jsonl"),
                     "--top2", "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert set(report["classes"]) == {"Large", "Small", "None", "All"}
        assert "top2_classes" in report
        assert (out / "pairs.csv").exists()

    def test_eval_identity_probe(self, cli_workspace, tmp_path):
        data, run = cli_workspace
        out = tmp_path / "probe"
        assert main(["eval", "--checkpoint", str(run / "final.pt"),
                     "--manifest", str(data / "manifest_train.jsonl"),
                     "--probe", "identity", "--probe-images", "3",
                     "--out", str(out)]) == 0
        payload = json.loads((out / "identity_probe.json").read_text())
        assert len(payload["errors_deg"]) == 3

    def test_eval_roll_probe(self, cli_workspace, tmp_path):
        data, run = cli_workspace
        out = tmp_path / "roll"
        assert main(["eval", "--checkpoint", str(run / "final.pt"),
                     "--manifest", str(data / "manifest_train.jsonl"),
                     "--probe", "roll", "--max-roll", "5", "--out", str(out)]) == 0
        assert (out / "roll_probe.json").exists()

    def test_eval_missing_checkpoint_is_runtime_error(self, cli_workspace, tmp_path):
        data, _ = cli_workspace
        code = main(["eval", "--checkpoint", str(tmp_path / "missing.pt"),
                     "--manifest", str(data / "manifest_train.jsonl"),
                     "--out", str(tmp_path / "x")])
        assert code == 1

    def test_bad_config_override_exits_2(self, cli_workspace, tmp_path):
        data, _ = cli_workspace
        code = main(["train", "--out", str(tmp_path / "r"),
                     "--manifest", str(data / "manifest_train.jsonl"),
                     "--set", "train.not_a_field=1"])
        assert code == 2


class TestBaselineOccludePlot:
    def test_baseline_twopoint(self, cli_workspace, tmp_path):
        data, _ = cli_workspace
        out = tmp_path / "bl"
        assert main(["baseline", "--manifest", str(data / "manifest_train.jsonl"),
                     "--mode", "twopoint", "--ransac-iters", "100",
                     "--out", str(out)]) == 0
        report = json.loads((out / "baseline_twopoint.json").read_text())
        assert "success_count" in report["classes"]["All"]

    def test_occlude(self, cli_workspace, tmp_path):
        data, run = cli_workspace
        out = tmp_path / "occ"
        assert main(["occlude", "--checkpoint", str(run / "final.pt"),
                     "--manifest", str(data / "manifest_train.jsonl"),
                     "--pair-index", "0", "--window", "16", "--stride", "16",
                     "--out", str(out)]) == 0
        assert (out / "occlusion_pair0.png").exists()
        grid = (out / "occlusion_pair0_img1.csv").read_text().strip().splitlines()
        assert len(grid) == 2  # (32 - 16) / 16 + 1

    def test_plot(self, cli_workspace, tmp_path):
        data, run = cli_workspace
        eval_out = tmp_path / "e"
        assert main(["eval", "--checkpoint", str(run / "final.pt"),
                     "--manifest", str(data / "manifest_train.jsonl"),
                     "--out", str(eval_out)]) == 0
        plot_out = tmp_path / "p"
        assert main(["plot", "--pairs", str(eval_out / "pairs.csv"),
                     "--manifest", str(data / "manifest_train.jsonl"),
                     "--overlays", "2", "--trainlog", str(run / "trainlog.csv"),
                     "--out", str(plot_out)]) == 0
        for name in ("hist.csv", "cdf.csv", "hist.png", "cdf.png", "loss.png"):
            assert (plot_out / name).exists(), name
        assert list(plot_out.glob("overlay_*.png"))


def test_help_exits_zero_for_every_subcommand():
    parser = build_parser()
    commands = [[], ["dataset"], ["dataset", "synth"], ["dataset", "crops"],
                ["dataset", "pairs"], ["dataset", "lint"], ["train"], ["eval"],
                ["baseline"], ["occlude"], ["plot"]]
    for cmd in commands:
        with pytest.raises(SystemExit) as exc:
            parser.parse_args(cmd + ["--help"])
        assert exc.value.code == 0
