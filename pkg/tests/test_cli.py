import json
from pathlib import Path

from restoreib.cli import main
from restoreib.degrade import PairedDataset

TINY = ["--data.count", "10", "--data.size", "32", "--generator.base_channels", "4"]


def _files(root: Path) -> dict[str, bytes]:
    skip = {"timings.csv"}
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file() and p.name not in skip}


def test_synth_split_and_rerun_identical(tmp_path, capsys):
    args = ["synth", "--task", "noise", "--data.count", "10", "--data.size", "16"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    stats = json.loads(capsys.readouterr().out.split("PASS")[0])
    assert (stats["train"], stats["test"]) == (8, 2)
    assert main(["synth", "--config", str(tmp_path / "a" / "config.resolved.json"), "--out", str(tmp_path / "b")]) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    ds = PairedDataset.load(tmp_path / "a" / "dataset")
    assert len(ds.train) == 8


def test_synth_rejects_bad_spec_field(tmp_path, capsys):
    spec = tmp_path / "bad.json"
    spec.write_text(json.dumps({"kind": "rain", "drops": 3}))
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "o")]) == 2
    assert "drops" in capsys.readouterr().err


def test_unknown_option_rejected(tmp_path, capsys):
    assert main(["sweep-depth", "--depth-list", "1,2", "--out", str(tmp_path)]) == 2
    assert "depth_list" in capsys.readouterr().err


def test_train_eval_and_bitwise_rerun(tmp_path):
    common = TINY + ["--train.epochs", "2", "--train.samples_per_epoch", "3", "--train.crop_size", "24", "--model", "UNet-2"]
    assert main(["train", *common, "--out", str(tmp_path / "a"), "--seed", "4"]) == 0
    assert main(["train", "--config", str(tmp_path / "a" / "config.resolved.json"), "--out", str(tmp_path / "b")]) == 0
    a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert a == b
    assert any(k.endswith("generator.bin") for k in a) and "loss_trace.svg" in a and "report.csv" in a

    ckpt = next((tmp_path / "a" / "runs").rglob("generator.json"))
    code = main(["eval", "--net", str(ckpt), "--data.count", "10", "--data.size", "32", "--out", str(tmp_path / "e")])
    verdict = json.loads((tmp_path / "e" / "verdict.json").read_text())
    assert code == (0 if verdict["passed"] else 1)
    assert (tmp_path / "e" / "images").is_dir() and (tmp_path / "e" / "report.csv").exists()


def test_failed_check_exits_nonzero_with_verdict(tmp_path):
    args = ["reconstruct", *TINY, "--train.epochs", "1", "--train.samples_per_epoch", "2",
            "--models", "UNet-2,UNet-2+SubPix", "--target", "UNet-2+SubPix", "--out", str(tmp_path)]
    assert main(args) == 1
    verdict = json.loads((tmp_path / "verdict.json").read_text())
    assert verdict["passed"] is False
    assert {c["name"]: c["passed"] for c in verdict["checks"]}["target_min_psnr"] is False


def test_fit_loss_short_trace_exits_2(tmp_path, capsys):
    p = tmp_path / "t.csv"
    p.write_text("epoch,g_loss,d_loss,l1,adv\n1,1,0,1,0\n2,0.5,0,0.5,0\n")
    assert main(["fit-loss", "--trace", str(p)]) == 2
    assert "at least 10" in capsys.readouterr().err
