import json

import numpy as np
import pytest
import torch

from videdit import scenes
from videdit.cli import main as cli_main
from videdit.config import Config
from videdit.evaluation import edit_target_description, evaluate, load_networks
from videdit.train import build_networks, train
from videdit.tranet import manipulate_clip


@pytest.fixture(scope="module")
def setup(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    scenes.generate_dataset(seed=9, n_train=4, n_test=3, resolution=32, out_dir=root)
    cfg = Config.from_dict({
        "data": {"root": str(root), "resolution": 32, "n_train": 4, "n_test": 3},
        "repnet": {"feature_dim": 32, "hidden_split": 16, "gru_hidden": 16,
                   "ode_hidden": 8, "encoder_channels": [8, 8, 16, 16, 16]},
        "mfmod": {"blocks": 2, "width": 32},
        "gan": {"scales": 2, "disc_channels": [8, 16, 32, 32]},
        "train": {"epochs": 1, "batch_size": 2},
        "seed": 1,
    })
    torch.manual_seed(cfg.seed)
    nets = build_networks(cfg)
    return root, cfg, nets


def test_edit_target_changes_color_only():
    rng = np.random.default_rng(0)
    f = scenes.FactorSpec(1, 2, 3, 4, 2)
    for _ in range(20):
        text = edit_target_description(f, rng)
        size, color, shape = scenes.parse_description(text)
        assert shape == scenes.SHAPE_WORDS[f.shape]
        assert size == f.size_group
        assert color != scenes.COLOR_WORDS[f.object_color]


def test_manipulate_clip_contract(setup):
    root, cfg, nets = setup
    rec = [r for r in scenes.load_manifest(root) if r["split"] == "test"][0]
    clip = scenes.load_clip(root, rec)
    out = manipulate_clip(clip, "There is a big red cube.", nets["repnet"],
                          nets["tranet"], text_encoder=__import__(
                              "videdit.textenc", fromlist=["TemplateTextEncoder"]
                          ).TemplateTextEncoder())
    assert out.shape == (15, 3, 32, 32)
    assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0


def test_evaluate_report_structure(setup, tmp_path):
    root, cfg, nets = setup
    report = evaluate(cfg, root, nets, n_samples=3, seed=5, out_dir=tmp_path)
    for key in ("mig", "aam", "mp", "frechet_frame", "frechet_video", "is",
                "config_hash", "seed", "n_samples"):
        assert key in report
    assert report["n_samples"] == 3
    assert report["seed"] == 5
    assert report["config_hash"] == cfg.config_hash()
    assert np.isfinite(report["frechet_frame"])
    assert report["is"] >= 1.0
    assert (tmp_path / "metrics.json").exists()
    assert (tmp_path / "codes.csv").exists()
    saved = json.loads((tmp_path / "metrics.json").read_text())
    assert saved["mig"] == pytest.approx(report["mig"])


def test_evaluate_deterministic(setup):
    root, cfg, nets = setup
    a = evaluate(cfg, root, nets, n_samples=2, seed=7)
    b = evaluate(cfg, root, nets, n_samples=2, seed=7)
    assert a == b


def test_cli_full_cycle(tmp_path):
    data = tmp_path / "data"
    run = tmp_path / "run"
    assert cli_main(["gen-data", "--out", str(data), "--seed", "3",
                     "--n-train", "4", "--n-test", "2", "--resolution", "32"]) == 0

    cfg_path = tmp_path / "cfg.yaml"
    cfg = Config.from_dict({
        "data": {"root": str(data), "resolution": 32, "n_train": 4, "n_test": 2},
        "repnet": {"feature_dim": 32, "hidden_split": 16, "gru_hidden": 16,
                   "ode_hidden": 8, "encoder_channels": [8, 8, 16, 16, 16]},
        "mfmod": {"blocks": 2, "width": 32},
        "gan": {"scales": 2, "disc_channels": [8, 16, 32, 32]},
        "train": {"epochs": 1, "batch_size": 2},
        "seed": 3,
    })
    cfg.save(cfg_path)
    assert cli_main(["train", "--config", str(cfg_path), "--data", str(data),
                     "--out", str(run), "--max-steps", "1"]) == 0
    ckpt = run / "ckpt_1.pt"
    assert ckpt.exists()

    clip_id = scenes.load_manifest(data)[0]["clip_id"]
    edit_dir = tmp_path / "edit"
    assert cli_main(["edit", "--checkpoint", str(ckpt), "--data", str(data),
                     "--clip", clip_id, "--text", "There is a big red cube.",
                     "--out", str(edit_dir)]) == 0
    assert len(list(edit_dir.glob("edited_*.png"))) == 15

    assert cli_main(["traverse", "--checkpoint", str(ckpt), "--data", str(data),
                     "--clip", clip_id, "--dims", "0,1", "--values=-1,0,1",
                     "--out", str(tmp_path / "grid.png")]) == 0
    assert (tmp_path / "grid.png").exists()

    assert cli_main(["trajectory", "--checkpoint", str(ckpt), "--data", str(data),
                     "--clip", clip_id, "--points", "15",
                     "--out-csv", str(tmp_path / "traj.csv"),
                     "--out-png", str(tmp_path / "traj.png")]) == 0
    assert (tmp_path / "traj.csv").exists()

    eval_dir = tmp_path / "eval"
    assert cli_main(["eval", "--checkpoint", str(ckpt), "--data", str(data),
                     "--n-samples", "2", "--out", str(eval_dir)]) == 0
    report = json.loads((eval_dir / "metrics.json").read_text())
    assert "mig" in report

    # missing clip id: validation error
    assert cli_main(["edit", "--checkpoint", str(ckpt), "--data", str(data),
                     "--clip", "nope", "--text", "t", "--out", str(edit_dir)]) == 2
