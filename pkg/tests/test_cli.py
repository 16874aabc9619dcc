"""Tests for the command-line interface."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from styleshield.cli import main
from styleshield.images import load_image, save_image, ImageTensor


def _write_images(folder: Path, rng, n: int = 3, size: int = 64) -> None:
    folder.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        img = ImageTensor(np.round(rng.uniform(size=(size, size, 3)) * 255) / 255,
                          provenance="clean")
        save_image(img, folder / f"img_{i:02d}.png")


def test_make_fixtures_then_ingestable(tmp_path):
    rc = main(["make-fixtures", "--out-dir", str(tmp_path / "ds"),
               "--images-per-artist", "3", "--size", "64"])
    assert rc == 0
    folders = [p for p in (tmp_path / "ds").iterdir() if p.is_dir()]
    assert folders
    for folder in folders:
        assert len(list(folder.glob("*.png"))) == 3


def test_analyze_layers_writes_scores_and_plot(tmp_path):
    out = tmp_path / "probe"
    rc = main(["analyze-layers", "--backbone", "toy-small",
               "--out-dir", str(out), "--sample-steps", "2", "--plot"])
    assert rc == 0
    lines = (out / "scores.csv").read_text().strip().splitlines()
    assert lines[0].startswith("layer,")
    assert len(lines) == 1 + 3  # header + one row per toy-small layer
    meta = json.loads((out / "meta.json").read_text())
    assert meta["mode"] == "activation"
    assert (out / "divergence.png").exists()


def test_protect_command_respects_budget(tmp_path, rng):
    clean_dir = tmp_path / "clean"
    _write_images(clean_dir, rng)
    out = tmp_path / "protected"
    rc = main(["protect", "--backbone", "toy-small",
               "--images", str(clean_dir), "--out-dir", str(out),
               "--budget", "0.08", "--outer-iters", "1",
               "--inner-steps", "1", "--class-examples", "2",
               "--layers", "down_blocks.0.attentions.0"])
    assert rc == 0
    outputs = sorted(out.glob("protected_*.png"))
    assert len(outputs) == 3
    cleans = sorted(clean_dir.glob("*.png"))
    for c, p in zip(cleans, outputs):
        gap = float(np.max(np.abs(load_image(p).data - load_image(c).data)))
        assert 0.0 < gap <= 0.08 + 1e-6
        sidecar = json.loads((Path(str(p) + ".json")).read_text())
        assert sidecar["budget"] == 0.08


def test_protect_command_layer_flags_validated(tmp_path, rng):
    clean_dir = tmp_path / "clean"
    _write_images(clean_dir, rng)
    with pytest.raises(SystemExit):
        main(["protect", "--images", str(clean_dir),
              "--out-dir", str(tmp_path / "o")])
    with pytest.raises(SystemExit):
        main(["protect", "--images", str(clean_dir),
              "--out-dir", str(tmp_path / "o"),
              "--preset", "top1_most_sensitive",
              "--layers", "down_blocks.0.attentions.0"])


def test_mimic_command_generates_prompt_images(tmp_path, rng):
    train_dir = tmp_path / "train"
    _write_images(train_dir, rng)
    prompts = tmp_path / "prompts.txt"
    prompts.write_text("A red boat\nA tall tower\n")
    out = tmp_path / "gen"
    rc = main(["mimic", "--backbone", "toy-small",
               "--images", str(train_dir), "--out-dir", str(out),
               "--steps", "2", "--class-examples", "2",
               "--prompts-file", str(prompts)])
    assert rc == 0
    images = sorted(out.glob("gen_*.png"))
    assert len(images) == 2
    trace = json.loads((out / "training_log.json").read_text())
    assert len(trace["loss"]) == 2


def test_evaluate_command_emits_report_rows(tmp_path, rng):
    clean_dir = tmp_path / "clean"
    _write_images(clean_dir, rng)
    rc = main(["evaluate", "--clean", str(clean_dir),
               "--protected", str(clean_dir),
               "--gen-clean", str(clean_dir),
               "--gen-protected", str(clean_dir),
               "--out", str(tmp_path / "report.json")])
    assert rc == 0
    rows = json.loads((tmp_path / "report.json").read_text())
    assert [r["arm"] for r in rows] == ["clean", "protected"]
    assert rows[0]["psnr_db"] == 100.0
    assert rows[1]["psnr_db"] == 100.0  # protected == clean here
    assert rows[0]["lpips"] == 0.0


def test_pipeline_and_robustness_and_compare_commands(tmp_path):
    ds = tmp_path / "ds"
    main(["make-fixtures", "--out-dir", str(ds),
          "--images-per-artist", "3", "--size", "64"])
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(
        "backbone: toy-small\n"
        "probe: {sample_steps: 2}\n"
        "selection: {mode: top_k_divergence, k: 1}\n"
        "protect: {budget: 0.05, outer_iters: 1, inner_finetune_steps: 1,\n"
        "          n_class_examples: 2, class_sample_steps: 2}\n"
        "mimicry: {finetune_steps: 2, n_class_examples: 2,\n"
        "          class_sample_steps: 2, generation_steps: 2}\n")
    run = tmp_path / "run"
    rc = main(["pipeline", "--dataset", str(ds), "--out-dir", str(run),
               "--config", str(cfg),
               "--stages", "probe,select,protect,mimic,evaluate"])
    assert rc == 0
    assert (run / "aggregate.csv").exists()
    assert not list(run.glob("artists/*/robustness.json"))

    rc = main(["robustness", "--dataset", str(ds), "--out-dir", str(run),
               "--config", str(cfg)])
    assert rc == 0
    assert list(run.glob("artists/*/robustness.json"))
    lines = (run / "aggregate.csv").read_text().strip().splitlines()
    artists = len(list(ds.iterdir()))
    assert len(lines) == 1 + 4 * artists

    report = tmp_path / "cmp.md"
    rc = main(["compare", str(run), "--out", str(report)])
    assert rc == 0
    assert "PSNR (dB)" in report.read_text()


def test_pipeline_flag_overrides_config(tmp_path):
    ds = tmp_path / "ds"
    main(["make-fixtures", "--out-dir", str(ds),
          "--images-per-artist", "3", "--size", "64"])
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(
        "probe: {sample_steps: 2}\n"
        "protect: {budget: 0.05, outer_iters: 1, inner_finetune_steps: 1,\n"
        "          n_class_examples: 2, class_sample_steps: 2}\n"
        "mimicry: {finetune_steps: 2, n_class_examples: 2,\n"
        "          class_sample_steps: 2, generation_steps: 2}\n")
    run = tmp_path / "run"
    rc = main(["pipeline", "--dataset", str(ds), "--out-dir", str(run),
               "--config", str(cfg), "--budget", "0.13", "--k", "1",
               "--stages", "probe,select,protect"])
    assert rc == 0
    stored = json.loads((run / "config.json").read_text())
    assert stored["protect"]["budget"] == 0.13
    assert stored["selection"]["k"] == 1


def test_unknown_subcommand_exits(capsys):
    with pytest.raises(SystemExit):
        main(["made-up-verb"])
    capsys.readouterr()
