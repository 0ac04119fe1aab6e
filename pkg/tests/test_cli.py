import time

import numpy as np
import pytest

from dppn.cli import main, minmax_tiles, run_baseline_direct, run_experiment
from dppn.config import ConfigError, RunConfig, config_to_text, parse_config, read_config_file
from dppn.data_io import load_genome, read_metrics_csv, read_pgm


# -- configuration -----------------------------------------------------------------


def test_empty_file_gives_defaults(tmp_path):
    (tmp_path / "c.txt").write_text("")
    cfg = parse_config(tmp_path / "c.txt")
    assert cfg == parse_config(None)
    assert (cfg.task, cfg.profile, cfg.pop, cfg.tournaments, cfg.steps) == ("recon", "paper", 50, 1000, 1000)
    assert (cfg.crossover_prob, cfg.noise, cfg.cauchy) == (0.2, 0.1, 1e-4)
    assert (cfg.p_add_node, cfg.p_add_edge, cfg.p_remove_edge) == (0.3, 0.5, 0.5)
    # reconstruction trains on the whole 28x28 grid; the dataset tasks use minibatches of 32
    assert cfg.minibatch == 784
    assert parse_config(None, {"task": "fc"}) == RunConfig(task="fc")
    assert RunConfig().minibatch == 32


def test_comments_and_blank_lines(tmp_path):
    (tmp_path / "c.txt").write_text("# a run\n\ntask = conv   # denoising\npop=12\n")
    assert read_config_file(tmp_path / "c.txt") == {"task": "conv", "pop": 12}


def test_flag_overrides_file(tmp_path):
    (tmp_path / "c.txt").write_text("pop = 12\nseed = 4\n")
    cfg = parse_config(tmp_path / "c.txt", {"pop": 7, "seed": None})
    assert cfg.pop == 7 and cfg.seed == 4


def test_profile_sits_below_file(tmp_path):
    (tmp_path / "c.txt").write_text("profile = demo\ntask = recon\nsteps = 30\n")
    cfg = parse_config(tmp_path / "c.txt")
    assert cfg.pop == 8 and cfg.tournaments == 50 and cfg.steps == 30


def test_echo_reparses_identically(tmp_path):
    cfg = parse_config(None, {"task": "fc", "profile": "demo", "lr": 0.003, "linear_input": "true",
                              "out": str(tmp_path / "o")})
    (tmp_path / "echo.txt").write_text(config_to_text(cfg))
    assert parse_config(tmp_path / "echo.txt") == cfg


def test_unknown_key_is_named(tmp_path):
    (tmp_path / "c.txt").write_text("pop = 4\npopulaton_size = 9\n")
    with pytest.raises(ConfigError, match="populaton_size"):
        parse_config(tmp_path / "c.txt")


@pytest.mark.parametrize("line", ["pop = many", "task = segment", "mode = lazy", "workers = 0", "pop"])
def test_bad_values(tmp_path, line):
    (tmp_path / "c.txt").write_text(line + "\n")
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "c.txt")


def test_main_reports_unknown_key(tmp_path, capsys):
    assert main(["--set", "bogus_key=1", "--out", str(tmp_path / "o")]) == 2
    assert "bogus_key" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_missing_dataset_fails_fast(tmp_path, capsys):
    t = time.perf_counter()
    code = main(["--task", "fc", "--mnist-dir", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")])
    assert code == 2 and time.perf_counter() - t < 5
    assert "nowhere" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_missing_omniglot_fails_fast(tmp_path):
    cfg = RunConfig(task="fc", omniglot_dir=str(tmp_path / "none"), out=str(tmp_path / "o"))
    with pytest.raises(ConfigError):
        run_experiment(cfg, log=lambda s: None)


# -- runs --------------------------------------------------------------------------


def test_recon_demo(tmp_path):
    out = tmp_path / "recon"
    t = time.perf_counter()
    assert main(["--profile", "demo", "--task", "recon", "--out", str(out)]) == 0
    assert time.perf_counter() - t < 120
    snaps = sorted((out / "snapshots").glob("*.pgm"))
    assert [p.name for p in snaps] == [f"population_{k:05d}.pgm" for k in (10, 20, 30, 40, 50)]
    assert read_pgm(snaps[0]).shape == (84, 84)      # 8 members on a 3x3 grid
    assert len(read_metrics_csv(out / "metrics.csv")) == 50
    assert load_genome(out / "best_genome.txt").param_count > 0
    assert read_pgm(out / "best_recon.pgm").shape == (28, 28)
    summary = (out / "summary.txt").read_text()
    assert summary.startswith("final_test_loss=") and "param_count=" in summary and "wall_time=" in summary
    assert parse_config(out / "config.txt").tournaments == 50


def test_fc_run_emits_encoder_grid(tmp_path):
    out = tmp_path / "fc"
    cfg = parse_config(None, dict(task="fc", profile="demo", pop=2, tournaments=1, steps=2,
                                  fitness_eval_images=20, test_images=20, out=str(out)))
    code, summary = run_experiment(cfg, log=lambda s: None)
    assert code == 0 and np.isfinite(summary["final_test_loss"])
    assert read_pgm(out / "encoder_weights.pgm").shape == (280, 280)
    assert read_pgm(out / "denoise_examples.pgm").shape[1] == 280


def test_outputs_stay_in_out_dir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = parse_config(None, dict(task="recon", profile="demo", pop=3, tournaments=2, steps=3,
                                  out=str(tmp_path / "run")))
    run_experiment(cfg, log=lambda s: None)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["run"]


def test_minmax_tiles():
    tiles = minmax_tiles([np.array([[2.0, 4.0]]), np.array([[5.0, 5.0]])])
    assert tiles[0].tolist() == [[0.0, 1.0]] and tiles[1].tolist() == [[0.0, 0.0]]


def test_baseline_smoothed_curve_falls():
    cfg = RunConfig(task="fc", lr=0.003, baseline_steps=300, test_images=100)
    res = run_baseline_direct(cfg, hidden=100)
    assert res["param_count"] == 28 * 28 * 100 * 2 + 100 + 784
    smooth = res["curve"].reshape(6, 50).mean(axis=1)
    assert np.all(np.diff(smooth) < 0)
    assert np.isfinite(res["test_loss"])
