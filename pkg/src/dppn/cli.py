"""Command-line experiment runner."""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .adam import AdamState, adam_step
from .config import ConfigError, RunConfig, parse_config, write_config
from .data_io import (
    load_idx_labels, load_image_dir, load_mnist_dir, save_genome, write_grid_pgm,
    write_metrics_csv, write_pgm, write_timing_csv,
)
from .engine import EvaluationError, forward
from .evolution import EvoConfig, Population, run_async, run_evolution
from .substrates import FCAutoencoder, loss_grad, loss_value
from .tasks import Task, evaluate_loss, image_recon_batch, inject_dropout_noise, load_task_images


DEFAULT_MNIST = Path(__file__).resolve().parents[2] / "data" / "mnist5k"


def mnist_dir(cfg: RunConfig) -> Path:
    return Path(cfg.mnist_dir) if cfg.mnist_dir else DEFAULT_MNIST


def _label_file(mnist_dir: Path) -> Path | None:
    for name in ("train-labels-idx1-ubyte.gz", "train-labels-idx1-ubyte"):
        if (mnist_dir / name).exists():
            return mnist_dir / name
    return None


def check_inputs(cfg: RunConfig) -> None:
    """Fail before any compute if a dataset is missing."""
    mnist = mnist_dir(cfg)
    if not mnist.is_dir():
        raise ConfigError(f"MNIST directory not found: {mnist}")
    if cfg.omniglot_dir and not Path(cfg.omniglot_dir).is_dir():
        raise ConfigError(f"Omniglot directory not found: {cfg.omniglot_dir}")


def load_data(cfg: RunConfig):
    train, test = load_mnist_dir(mnist_dir(cfg))
    return load_task_images(train), load_task_images(test)


def target_image(cfg: RunConfig, train: np.ndarray) -> np.ndarray:
    """First training image of the configured digit (first image if labels are absent)."""
    labels = _label_file(mnist_dir(cfg))
    idx = 0
    if labels is not None:
        hits = np.flatnonzero(load_idx_labels(labels) == cfg.target_digit)
        if hits.size == 0:
            raise ConfigError(f"no training image with label {cfg.target_digit}")
        idx = int(hits[0])
    return train[idx]


def build_task(cfg: RunConfig, train: np.ndarray, test: np.ndarray) -> Task:
    common = dict(loss_kind=cfg.loss_kind, learn_steps=cfg.steps, minibatch_size=cfg.minibatch,
                  fitness_eval_images=cfg.fitness_eval_images, noise_fraction=cfg.noise, lr=cfg.lr,
                  beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon, seed=cfg.seed)
    if cfg.task == "recon":
        return Task("recon", target=target_image(cfg, train), **common)
    return Task(cfg.task, train=train, test=test[:cfg.test_images], **common)


def evo_config(cfg: RunConfig) -> EvoConfig:
    return EvoConfig(
        population_size=cfg.pop, tournaments=cfg.tournaments, crossover_prob=cfg.crossover_prob,
        p_add_node=cfg.p_add_node, p_add_edge=cfg.p_add_edge, p_remove_edge=cfg.p_remove_edge,
        cauchy_coeff=cfg.cauchy, inheritance=cfg.mode, bloat_coeff=cfg.bloat,
        n_mod_prob=cfg.n_mod_prob, init_hidden=cfg.init_hidden, linear_input=cfg.linear_input,
        carry_adam=cfg.carry_adam, memoize=cfg.memoize,
    )


# -- pictures ----------------------------------------------------------------------


def render_recon(g, side: int = 28) -> np.ndarray:
    coords, _ = image_recon_batch(np.zeros((side, side)), g.n_mod)
    try:
        out, _ = forward(g, coords)
    except EvaluationError:
        return np.zeros((side, side))
    return out[:, 0].reshape(side, side)


def minmax_tiles(tiles) -> list[np.ndarray]:
    """Scale every tile to [0, 1] on its own."""
    out = []
    for t in tiles:
        t = np.asarray(t, dtype=np.float64)
        span = t.max() - t.min()
        out.append((t - t.min()) / span if span > 0 else np.zeros_like(t))
    return out


def write_substrate_pictures(task: Task, genome, out: Path) -> None:
    if task.variant == "recon":
        write_pgm(np.clip(render_recon(genome, task.image_side), 0, 1), out / "best_recon.pgm")
        write_pgm(task.target, out / "target.pgm")
        return
    coords, layout = task.layout
    out_vals, _ = forward(genome, coords)
    net = task.substrate(layout.gather(out_vals))
    clean = task.test[:10]
    noisy = inject_dropout_noise(clean, task.noise_fraction, np.random.default_rng([task.seed, 3]))
    recon, _ = net.forward(noisy)
    write_grid_pgm(list(clean) + list(noisy) + list(np.clip(recon, 0, 1)), 10, out / "denoise_examples.pgm")
    if task.variant == "fc":
        side = task.image_side
        tiles = minmax_tiles(w.reshape(side, side) for w in net.w_enc)
        write_grid_pgm(tiles, task.hidden_side, out / "encoder_weights.pgm")
    else:
        big = [np.kron(k, np.ones((4, 4))) for k in np.concatenate([net.enc_kernels, net.dec_kernels])]
        write_grid_pgm(minmax_tiles(big), task.channels, out / "kernels.pgm")


# -- runs --------------------------------------------------------------------------


def run_baseline_direct(cfg: RunConfig, train=None, test=None, hidden: int | None = None) -> dict:
    """Train a directly parameterised FC autoencoder with Adam on the denoising task."""
    if train is None:
        train, test = load_data(cfg)
    hidden = hidden or cfg.baseline_hidden or 100
    test = test[:cfg.test_images]
    rng = np.random.default_rng(cfg.seed)
    net = FCAutoencoder.random(rng, 28, hidden)
    w = net.params
    state = AdamState.zeros(w.size, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon)
    kind = cfg.loss_kind
    curve = []
    for step in range(cfg.baseline_steps):
        clean = train[rng.integers(len(train), size=cfg.minibatch)]
        noisy = inject_dropout_noise(clean, cfg.noise, rng)
        net = FCAutoencoder(w, 28, hidden)
        recon, tape = net.forward(noisy)
        curve.append(loss_value(kind, clean, recon))
        state, w = adam_step(state, w, net.backward(tape, loss_grad(kind, clean, recon)))
    net = FCAutoencoder(w, 28, hidden)
    noisy = inject_dropout_noise(test, cfg.noise, np.random.default_rng([cfg.seed, 2, 0]))
    recon, _ = net.forward(noisy)
    return {"hidden": hidden, "param_count": net.n_params, "test_loss": loss_value(kind, test, recon),
            "curve": np.array(curve), "net": net}


def _write_baseline(cfg: RunConfig, res: dict, out: Path) -> None:
    with open(out / "baseline_curve.csv", "w") as f:
        f.write("step,loss\n")
        for i, v in enumerate(res["curve"]):
            f.write(f"{i},{v!r}\n")
    with open(out / "baseline.csv", "w") as f:
        f.write("hidden,param_count,test_loss\n")
        f.write(f"{res['hidden']},{res['param_count']},{res['test_loss']!r}\n")
    net = res["net"]
    tiles = minmax_tiles(w.reshape(28, 28) for w in net.w_enc)
    write_grid_pgm(tiles, int(np.ceil(np.sqrt(len(tiles)))), out / "encoder_weights.pgm")


def run_experiment(cfg: RunConfig, log=print) -> tuple[int, dict]:
    """Run one configured experiment and write its artefacts into ``cfg.out``."""
    check_inputs(cfg)
    omniglot = load_task_images(load_image_dir(cfg.omniglot_dir)) if cfg.omniglot_dir else None
    train, test = load_data(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out / "config.txt")
    t0 = time.perf_counter()

    if cfg.baseline_hidden > 0:
        res = run_baseline_direct(cfg, train, test)
        _write_baseline(cfg, res, out)
        summary = {"final_test_loss": res["test_loss"], "param_count": res["param_count"],
                   "wall_time": time.perf_counter() - t0}
        _finish(summary, out, log)
        return 0, summary

    task = build_task(cfg, train, test)
    evo = evo_config(cfg)
    snaps = out / "snapshots"
    if task.variant == "recon" and cfg.snapshot_every > 0:
        snaps.mkdir(exist_ok=True)

    def snapshot(pop: Population) -> None:
        if task.variant == "recon" and cfg.snapshot_every > 0 and pop.tournament % cfg.snapshot_every == 0:
            imgs = [np.clip(render_recon(g), 0, 1) for g in pop.members]
            cols = int(np.ceil(np.sqrt(len(imgs))))
            write_grid_pgm(imgs, cols, snaps / f"population_{pop.tournament:05d}.pgm")

    if cfg.workers > 1:
        best, metrics = run_async(evo, task, cfg.workers, cfg.seed, snapshot)
    else:
        best, metrics = run_evolution(evo, task, cfg.seed, snapshot)

    write_metrics_csv(metrics, out / "metrics.csv")
    write_timing_csv(metrics, out / "timing.csv")
    save_genome(best.trained_genome, out / "best_genome.txt")
    write_substrate_pictures(task, best.trained_genome, out)
    summary = {"final_test_loss": metrics.final_test_loss, "param_count": best.param_count,
               "wall_time": time.perf_counter() - t0}
    if omniglot is not None and task.variant != "recon":
        summary["omniglot_loss"] = evaluate_loss(best.trained_genome, task, omniglot[:cfg.test_images])
    _finish(summary, out, log)
    return 0, summary


def _finish(summary: dict, out: Path, log) -> None:
    line = " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in summary.items())
    (out / "summary.txt").write_text(line + "\n")
    log(line)


# -- argument parsing --------------------------------------------------------------

FLAG_KEYS = {
    "task": str, "mode": str, "pop": int, "tournaments": int, "steps": int, "minibatch": int,
    "crossover_prob": float, "cauchy": float, "workers": int, "seed": int, "mnist_dir": str,
    "omniglot_dir": str, "out": str, "profile": str, "baseline_hidden": int,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dppn", description="Evolve and train pattern producing networks.")
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--task", choices=["recon", "conv", "fc"])
    p.add_argument("--mode", choices=["lamarckian", "baldwinian", "darwinian"])
    p.add_argument("--profile", choices=["demo", "paper"])
    for key, typ in FLAG_KEYS.items():
        if key in ("task", "mode", "profile"):
            continue
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=typ)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any other config key")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: getattr(args, k) for k in FLAG_KEYS}
    for item in args.set:
        if "=" not in item:
            print(f"error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return 2
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    try:
        cfg = parse_config(args.config, overrides)
        status, _ = run_experiment(cfg)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return status


if __name__ == "__main__":
    sys.exit(main())
