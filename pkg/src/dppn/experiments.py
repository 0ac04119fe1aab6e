"""Scaled experiment drivers shared by scripts/ and the acceptance suite."""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import mannwhitneyu

from .cli import build_task, evo_config, load_data, run_baseline_direct
from .config import RunConfig
from .evolution import run_evolution

# Desk-scale reconstruction setup: pop 16, 300 tournaments, 200 learning steps on the
# full 28x28 grid. Cauchy noise is raised so that weight mutation matters within 300
# tournaments.
RECON_SCALED = dict(task="recon", pop=16, tournaments=300, steps=200, minibatch=784,
                    lr=1e-3, cauchy=1e-3, crossover_prob=0.0, snapshot_every=0)

# Desk-scale compression setup for the fully connected denoising autoencoder.
FC_SCALED = dict(task="fc", pop=8, tournaments=200, steps=300, minibatch=32, lr=1e-2,
                 cauchy=1e-4, crossover_prob=0.2, fitness_eval_images=1000, test_images=1000)


@dataclass
class RunOutcome:
    seed: int
    loss: float
    param_count: int
    seconds: float
    best_fitness_curve: np.ndarray


def run_once(cfg: RunConfig, data=None) -> RunOutcome:
    train, test = data if data is not None else load_data(cfg)
    task = build_task(cfg, train, test)
    t0 = time.perf_counter()
    best, metrics = run_evolution(evo_config(cfg), task, cfg.seed)
    curve = np.array([r.best_fitness for r in metrics.rows])
    return RunOutcome(cfg.seed, float(metrics.final_test_loss), best.param_count,
                      time.perf_counter() - t0, curve)


def sweep(base: RunConfig, key: str, values, seeds, log=None) -> dict:
    """Final losses for every value of ``key`` over the given seeds."""
    data = load_data(base)
    out = {}
    for v in values:
        runs = []
        for s in seeds:
            r = run_once(replace(base, **{key: v, "seed": s}), data)
            runs.append(r)
            if log:
                log(f"{key}={v} seed={s} loss={r.loss:.5f} params={r.param_count} t={r.seconds:.1f}s")
        out[v] = runs
    return out


def losses(runs) -> np.ndarray:
    return np.array([r.loss for r in runs])


def less_p(a, b) -> float:
    """One-sided Mann-Whitney U p-value for ``a`` being stochastically smaller than ``b``."""
    return float(mannwhitneyu(a, b, alternative="less").pvalue)


def inheritance_sweep(seeds=range(10), log=None, **overrides) -> dict:
    base = RunConfig(**{**RECON_SCALED, **overrides})
    return sweep(base, "mode", ("lamarckian", "baldwinian", "darwinian"), seeds, log)


def crossover_sweep(seeds=range(10), log=None, **overrides) -> dict:
    base = RunConfig(**{**RECON_SCALED, "mode": "lamarckian", **overrides})
    return sweep(base, "crossover_prob", (0.2, 0.0), seeds, log)


def compression_run(seed: int = 0, log=None, **overrides) -> dict:
    """Evolve an fc DPPN, then train a direct autoencoder with the same parameter budget."""
    cfg = RunConfig(**{**FC_SCALED, "seed": seed, **overrides})
    data = load_data(cfg)
    dppn = run_once(cfg, data)
    if log:
        log(f"dppn test BCE={dppn.loss:.4f} params={dppn.param_count} t={dppn.seconds:.0f}s")
    # the smallest direct net (one hidden unit) already has far more parameters than the DPPN
    direct = run_baseline_direct(cfg, *data, hidden=1)
    if log:
        log(f"direct test BCE={direct['test_loss']:.4f} params={direct['param_count']}")
    return {"dppn": dppn, "direct": direct}
