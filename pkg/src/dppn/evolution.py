"""Microbial GA with binary tournaments, serial and asynchronous.

Each tournament trains and scores two members; a mutated copy (optionally a
merge of winner and loser) of the winner overwrites the loser. The
inheritance mode decides which weights the copy starts from.
"""
from __future__ import annotations

import time
from concurrent.futures import FIRST_COMPLETED, Future, ProcessPoolExecutor, wait
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .adam import AdamState, adam_resize, param_index_map
from .data_io import MetricsRow, RunMetrics
from .genome import (
    Genome, crossover_merge, mutate_add_edge, mutate_add_node, mutate_n_mod,
    mutate_remove_edge, mutate_weights_cauchy, new_fully_connected, new_minimal,
)
from .tasks import FitnessReport, Task, evaluate_loss, get_fitness


class Inheritance(str, Enum):
    LAMARCKIAN = "lamarckian"
    BALDWINIAN = "baldwinian"
    DARWINIAN = "darwinian"


@dataclass
class EvoConfig:
    population_size: int = 50
    tournaments: int = 1000
    crossover_prob: float = 0.2
    p_add_node: float = 0.3
    p_add_edge: float = 0.5
    p_remove_edge: float = 0.5
    cauchy_coeff: float = 1e-4
    inheritance: Inheritance = Inheritance.LAMARCKIAN
    bloat_coeff: float = 0.0
    n_mod_prob: float = 0.1
    init_hidden: int = 0          # 0: minimal 4-node genomes; n: fully connected with n hidden units
    linear_input: bool = False
    carry_adam: bool = False
    memoize: bool = False

    def __post_init__(self):
        self.inheritance = Inheritance(self.inheritance)
        for name in ("crossover_prob", "p_add_node", "p_add_edge", "p_remove_edge", "n_mod_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} is not a probability")
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.tournaments < 0 or self.cauchy_coeff < 0 or self.bloat_coeff < 0:
            raise ValueError("tournaments, cauchy_coeff and bloat_coeff must be non-negative")


@dataclass
class Population:
    members: list[Genome]
    rng: np.random.Generator
    seed: int = 0
    tournament: int = 0
    evals: int = 0
    versions: list[int] = field(default_factory=list)
    adam: list[AdamState | None] = field(default_factory=list)
    memo: list[FitnessReport | None] = field(default_factory=list)
    best: FitnessReport | None = None
    last: "TournamentResult | None" = None

    def __post_init__(self):
        n = len(self.members)
        self.versions = self.versions or [0] * n
        self.adam = self.adam or [None] * n
        self.memo = self.memo or [None] * n

    def __len__(self):
        return len(self.members)


@dataclass
class TournamentResult:
    winner: int
    loser: int
    winner_report: FitnessReport
    loser_report: FitnessReport
    crossover: bool


def init_population(cfg: EvoConfig, task: Task, seed: int) -> Population:
    rng = np.random.default_rng(seed)
    members = []
    for _ in range(cfg.population_size):
        if cfg.init_hidden > 0:
            g = new_fully_connected(task.input_dim, task.output_dim, cfg.init_hidden, rng, cfg.linear_input)
        else:
            g = new_minimal(task.input_dim, task.output_dim, rng, cfg.linear_input)
        members.append(g)
    return Population(members, rng, seed)


def eval_rng(seed: int, k: int) -> np.random.Generator:
    """Independent stream for the k-th fitness evaluation of a run."""
    return np.random.default_rng([seed, 7919, k])


def _learn_steps(cfg: EvoConfig, task: Task) -> int:
    return 0 if cfg.inheritance is Inheritance.DARWINIAN else task.learn_steps


def _heritable(cfg: EvoConfig, report: FitnessReport) -> Genome:
    return report.trained_genome if cfg.inheritance is Inheritance.LAMARCKIAN else report.initial_genome


def fitness_with_bloat(report: FitnessReport, bloat_coeff: float) -> float:
    g = report.trained_genome
    return report.fitness - bloat_coeff * (len(g.nodes) + len(g.edges))


def mutate_offspring(g: Genome, cfg: EvoConfig, rng) -> Genome:
    """Independent coin flips for each topology operator, then weight and N mutation."""
    if rng.random() < cfg.p_add_node:
        g = mutate_add_node(g, rng)
    if rng.random() < cfg.p_add_edge:
        g = mutate_add_edge(g, rng)
    if rng.random() < cfg.p_remove_edge:
        g = mutate_remove_edge(g, rng)
    g = mutate_weights_cauchy(g, cfg.cauchy_coeff, rng)
    return mutate_n_mod(g, rng, cfg.n_mod_prob)


def _better(a: FitnessReport | None, b: FitnessReport) -> FitnessReport:
    return b if a is None or b.fitness > a.fitness else a


def evaluate_member(pop: Population, i: int, cfg: EvoConfig, task: Task) -> FitnessReport:
    if cfg.memoize and pop.memo[i] is not None:
        return pop.memo[i]
    k = pop.evals
    pop.evals += 1
    adam = pop.adam[i] if cfg.carry_adam else None
    report = get_fitness(pop.members[i], task, eval_rng(pop.seed, k), adam, _learn_steps(cfg, task))
    pop.best = _better(pop.best, report)
    return report


def apply_tournament(pop: Population, cfg: EvoConfig, i: int, rep_i: FitnessReport,
                     j: int, rep_j: FitnessReport) -> TournamentResult:
    """Pick the winner (ties go to ``i``) and overwrite the loser with its offspring."""
    rng = pop.rng
    if fitness_with_bloat(rep_i, cfg.bloat_coeff) >= fitness_with_bloat(rep_j, cfg.bloat_coeff):
        win, lose, rw, rl = i, j, rep_i, rep_j
    else:
        win, lose, rw, rl = j, i, rep_j, rep_i
    parent_a = _heritable(cfg, rw)
    if cfg.inheritance is Inheritance.LAMARCKIAN and pop.members[win] is not parent_a:
        pop.members[win] = parent_a
        pop.versions[win] += 1
    if cfg.carry_adam:
        pop.adam[win] = rw.adam_state
    pop.memo[win] = rw if cfg.memoize else None

    crossed = bool(rng.random() < cfg.crossover_prob)
    child = crossover_merge(parent_a, _heritable(cfg, rl), rng) if crossed else parent_a
    child = mutate_offspring(child, cfg, rng)
    pop.members[lose] = child
    pop.versions[lose] += 1
    pop.memo[lose] = None
    if cfg.carry_adam and rw.adam_state is not None:
        imap = param_index_map(parent_a.param_keys(), child.param_keys())
        pop.adam[lose] = adam_resize(rw.adam_state, child.param_count, imap)
    else:
        pop.adam[lose] = None
    pop.tournament += 1
    pop.last = TournamentResult(win, lose, rw, rl, crossed)
    return pop.last


def microbial_tournament(pop: Population, cfg: EvoConfig, task: Task, rng=None) -> Population:
    """One serial tournament: two distinct members, both trained, loser overwritten."""
    if len(pop) < 2:
        raise ValueError("population must hold at least two members")
    rng = pop.rng if rng is None else rng
    i, j = (int(k) for k in rng.choice(len(pop), 2, replace=False))
    rep_i = evaluate_member(pop, i, cfg, task)
    rep_j = evaluate_member(pop, j, cfg, task)
    apply_tournament(pop, cfg, i, rep_i, j, rep_j)
    return pop


def _metrics_row(pop: Population, res: TournamentResult, t0: float) -> MetricsRow:
    return MetricsRow(
        tournament=pop.tournament,
        best_fitness=float(pop.best.fitness),
        winner_fitness=float(res.winner_report.fitness),
        loser_fitness=float(res.loser_report.fitness),
        best_param_count=pop.best.param_count,
        winner=res.winner,
        loser=res.loser,
        crossover=int(res.crossover),
        wall_time=time.perf_counter() - t0,
    )


def final_test_loss(best: FitnessReport, task: Task) -> float:
    """Loss of the best genome on the task's test criterion."""
    if task.variant == "recon" or task.test is None:
        return float(best.loss)
    return evaluate_loss(best.trained_genome, task, task.test)


def run_evolution(cfg: EvoConfig, task: Task, seed: int = 0,
                  callback: Callable[[Population], None] | None = None):
    """Serial microbial GA. Returns ``(best_report, metrics)``."""
    pop = init_population(cfg, task, seed)
    metrics = RunMetrics(seed=seed)
    t0 = time.perf_counter()
    if cfg.tournaments == 0:
        for i in range(len(pop)):
            evaluate_member(pop, i, cfg, task)
    for _ in range(cfg.tournaments):
        microbial_tournament(pop, cfg, task)
        metrics.append(_metrics_row(pop, pop.last, t0))
        if callback is not None:
            callback(pop)
    metrics.final_test_loss = final_test_loss(pop.best, task)
    return pop.best, metrics


# -- asynchronous variant ------------------------------------------------------------

_WORKER_TASK: Task | None = None


def _init_worker(task: Task) -> None:
    global _WORKER_TASK
    _WORKER_TASK = task


def _work(genome: Genome, adam, steps: int, seed: int, k: int) -> FitnessReport:
    return get_fitness(genome, _WORKER_TASK, eval_rng(seed, k), adam, steps)


class _InlineExecutor:
    """Runs each job at submission; the degenerate single-worker pool."""

    def __init__(self, task):
        _init_worker(task)

    def submit(self, fn, *args):
        fut = Future()
        fut.set_result(fn(*args))
        return fut

    def shutdown(self, wait=True, cancel_futures=False):
        pass


def run_async(cfg: EvoConfig, task: Task, n_workers: int = 1, seed: int = 0,
              callback: Callable[[Population], None] | None = None):
    """Asynchronous binary tournaments over a pool of finished evaluations.

    Workers keep evaluating randomly drawn members. Finished evaluations wait
    in a pool; as soon as two different members are in it, a random pair
    fights a tournament. Results for members that were overwritten while
    being evaluated are dropped.
    """
    if n_workers < 1:
        raise ValueError("n_workers must be >= 1")
    pop = init_population(cfg, task, seed)
    metrics = RunMetrics(seed=seed)
    steps = _learn_steps(cfg, task)
    rng = pop.rng
    t0 = time.perf_counter()
    if n_workers == 1:
        ex = _InlineExecutor(task)
    else:
        ex = ProcessPoolExecutor(n_workers, initializer=_init_worker, initargs=(task,))
    pending: dict[Future, tuple[int, int, int]] = {}
    ready: dict[int, FitnessReport] = {}

    def submit():
        slot = int(rng.integers(len(pop)))
        k = pop.evals
        pop.evals += 1
        adam = pop.adam[slot] if cfg.carry_adam else None
        fut = ex.submit(_work, pop.members[slot], adam, steps, pop.seed, k)
        pending[fut] = (slot, pop.versions[slot], k)

    try:
        budget = cfg.tournaments if cfg.tournaments > 0 else 0
        if budget == 0:
            for i in range(len(pop)):
                evaluate_member(pop, i, cfg, task)
        while pop.tournament < budget:
            while len(pending) < n_workers:
                submit()
            done, _ = wait(list(pending), return_when=FIRST_COMPLETED)
            for fut in sorted(done, key=lambda f: pending[f][2]):
                slot, version, _k = pending.pop(fut)
                if version != pop.versions[slot]:
                    continue
                report = fut.result()
                pop.best = _better(pop.best, report)
                ready[slot] = report
            while len(ready) >= 2 and pop.tournament < budget:
                i, j = (int(s) for s in rng.choice(sorted(ready), 2, replace=False))
                res = apply_tournament(pop, cfg, i, ready.pop(i), j, ready.pop(j))
                metrics.append(_metrics_row(pop, res, t0))
                if callback is not None:
                    callback(pop)
    finally:
        ex.shutdown(wait=False, cancel_futures=True)
    metrics.final_test_loss = final_test_loss(pop.best, task)
    return pop.best, metrics
