"""Fitness evaluation: the learning loop embedded in every fitness call.

Three task variants share the loop:

* ``recon`` - the DPPN paints one 28x28 image directly from per-pixel coordinates;
* ``conv``  - the DPPN generates the kernels of a convolutional denoising autoencoder;
* ``fc``    - the DPPN generates all weights of a fully connected denoising autoencoder.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .adam import AdamState, adam_step
from .engine import EvaluationError, Plan, compile_genome, plan_gradient, plan_outputs
from .genome import Genome
from .substrates import (
    ConvAutoencoder, FCAutoencoder, ParamLayout, conv_layout, fc_layout, grid_coords,
    loss_grad, loss_value,
)

VARIANTS = ("recon", "conv", "fc")
EVAL_CHUNK = 250


@dataclass
class FitnessReport:
    fitness: float
    loss: float
    trained_genome: Genome
    initial_genome: Genome
    learn_curve: np.ndarray
    param_count: int
    adam_state: AdamState | None = None

    @property
    def genome(self) -> Genome:
        return self.trained_genome


# -- inputs ------------------------------------------------------------------------


def image_recon_batch(image: np.ndarray, n_mod: int):
    """Per-pixel DPPN inputs ``(x, y, r, 1, x/N, y/N, (i mod N)/N, (j mod N)/N)`` and targets.

    ``x`` runs along columns and ``y`` along rows, both in [-1, 1]; the modular
    terms use integer pixel indices.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    ys, xs = np.meshgrid(grid_coords(h), grid_coords(w), indexing="ij")
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    x, y = xs.ravel(), ys.ravel()
    n = float(n_mod)
    coords = np.column_stack([
        x, y, np.hypot(x, y), np.ones_like(x), x / n, y / n,
        (cols.ravel() % n_mod) / n, (rows.ravel() % n_mod) / n,
    ])
    return coords, image.ravel().copy()


def inject_dropout_noise(x: np.ndarray, fraction: float, rng) -> np.ndarray:
    """Zero exactly ``round(fraction * pixels)`` randomly chosen pixels in each image."""
    rng = np.random.default_rng(rng)
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(len(x), -1)
    k = int(np.floor(fraction * flat.shape[1] + 0.5))
    out = flat.copy()
    if k > 0:
        idx = np.argsort(rng.random(flat.shape), axis=1)[:, :k]
        np.put_along_axis(out, idx, 0.0, axis=1)
    return out.reshape(x.shape)


# -- task --------------------------------------------------------------------------


@dataclass
class Task:
    variant: str
    loss_kind: str = "mse"
    learn_steps: int = 1000
    minibatch_size: int = 32
    fitness_eval_images: int = 1000
    noise_fraction: float = 0.1
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    target: np.ndarray | None = field(default=None, repr=False)
    train: np.ndarray | None = field(default=None, repr=False)
    test: np.ndarray | None = field(default=None, repr=False)
    image_side: int = 28
    hidden_side: int = 10
    kernel: int = 7
    stride: int = 2
    pad: int = 3
    channels: int = 2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown task variant {self.variant!r}")
        if self.loss_kind not in ("mse", "bce"):
            raise ValueError(f"unknown loss {self.loss_kind!r}")
        if self.learn_steps < 0 or self.minibatch_size < 1:
            raise ValueError("learn_steps must be >= 0 and minibatch_size >= 1")
        if self.variant == "recon":
            if self.target is None:
                raise ValueError("recon task needs a target image")
            self.target = np.asarray(self.target, dtype=np.float64)
        elif self.train is None:
            raise ValueError(f"{self.variant} task needs training images")

    # DPPN geometry ------------------------------------------------------------

    @property
    def input_dim(self) -> int:
        return {"recon": 8, "conv": 4, "fc": 8}[self.variant]

    @property
    def output_dim(self) -> int:
        return {"recon": 1, "conv": 2 * self.channels + 2, "fc": 2}[self.variant]

    def adam_state(self, n: int) -> AdamState:
        return AdamState.zeros(n, lr=self.lr, beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon)

    def recon_inputs(self, n_mod: int):
        cache = self.__dict__.setdefault("_recon_cache", {})
        if n_mod not in cache:
            cache[n_mod] = image_recon_batch(self.target, n_mod)
        return cache[n_mod]

    @cached_property
    def layout(self) -> tuple[np.ndarray, ParamLayout]:
        if self.variant == "fc":
            return fc_layout(self.image_side, self.hidden_side)
        if self.variant == "conv":
            return conv_layout(self.kernel, self.channels)
        raise AttributeError("recon task has no substrate layout")

    def substrate(self, params: np.ndarray):
        if self.variant == "fc":
            return FCAutoencoder(params, self.image_side, self.hidden_side ** 2)
        return ConvAutoencoder(params, self.image_side, self.kernel, self.stride, self.pad, self.channels)

    @cached_property
    def eval_set(self) -> tuple[np.ndarray, np.ndarray]:
        """Fixed fitness images and their fixed noisy copies."""
        rng = np.random.default_rng([self.seed, 1])
        n = min(self.fitness_eval_images, len(self.train))
        clean = self.train[np.sort(rng.choice(len(self.train), n, replace=False))]
        return clean, inject_dropout_noise(clean, self.noise_fraction, rng)

    # losses -------------------------------------------------------------------

    def step_loss_grad(self, plan: Plan, w: np.ndarray, n_mod: int, rng):
        """Minibatch loss and its gradient w.r.t. the DPPN weights."""
        if self.variant == "recon":
            coords, target = self.recon_inputs(n_mod)
            if self.minibatch_size < len(target):
                idx = rng.choice(len(target), self.minibatch_size, replace=False)
                coords, target = coords[idx], target[idx]
            pred = plan_outputs(plan, w, coords)[:, 0]
            loss = loss_value(self.loss_kind, target, pred)
            return loss, plan_gradient(plan, w, coords, loss_grad(self.loss_kind, target, pred)[:, None])

        coords, layout = self.layout
        net = self.substrate(layout.gather(plan_outputs(plan, w, coords)))
        clean = self.train[rng.integers(len(self.train), size=self.minibatch_size)]
        noisy = inject_dropout_noise(clean, self.noise_fraction, rng)
        recon, stape = net.forward(noisy)
        loss = loss_value(self.loss_kind, clean, recon)
        d_params = net.backward(stape, loss_grad(self.loss_kind, clean, recon))
        return loss, plan_gradient(plan, w, coords, layout.scatter_grad(d_params))

    def substrate_loss(self, net, clean: np.ndarray, noisy: np.ndarray) -> float:
        total = 0.0
        for a in range(0, len(clean), EVAL_CHUNK):
            recon, _ = net.forward(noisy[a:a + EVAL_CHUNK])
            total += loss_value(self.loss_kind, clean[a:a + EVAL_CHUNK], recon) * len(recon)
        return total / len(clean)

    def genome_loss(self, plan: Plan, w: np.ndarray, n_mod: int, images=None, noise_seed=None) -> float:
        if self.variant == "recon":
            coords, target = self.recon_inputs(n_mod)
            return loss_value(self.loss_kind, target, plan_outputs(plan, w, coords)[:, 0])
        coords, layout = self.layout
        net = self.substrate(layout.gather(plan_outputs(plan, w, coords)))
        if images is None:
            clean, noisy = self.eval_set
        else:
            clean = images
            noisy = inject_dropout_noise(clean, self.noise_fraction, np.random.default_rng([self.seed, 2, noise_seed or 0]))
        return self.substrate_loss(net, clean, noisy)


def load_task_images(dataset) -> np.ndarray:
    return np.asarray(dataset.images, dtype=np.float64) / 255.0


# -- fitness -----------------------------------------------------------------------


def get_fitness(d: Genome, task: Task, rng, adam_state: AdamState | None = None,
                learn_steps: int | None = None) -> FitnessReport:
    """Train ``d`` for ``learn_steps`` Adam steps, then score it.

    Fitness is the negative loss on the full target image (``recon``) or on the
    task's fixed evaluation images. Any non-finite value ends the evaluation
    with fitness ``-inf``.
    """
    if (d.input_dim, d.output_dim) != (task.input_dim, task.output_dim):
        raise ValueError(f"genome dims {(d.input_dim, d.output_dim)} do not fit task "
                         f"{(task.input_dim, task.output_dim)}")
    rng = np.random.default_rng(rng)
    steps = task.learn_steps if learn_steps is None else learn_steps
    plan = compile_genome(d)
    w = d.weights()
    state = adam_state if adam_state is not None else task.adam_state(w.size)
    curve = np.full(steps, np.nan)

    def culled():
        return FitnessReport(-np.inf, np.inf, d, d, curve, d.param_count, None)

    with np.errstate(over="ignore", invalid="ignore"):
        try:
            for i in range(steps):
                loss, grad = task.step_loss_grad(plan, w, d.n_mod, rng)
                if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                    return culled()
                curve[i] = loss
                state, w = adam_step(state, w, grad)
            loss = task.genome_loss(plan, w, d.n_mod)
        except EvaluationError:
            return culled()
    if not np.isfinite(loss):
        return culled()
    trained = d.with_weights(w) if steps else d
    return FitnessReport(-loss, loss, trained, d, curve, d.param_count, state)


def evaluate_loss(d: Genome, task: Task, images: np.ndarray | None = None, noise_seed: int = 0) -> float:
    """Loss without learning: on ``images`` (seeded noise), the eval set, or the target image."""
    plan = compile_genome(d)
    return task.genome_loss(plan, d.weights(), d.n_mod, images, noise_seed)
