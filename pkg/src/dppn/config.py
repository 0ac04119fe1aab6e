"""Run configuration: defaults, profiles, key=value files and flag overrides."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, get_type_hints


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    task: str = "recon"
    profile: str = "paper"
    mode: str = "lamarckian"
    pop: int = 50
    tournaments: int = 1000
    steps: int = 1000
    minibatch: int = 32
    crossover_prob: float = 0.2
    p_add_node: float = 0.3
    p_add_edge: float = 0.5
    p_remove_edge: float = 0.5
    cauchy: float = 1e-4
    bloat: float = 0.0
    n_mod_prob: float = 0.1
    init_hidden: int = 0
    linear_input: bool = False
    memoize: bool = False
    carry_adam: bool = False
    noise: float = 0.1
    loss: str = "auto"            # auto: mse for recon and conv, bce for fc
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    fitness_eval_images: int = 1000
    test_images: int = 1000
    target_digit: int = 2
    workers: int = 1
    seed: int = 0
    mnist_dir: str = ""           # empty: the subset shipped in data/mnist5k
    omniglot_dir: str = ""
    out: str = "runs/latest"
    snapshot_every: int = 10
    baseline_hidden: int = 0      # > 0: train a directly encoded autoencoder instead
    baseline_steps: int = 10000

    def __post_init__(self):
        if self.task not in ("recon", "conv", "fc"):
            raise ConfigError(f"task must be recon, conv or fc, not {self.task!r}")
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}")
        if self.mode not in ("lamarckian", "baldwinian", "darwinian"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.loss not in ("auto", "mse", "bce"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def loss_kind(self) -> str:
        if self.loss != "auto":
            return self.loss
        return "bce" if self.task == "fc" else "mse"


# Profile values sit between the defaults and any file or flag value.
PROFILES: dict[str, dict[str, dict[str, Any]]] = {
    # the reconstruction batch is the whole 28x28 coordinate grid
    "paper": {"recon": dict(minibatch=784)},
    "demo": {
        "recon": dict(pop=8, tournaments=50, steps=100, lr=0.01, minibatch=784, cauchy=1e-3),
        "conv": dict(pop=8, tournaments=20, steps=100, lr=0.01, fitness_eval_images=200, test_images=200),
        "fc": dict(pop=4, tournaments=10, steps=50, lr=0.01, fitness_eval_images=200,
                   test_images=200, baseline_steps=1000),
    },
}

_TYPES = get_type_hints(RunConfig)
_FIELDS = [f.name for f in fields(RunConfig)]


def _coerce(key: str, raw: Any) -> Any:
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    typ = _TYPES[key]
    if not isinstance(raw, str):
        return typ(raw)
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        return typ(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key} ({typ.__name__})") from None


def read_config_file(path) -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        values[key] = _coerce(key, val)
    return values


def parse_config(path=None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Defaults, then the task's profile, then the file, then ``overrides``."""
    given = read_config_file(path) if path else {}
    for k, v in (overrides or {}).items():
        if v is not None:
            given[k.replace("-", "_")] = _coerce(k.replace("-", "_"), v)
    task = given.get("task", RunConfig.task)
    profile = given.get("profile", RunConfig.profile)
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    values = dict(PROFILES[profile].get(task, {}))
    values.update(given)
    return RunConfig(**values)


def config_to_text(cfg: RunConfig) -> str:
    return "".join(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n"
                   for k, v in asdict(cfg).items())


def write_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(config_to_text(cfg))
