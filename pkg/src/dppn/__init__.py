"""Differentiable pattern producing networks: evolved topology, learned weights."""
from .adam import AdamState, adam_resize, adam_step, param_index_map
from .config import ConfigError, RunConfig, parse_config
from .engine import EvaluationError, backward, compile_genome, finite_diff_gradient, forward
from .evolution import (
    EvoConfig, Inheritance, Population, fitness_with_bloat, microbial_tournament,
    mutate_offspring, run_async, run_evolution,
)
from .genome import (
    CycleError, Genome, GenomeError, Transfer, crossover_merge, mutate_add_edge,
    mutate_add_node, mutate_n_mod, mutate_remove_edge, mutate_weights_cauchy,
    new_fully_connected, new_minimal, topo_sort, validate,
)
from .substrates import ConvAutoencoder, FCAutoencoder, conv_layout, fc_layout
from .tasks import FitnessReport, Task, evaluate_loss, get_fitness

__version__ = "0.1.0"
