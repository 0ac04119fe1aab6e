"""Adam on flat weight vectors."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **hyper) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, **hyper)

    def __len__(self):
        return self.m.size


def adam_step(state: AdamState, weights: np.ndarray, grads: np.ndarray):
    """One bias-corrected Adam update. Returns ``(new_state, new_weights)``."""
    weights = np.asarray(weights, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if not (weights.shape == grads.shape == state.m.shape):
        raise ValueError(f"length mismatch: state {state.m.shape}, weights {weights.shape}, grads {grads.shape}")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_w = weights - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return replace(state, m=m, v=v, t=t), new_w


def adam_resize(state: AdamState, new_len: int, index_map=None) -> AdamState:
    """Re-index moment vectors after the owning genome changed size.

    ``index_map[i]`` is the old index of new slot ``i`` or -1 for a fresh
    weight. Without a map, surviving slots keep their position (prefix).
    """
    if index_map is None:
        if new_len == len(state):
            return state
        index_map = np.arange(new_len)
        index_map[index_map >= len(state)] = -1
    index_map = np.asarray(index_map, dtype=np.int64)
    if index_map.shape != (new_len,):
        raise ValueError("index_map length must equal new_len")
    keep = index_map >= 0
    m = np.zeros(new_len)
    v = np.zeros(new_len)
    m[keep] = state.m[index_map[keep]]
    v[keep] = state.v[index_map[keep]]
    return replace(state, m=m, v=v)


def param_index_map(old_keys, new_keys) -> np.ndarray:
    """Map each new parameter key to its old index (-1 when new)."""
    where = {k: i for i, k in enumerate(old_keys)}
    return np.array([where.get(k, -1) for k in new_keys], dtype=np.int64)
