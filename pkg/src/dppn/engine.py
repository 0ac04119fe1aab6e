"""Batched forward evaluation of a genome and reverse-mode gradients of its weights.

A genome is compiled once into a :class:`Plan`: every node gets a block of
columns in an activation matrix ``A`` of shape ``(batch, n_columns)`` and every
edge becomes a block in a dense, strictly upper block-triangular weight matrix.
Nodes are grouped into levels (longest path from the input), so each level is
evaluated with one matrix product against all columns to its left.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from .genome import INPUT_ID, OUTPUT_ID, Genome, Transfer, topo_sort
from .kernels import CODES, forward_rows, gradient_rows

GAUSS_CLAMP = 700.0


class EvaluationError(FloatingPointError):
    pass


# -- transfer functions ----------------------------------------------------------


def _gaussian(z):
    return np.exp(-0.5 * np.minimum(z * z, GAUSS_CLAMP))


def _relu(z):
    return np.maximum(z, 0.0)


# derivative functions take (pre-activation, activation)
ACTIVATIONS: dict[Transfer, tuple[Callable, Callable]] = {
    Transfer.SIGMOID: (expit, lambda z, a: a * (1.0 - a)),
    Transfer.TANH: (np.tanh, lambda z, a: 1.0 - a * a),
    Transfer.ABS: (np.abs, lambda z, a: np.sign(z)),
    Transfer.GAUSSIAN: (_gaussian, lambda z, a: np.where(z * z < GAUSS_CLAMP, -z * a, 0.0)),
    Transfer.IDENTITY: (lambda z: z, None),
    Transfer.SINE: (np.sin, lambda z, a: np.cos(z)),
    Transfer.RELU: (_relu, lambda z, a: (z > 0).astype(z.dtype)),
}


def activate(tag: Transfer, z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.array(ACTIVATIONS[Transfer(tag)][0](np.asarray(z, dtype=np.float64)))


def activate_grad(tag: Transfer, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    fn, d = ACTIVATIONS[Transfer(tag)]
    with np.errstate(over="ignore"):
        return np.ones_like(z) if d is None else d(z, fn(z))


# -- compiled plan ---------------------------------------------------------------


@dataclass
class _Level:
    start: int
    stop: int
    groups: list[tuple[Transfer, slice]]


class Plan:
    """Column layout and index maps for one genome topology."""

    def __init__(self, g: Genome):
        self.input_dim = g.input_dim
        self.output_dim = g.output_dim
        self.n_params = g.param_count
        self.order = topo_sort(g)

        preds: dict[int, list[int]] = {nid: [] for nid in self.order}
        for e in g.edges:
            preds[e.dst].append(e.src)
        level = {INPUT_ID: 0}
        for nid in self.order:
            if nid != INPUT_ID:
                level[nid] = 1 + max((level[p] for p in preds[nid]), default=0)
        tag = {n.id: n.transfer for n in g.nodes}
        pos = {nid: i for i, nid in enumerate(self.order)}
        rest = sorted((nid for nid in self.order if nid != INPUT_ID),
                      key=lambda nid: (level[nid], tag[nid].value, pos[nid]))

        self.cols: dict[int, slice] = {INPUT_ID: slice(0, g.input_dim)}
        c = g.input_dim
        for nid in rest:
            w = g.width(nid)
            self.cols[nid] = slice(c, c + w)
            c += w
        self.n_cols = c
        self.out_cols = self.cols[OUTPUT_ID]
        self.node_of_col = np.empty(c, dtype=np.int64)
        for nid, s in self.cols.items():
            self.node_of_col[s] = nid

        self.levels: list[_Level] = []
        i = 0
        while i < len(rest):
            lv = level[rest[i]]
            j = i
            while j < len(rest) and level[rest[j]] == lv:
                j += 1
            members = rest[i:j]
            start = self.cols[members[0]].start
            groups = []
            k = 0
            while k < len(members):
                t = tag[members[k]]
                m = k
                while m < len(members) and tag[members[m]] == t:
                    m += 1
                groups.append((t, slice(self.cols[members[k]].start - start,
                                        self.cols[members[m - 1]].stop - start)))
                k = m
            self.levels.append(_Level(start, self.cols[members[-1]].stop, groups))
            i = j

        rows, colidx = [], []
        for e in g.edges:
            r = np.arange(self.cols[e.src].start, self.cols[e.src].stop)
            q = np.arange(self.cols[e.dst].start, self.cols[e.dst].stop)
            rr, qq = np.meshgrid(r, q, indexing="ij")
            rows.append(rr.ravel())
            colidx.append(qq.ravel())
        self.w_rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        self.w_cols = np.concatenate(colidx) if colidx else np.zeros(0, dtype=np.int64)
        self.n_edge_params = self.w_rows.size
        self.linear = g.input_node.linear is not None
        self.transfer = tag
        self._csr = None

    def csr(self):
        """Edge list grouped by destination column, for the fused kernels."""
        if self._csr is None:
            order = np.argsort(self.w_cols, kind="stable")
            counts = np.bincount(self.w_cols, minlength=self.n_cols)
            indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
            codes = np.full(self.n_cols, CODES[Transfer.IDENTITY], dtype=np.int64)
            for nid, s in self.cols.items():
                codes[s] = CODES[self.transfer[nid]]
            self._csr = (indptr, self.w_rows[order].astype(np.int64), order.astype(np.int64), codes)
        return self._csr

    def dense(self, weights: np.ndarray):
        """Scatter a flat parameter vector into the dense matrix and linear layer."""
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} weights, got {weights.shape}")
        W = np.zeros((self.n_cols, self.n_cols))
        W[self.w_rows, self.w_cols] = weights[:self.n_edge_params]
        lin = None
        if self.linear:
            d = self.input_dim
            k = self.n_edge_params
            lin = (weights[k:k + d * d].reshape(d, d), weights[k + d * d:k + d * d + d])
        return W, lin


def compile_genome(g: Genome) -> Plan:
    plan = g._cache.get("plan")
    if plan is None:
        plan = g._cache["plan"] = Plan(g)
    return plan


# -- forward / backward ----------------------------------------------------------


@dataclass
class EvalTape:
    plan: Plan
    coords: np.ndarray      # (B, input_dim)
    pre: np.ndarray         # (B, n_cols) pre-activations (input block: post-linear values)
    act: np.ndarray         # (B, n_cols) activations
    W: np.ndarray
    linear: tuple | None

    @property
    def order(self) -> list[int]:
        return self.plan.order

    def node_activation(self, node_id: int) -> np.ndarray:
        return self.act[:, self.plan.cols[node_id]]


def forward_plan(plan: Plan, weights: np.ndarray, batch: np.ndarray, check: bool = True):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != plan.input_dim or batch.shape[0] < 1:
        raise ValueError(f"batch must have shape (B>=1, {plan.input_dim}), got {batch.shape}")
    W, lin = plan.dense(weights)
    B = batch.shape[0]
    # column-major so that each node's columns are contiguous
    A = np.empty((B, plan.n_cols), order="F")
    Z = np.empty((B, plan.n_cols), order="F")
    d = plan.input_dim
    A[:, :d] = batch if lin is None else batch @ lin[0] + lin[1]
    Z[:, :d] = A[:, :d]
    with np.errstate(over="ignore", invalid="ignore"):   # non-finite values are reported below
        for lv in plan.levels:
            z = A[:, :lv.start] @ W[:lv.start, lv.start:lv.stop]
            Z[:, lv.start:lv.stop] = z
            for tag, s in lv.groups:
                A[:, lv.start + s.start:lv.start + s.stop] = ACTIVATIONS[tag][0](z[:, s])
    out = np.ascontiguousarray(A[:, plan.out_cols])
    if check and not np.all(np.isfinite(out)):
        bad = np.flatnonzero(~np.all(np.isfinite(A), axis=0))
        node = int(plan.node_of_col[bad[0]]) if bad.size else OUTPUT_ID
        raise EvaluationError(f"non-finite activation at node {node}")
    return out, EvalTape(plan, batch, Z, A, W, lin)


def backward_plan(tape: EvalTape, d_out: np.ndarray) -> np.ndarray:
    plan = tape.plan
    A, Z, W = tape.act, tape.pre, tape.W
    d_out = np.asarray(d_out, dtype=np.float64)
    if d_out.shape != (A.shape[0], plan.output_dim):
        raise ValueError(f"output gradient has shape {d_out.shape}, expected {(A.shape[0], plan.output_dim)}")
    dA = np.zeros(A.shape, order="F")
    dA[:, plan.out_cols] = d_out
    dW = np.zeros_like(W)
    for lv in reversed(plan.levels):
        a, b = lv.start, lv.stop
        dz = np.empty((A.shape[0], b - a), order="F")
        for tag, s in lv.groups:
            cs = slice(a + s.start, a + s.stop)
            deriv = ACTIVATIONS[tag][1]
            dz[:, s] = dA[:, cs] if deriv is None else dA[:, cs] * deriv(Z[:, cs], A[:, cs])
        dW[:a, a:b] = A[:, :a].T @ dz
        dA[:, :a] += dz @ W[:a, a:b].T
    grad = [dW[plan.w_rows, plan.w_cols]]
    if tape.linear is not None:
        d_in = dA[:, :plan.input_dim]
        grad += [(tape.coords.T @ d_in).ravel(), d_in.sum(axis=0)]
    return np.concatenate(grad)


# -- fused route -------------------------------------------------------------------


def _fused_args(plan: Plan, weights: np.ndarray):
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if weights.shape != (plan.n_params,):
        raise ValueError(f"expected {plan.n_params} weights, got {weights.shape}")
    indptr, src, widx, codes = plan.csr()
    d, k = plan.input_dim, plan.n_edge_params
    if plan.linear:
        lin_w = np.ascontiguousarray(weights[k:k + d * d].reshape(d, d))
        lin_b = np.ascontiguousarray(weights[k + d * d:])
    else:
        lin_w, lin_b = np.zeros((d, d)), np.zeros(d)
    return lin_w, lin_b, plan.linear, indptr, src, widx, weights, codes


def plan_outputs(plan: Plan, weights: np.ndarray, batch: np.ndarray, check: bool = True) -> np.ndarray:
    """Outputs only, one row at a time through the compiled kernel."""
    batch = np.ascontiguousarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != plan.input_dim or batch.shape[0] < 1:
        raise ValueError(f"batch must have shape (B>=1, {plan.input_dim}), got {batch.shape}")
    out = forward_rows(batch, *_fused_args(plan, weights), plan.out_cols.start, plan.output_dim)
    if check and not np.all(np.isfinite(out)):
        forward_plan(plan, weights, batch)   # raises with the offending node
        raise EvaluationError("non-finite output")
    return out


def plan_gradient(plan: Plan, weights: np.ndarray, batch: np.ndarray, d_out: np.ndarray) -> np.ndarray:
    """Summed weight gradient for output gradient ``d_out``; same result as :func:`backward_plan`."""
    batch = np.ascontiguousarray(batch, dtype=np.float64)
    d_out = np.ascontiguousarray(d_out, dtype=np.float64)
    if d_out.shape != (batch.shape[0], plan.output_dim):
        raise ValueError(f"output gradient has shape {d_out.shape}, expected {(batch.shape[0], plan.output_dim)}")
    return gradient_rows(batch, d_out, *_fused_args(plan, weights), plan.out_cols.start, plan.n_edge_params)


def forward(g: Genome, batch: np.ndarray):
    """Evaluate ``g`` on every row of ``batch``; returns ``(outputs, tape)``."""
    return forward_plan(compile_genome(g), g.weights(), batch)


def backward(g: Genome, tape: EvalTape, d_out: np.ndarray) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. ``g.weights()``, given dLoss/dOutputs.

    Contributions of all batch rows are summed.
    """
    if tape.plan is not compile_genome(g):
        raise ValueError("tape was produced by a different genome")
    return backward_plan(tape, d_out)


def finite_diff_gradient(g: Genome, batch: np.ndarray, loss_fn, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``loss_fn(outputs)`` w.r.t. every genome weight."""
    plan = compile_genome(g)
    w = g.weights()
    grad = np.zeros_like(w)
    for i in range(w.size):
        old = w[i]
        w[i] = old + step
        hi = loss_fn(forward_plan(plan, w, batch, check=False)[0])
        w[i] = old - step
        lo = loss_fn(forward_plan(plan, w, batch, check=False)[0])
        w[i] = old
        grad[i] = (hi - lo) / (2 * step)
    return grad
