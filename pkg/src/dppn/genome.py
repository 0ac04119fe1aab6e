"""DPPN genotype: a feedforward DAG of typed nodes and weighted edges.

The graph has a single vector-valued input node (width ``input_dim``), a single
vector-valued output node (width ``output_dim``) and any number of scalar hidden
nodes. An edge ``u -> v`` carries a weight block of shape ``(width(u), width(v))``,
so an edge between two hidden nodes holds exactly one scalar weight.

Genomes are treated as immutable values. Every operator returns a new genome.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

INPUT_ID = 0
OUTPUT_ID = 1

N_MOD_MIN, N_MOD_MAX = 2, 28


class Transfer(str, Enum):
    SIGMOID = "sigmoid"
    TANH = "tanh"
    ABS = "abs"
    GAUSSIAN = "gaussian"
    IDENTITY = "identity"
    SINE = "sine"
    RELU = "relu"


TRANSFERS = tuple(Transfer)


class NodeKind(str, Enum):
    INPUT = "input"
    HIDDEN = "hidden"
    OUTPUT = "output"


class GenomeError(ValueError):
    """Raised when a genome violates a structural invariant."""


class CycleError(GenomeError):
    def __init__(self, edges):
        self.edges = sorted(edges)
        super().__init__(f"cycle detected among edges {self.edges}")


@dataclass(frozen=True)
class LinearLayer:
    """Square affine map applied by the input node: ``a = c @ weight + bias``."""

    weight: np.ndarray
    bias: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, LinearLayer):
            return NotImplemented
        return _bits_equal(self.weight, other.weight) and _bits_equal(self.bias, other.bias)


@dataclass(frozen=True)
class Node:
    id: int
    kind: NodeKind
    transfer: Transfer = Transfer.IDENTITY
    linear: LinearLayer | None = None


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    weight: np.ndarray  # shape (width(src), width(dst))

    def __eq__(self, other):
        if not isinstance(other, Edge):
            return NotImplemented
        return (self.src, self.dst) == (other.src, other.dst) and _bits_equal(self.weight, other.weight)


def _bits_equal(a: np.ndarray, b: np.ndarray) -> bool:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return a.shape == b.shape and a.tobytes() == b.tobytes()


@dataclass(frozen=True, eq=False)
class Genome:
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    input_dim: int
    output_dim: int
    n_mod: int = N_MOD_MAX
    seed: int = 0
    _cache: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_cache", {})

    def __eq__(self, other):
        if not isinstance(other, Genome):
            return NotImplemented
        return (
            self.input_dim == other.input_dim
            and self.output_dim == other.output_dim
            and self.n_mod == other.n_mod
            and self.seed == other.seed
            and self.nodes == other.nodes
            and self.edges == other.edges
        )

    __hash__ = object.__hash__

    # -- structure -----------------------------------------------------------

    def node(self, node_id: int) -> Node:
        return self._index()[node_id]

    def _index(self) -> dict[int, Node]:
        if "index" not in self._cache:
            self._cache["index"] = {n.id: n for n in self.nodes}
        return self._cache["index"]

    @property
    def input_node(self) -> Node:
        return self.node(INPUT_ID)

    @property
    def hidden_ids(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind is NodeKind.HIDDEN]

    @property
    def n_hidden(self) -> int:
        return len(self.hidden_ids)

    def width(self, node_id: int) -> int:
        kind = self.node(node_id).kind
        if kind is NodeKind.INPUT:
            return self.input_dim
        if kind is NodeKind.OUTPUT:
            return self.output_dim
        return 1

    def next_id(self) -> int:
        return max(n.id for n in self.nodes) + 1

    def edge_pairs(self) -> set[tuple[int, int]]:
        return {(e.src, e.dst) for e in self.edges}

    # -- parameters ----------------------------------------------------------

    @property
    def param_count(self) -> int:
        return param_count(self)

    def weights(self) -> np.ndarray:
        """Flat parameter vector in canonical order: edge blocks, then linear layer."""
        parts = [e.weight.ravel() for e in self.edges]
        lin = self.input_node.linear
        if lin is not None:
            parts += [lin.weight.ravel(), lin.bias.ravel()]
        if not parts:
            return np.zeros(0)
        return np.concatenate(parts).astype(np.float64, copy=True)

    def with_weights(self, vec: np.ndarray) -> "Genome":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.param_count,):
            raise GenomeError(f"expected {self.param_count} weights, got shape {vec.shape}")
        pos = 0
        edges = []
        for e in self.edges:
            k = e.weight.size
            edges.append(Edge(e.src, e.dst, vec[pos:pos + k].reshape(e.weight.shape).copy()))
            pos += k
        nodes = list(self.nodes)
        lin = self.input_node.linear
        if lin is not None:
            d = self.input_dim
            w = vec[pos:pos + d * d].reshape(d, d).copy()
            b = vec[pos + d * d:pos + d * d + d].copy()
            nodes = [replace(n, linear=LinearLayer(w, b)) if n.id == INPUT_ID else n for n in nodes]
        out = replace(self, nodes=tuple(nodes), edges=tuple(edges))
        if "plan" in self._cache:
            out._cache["plan"] = self._cache["plan"]  # topology is unchanged
        return out

    def param_keys(self) -> list[tuple]:
        """Stable identity of every parameter slot, used to carry optimizer state across edits."""
        keys: list[tuple] = []
        for e in self.edges:
            r, c = e.weight.shape
            keys += [("edge", e.src, e.dst, i, j) for i in range(r) for j in range(c)]
        if self.input_node.linear is not None:
            d = self.input_dim
            keys += [("lin_w", i, j) for i in range(d) for j in range(d)]
            keys += [("lin_b", i) for i in range(d)]
        return keys


def param_count(g: Genome) -> int:
    n = sum(e.weight.size for e in g.edges)
    lin = g.input_node.linear
    if lin is not None:
        n += lin.weight.size + lin.bias.size
    return n


# -- construction --------------------------------------------------------------


def _rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _seed_of(rng) -> int:
    return int(rng) if isinstance(rng, (int, np.integer)) else 0


def init_weights(rng: np.random.Generator, shape) -> np.ndarray:
    """The single weight distribution shared by construction and every operator."""
    return rng.uniform(-1.0, 1.0, size=shape)


def _random_transfer(rng: np.random.Generator) -> Transfer:
    return TRANSFERS[rng.integers(len(TRANSFERS))]


def _io_nodes(input_dim, rng, linear_input) -> list[Node]:
    linear = None
    if linear_input:
        linear = LinearLayer(init_weights(rng, (input_dim, input_dim)), init_weights(rng, (input_dim,)))
    return [
        Node(INPUT_ID, NodeKind.INPUT, Transfer.IDENTITY, linear),
        Node(OUTPUT_ID, NodeKind.OUTPUT, Transfer.IDENTITY),
    ]


def new_minimal(input_dim: int, output_dim: int, rng=None, linear_input: bool = False) -> Genome:
    """Input node, two random hidden units, output node; each hidden unit bridges input to output."""
    if input_dim < 1 or output_dim < 1:
        raise GenomeError("dimensions must be >= 1")
    seed = _seed_of(rng)
    rng = _rng(rng)
    nodes = _io_nodes(input_dim, rng, linear_input)
    edges = []
    for hid in (2, 3):
        nodes.append(Node(hid, NodeKind.HIDDEN, _random_transfer(rng)))
        edges.append(Edge(INPUT_ID, hid, init_weights(rng, (input_dim, 1))))
        edges.append(Edge(hid, OUTPUT_ID, init_weights(rng, (1, output_dim))))
    return validate(Genome(tuple(nodes), tuple(edges), input_dim, output_dim, N_MOD_MAX, seed))


def new_fully_connected(input_dim: int, output_dim: int, n_hidden: int, rng=None,
                        linear_input: bool = False) -> Genome:
    """Every ordered pair along ``input, h_1, ..., h_n, output`` is connected."""
    if n_hidden < 1:
        raise GenomeError("n_hidden must be >= 1")
    seed = _seed_of(rng)
    rng = _rng(rng)
    nodes = _io_nodes(input_dim, rng, linear_input)
    hidden = list(range(2, 2 + n_hidden))
    nodes += [Node(h, NodeKind.HIDDEN, _random_transfer(rng)) for h in hidden]
    order = [INPUT_ID] + hidden + [OUTPUT_ID]
    widths = {INPUT_ID: input_dim, OUTPUT_ID: output_dim}
    edges = []
    for i, u in enumerate(order):
        for v in order[i + 1:]:
            edges.append(Edge(u, v, init_weights(rng, (widths.get(u, 1), widths.get(v, 1)))))
    return validate(Genome(tuple(nodes), tuple(edges), input_dim, output_dim, N_MOD_MAX, seed))


# -- ordering and validation ---------------------------------------------------


def topo_sort(g: Genome) -> list[int]:
    """Kahn's algorithm with ties broken by ascending node id."""
    ids = [n.id for n in g.nodes]
    indeg = {i: 0 for i in ids}
    succ: dict[int, list[int]] = {i: [] for i in ids}
    for e in g.edges:
        succ[e.src].append(e.dst)
        indeg[e.dst] += 1
    heap = [i for i in ids if indeg[i] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        u = heapq.heappop(heap)
        order.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(heap, v)
    if len(order) != len(ids):
        done = set(order)
        raise CycleError((e.src, e.dst) for e in g.edges if e.src not in done and e.dst not in done)
    return order


def connection_matrix(g: Genome, order: Sequence[int] | None = None) -> np.ndarray:
    """Binary adjacency matrix with rows/columns in topological order."""
    order = topo_sort(g) if order is None else order
    pos = {nid: i for i, nid in enumerate(order)}
    m = np.zeros((len(order), len(order)), dtype=np.int8)
    for e in g.edges:
        m[pos[e.src], pos[e.dst]] = 1
    return m


def is_upper_triangular(m: np.ndarray) -> bool:
    return not np.any(np.tril(m))


def _reachable(start: int, adj: dict[int, list[int]]) -> set[int]:
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in adj.get(u, ()):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def validate(g: Genome) -> Genome:
    """Check structural invariants and prune orphaned hidden nodes.

    Returns the (possibly pruned) genome with nodes and edges re-ordered
    topologically. Raises :class:`GenomeError` on any violation.
    """
    if g.input_dim < 1 or g.output_dim < 1:
        raise GenomeError("dimensions must be >= 1")
    if not N_MOD_MIN <= g.n_mod <= N_MOD_MAX:
        raise GenomeError(f"n_mod {g.n_mod} outside [{N_MOD_MIN}, {N_MOD_MAX}]")
    ids = [n.id for n in g.nodes]
    if len(set(ids)) != len(ids):
        raise GenomeError("duplicate node ids")
    index = {n.id: n for n in g.nodes}
    if index.get(INPUT_ID, Node(-1, NodeKind.HIDDEN)).kind is not NodeKind.INPUT:
        raise GenomeError("node 0 must be the input node")
    if index.get(OUTPUT_ID, Node(-1, NodeKind.HIDDEN)).kind is not NodeKind.OUTPUT:
        raise GenomeError("node 1 must be the output node")
    for n in g.nodes:
        if n.id not in (INPUT_ID, OUTPUT_ID) and n.kind is not NodeKind.HIDDEN:
            raise GenomeError(f"node {n.id}: only one input and one output node allowed")
        if not isinstance(n.transfer, Transfer):
            raise GenomeError(f"node {n.id}: unknown transfer {n.transfer!r}")
        if n.linear is not None:
            if n.kind is not NodeKind.INPUT:
                raise GenomeError(f"node {n.id}: only the input node may carry a linear layer")
            d = g.input_dim
            if n.linear.weight.shape != (d, d) or n.linear.bias.shape != (d,):
                raise GenomeError("linear layer must be square with matching bias")
    if index[INPUT_ID].transfer is not Transfer.IDENTITY:
        raise GenomeError("input node transfer must be identity")

    pairs = set()
    for e in g.edges:
        if e.src not in index or e.dst not in index:
            raise GenomeError(f"edge ({e.src}, {e.dst}) references a missing node")
        if e.src == e.dst:
            raise GenomeError(f"self-loop on node {e.src}")
        if (e.src, e.dst) in pairs:
            raise GenomeError(f"duplicate edge ({e.src}, {e.dst})")
        pairs.add((e.src, e.dst))
        if e.dst == INPUT_ID or e.src == OUTPUT_ID:
            raise GenomeError(f"edge ({e.src}, {e.dst}) enters the input or leaves the output")
        if e.weight.shape != (g.width(e.src), g.width(e.dst)):
            raise GenomeError(f"edge ({e.src}, {e.dst}) has weight shape {e.weight.shape}")

    order = topo_sort(g)

    fwd: dict[int, list[int]] = {}
    bwd: dict[int, list[int]] = {}
    for e in g.edges:
        fwd.setdefault(e.src, []).append(e.dst)
        bwd.setdefault(e.dst, []).append(e.src)
    keep = _reachable(INPUT_ID, fwd) & _reachable(OUTPUT_ID, bwd) | {INPUT_ID, OUTPUT_ID}
    if len(keep) < len(index):
        # pruning can change the id tie-break order, so sort the pruned graph afresh
        return validate(replace(g, nodes=tuple(n for n in g.nodes if n.id in keep),
                                edges=tuple(e for e in g.edges if e.src in keep and e.dst in keep)))

    pos = {nid: i for i, nid in enumerate(order)}
    nodes = tuple(sorted((index[i] for i in keep), key=lambda n: pos[n.id]))
    edges = tuple(sorted((e for e in g.edges if e.src in keep and e.dst in keep),
                         key=lambda e: (pos[e.src], pos[e.dst])))
    if nodes == g.nodes and edges == g.edges:
        return g
    return replace(g, nodes=nodes, edges=edges)


def has_io_path(g: Genome) -> bool:
    fwd: dict[int, list[int]] = {}
    for e in g.edges:
        fwd.setdefault(e.src, []).append(e.dst)
    return OUTPUT_ID in _reachable(INPUT_ID, fwd)


# -- variation operators ---------------------------------------------------------


def _ancestors(g: Genome) -> dict[int, set[int]]:
    order = topo_sort(g)
    preds: dict[int, list[int]] = {n.id: [] for n in g.nodes}
    for e in g.edges:
        preds[e.dst].append(e.src)
    anc: dict[int, set[int]] = {}
    for v in order:
        s: set[int] = set()
        for u in preds[v]:
            s.add(u)
            s |= anc[u]
        anc[v] = s
    return anc


def _rebuild(g: Genome, nodes: Iterable[Node], edges: Iterable[Edge], **changes) -> Genome:
    return validate(replace(g, nodes=tuple(nodes), edges=tuple(edges), **changes))


def mutate_add_node(g: Genome, rng) -> Genome:
    """Insert a new hidden node between a random upstream and a legal downstream node."""
    rng = _rng(rng)
    anc = _ancestors(g)
    upstream = [n.id for n in g.nodes if n.kind is not NodeKind.OUTPUT]
    u = upstream[rng.integers(len(upstream))]
    downstream = [n.id for n in g.nodes
                  if n.kind is not NodeKind.INPUT and n.id != u and n.id not in anc[u]]
    if not downstream:
        return g
    v = downstream[rng.integers(len(downstream))]
    h = g.next_id()
    node = Node(h, NodeKind.HIDDEN, _random_transfer(rng))
    new_edges = [
        Edge(u, h, init_weights(rng, (g.width(u), 1))),
        Edge(h, v, init_weights(rng, (1, g.width(v)))),
    ]
    return _rebuild(g, g.nodes + (node,), g.edges + tuple(new_edges))


def free_edge_pairs(g: Genome) -> list[tuple[int, int]]:
    """Unconnected ordered pairs whose addition keeps the graph acyclic."""
    anc = _ancestors(g)
    existing = g.edge_pairs()
    out = []
    for a in g.nodes:
        if a.kind is NodeKind.OUTPUT:
            continue
        for b in g.nodes:
            if b.kind is NodeKind.INPUT or a.id == b.id or (a.id, b.id) in existing:
                continue
            if b.id in anc[a.id]:
                continue
            out.append((a.id, b.id))
    return out


def mutate_add_edge(g: Genome, rng) -> Genome:
    rng = _rng(rng)
    free = free_edge_pairs(g)
    if not free:
        return g
    u, v = free[rng.integers(len(free))]
    edge = Edge(u, v, init_weights(rng, (g.width(u), g.width(v))))
    return _rebuild(g, g.nodes, g.edges + (edge,))


def mutate_remove_edge(g: Genome, rng) -> Genome:
    """Drop one uniformly chosen edge, then prune orphans.

    A removal that would leave no edges, or no input-to-output path, is
    refused and ``g`` is returned unchanged.
    """
    rng = _rng(rng)
    if len(g.edges) <= 1:
        return g
    k = rng.integers(len(g.edges))
    edges = g.edges[:k] + g.edges[k + 1:]
    cand = replace(g, edges=edges)
    if not has_io_path(cand):
        return g
    return validate(cand)


def mutate_weights_cauchy(g: Genome, coefficient: float, rng) -> Genome:
    if coefficient == 0:
        return g
    rng = _rng(rng)
    w = g.weights()
    return g.with_weights(w + coefficient * rng.standard_cauchy(w.shape))


def mutate_n_mod(g: Genome, rng, prob: float = 0.1) -> Genome:
    rng = _rng(rng)
    if rng.random() >= prob:
        return g
    step = 1 if rng.random() < 0.5 else -1
    n = int(np.clip(g.n_mod + step, N_MOD_MIN, N_MOD_MAX))
    return replace(g, n_mod=n) if n != g.n_mod else g


def crossover_merge(parent_a: Genome, parent_b: Genome, rng) -> Genome:
    """Merge B's hidden units into A.

    B's input and output nodes are dropped together with their edges. A's input
    feeds every hidden unit of B and every hidden unit of B feeds A's output,
    all through freshly drawn weights.
    """
    if (parent_a.input_dim, parent_a.output_dim) != (parent_b.input_dim, parent_b.output_dim):
        raise GenomeError("crossover parents have different input/output dimensions")
    rng = _rng(rng)
    base = parent_a.next_id()
    b_hidden = parent_b.hidden_ids
    remap = {old: base + i for i, old in enumerate(b_hidden)}
    nodes = list(parent_a.nodes)
    nodes += [replace(parent_b.node(old), id=new) for old, new in remap.items()]
    edges = list(parent_a.edges)
    edges += [Edge(remap[e.src], remap[e.dst], e.weight.copy())
              for e in parent_b.edges if e.src in remap and e.dst in remap]
    for new in remap.values():
        edges.append(Edge(INPUT_ID, new, init_weights(rng, (parent_a.input_dim, 1))))
        edges.append(Edge(new, OUTPUT_ID, init_weights(rng, (1, parent_a.output_dim))))
    child = _rebuild(parent_a, nodes, edges)
    if not is_upper_triangular(connection_matrix(child, [n.id for n in child.nodes])):
        raise GenomeError("crossover produced a non-feedforward connection matrix")
    return child
