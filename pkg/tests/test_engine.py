import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dppn.engine import (
    EvaluationError, activate, activate_grad, backward, backward_plan, compile_genome,
    finite_diff_gradient, forward, forward_plan, plan_gradient, plan_outputs,
)
from dppn.genome import (
    Edge, Genome, Node, NodeKind, Transfer, mutate_add_edge, mutate_add_node, new_minimal,
    validate,
)


def chain(transfer=None, weight=1.0):
    """input -> output, or input -> one hidden node -> output when ``transfer`` is given."""
    nodes = [Node(0, NodeKind.INPUT), Node(1, NodeKind.OUTPUT)]
    w = np.array([[weight]])
    if transfer is None:
        edges = [Edge(0, 1, w)]
    else:
        nodes.append(Node(2, NodeKind.HIDDEN, transfer))
        edges = [Edge(0, 2, w), Edge(2, 1, np.array([[1.0]]))]
    return validate(Genome(tuple(nodes), tuple(edges), 1, 1))


def random_genome(rng, input_dim=3, output_dim=2, grow=6, linear=False):
    g = new_minimal(input_dim, output_dim, rng, linear_input=linear)
    for _ in range(grow):
        g = mutate_add_node(g, rng)
        g = mutate_add_edge(g, rng)
    return g


# -- transfer functions ------------------------------------------------------------


def test_transfer_values():
    z = np.array([-2.0, 0.0, 1.5])
    assert np.allclose(activate("sigmoid", z), 1 / (1 + np.exp(-z)))
    assert np.allclose(activate("tanh", z), np.tanh(z))
    assert np.allclose(activate("abs", z), [2.0, 0.0, 1.5])
    assert np.allclose(activate("gaussian", z), np.exp(-z * z / 2))
    assert np.allclose(activate("identity", z), z)
    assert np.allclose(activate("sine", z), np.sin(z))
    assert np.allclose(activate("relu", z), [0.0, 0.0, 1.5])


@pytest.mark.parametrize("tag", list(Transfer))
def test_transfer_derivatives_match_differences(tag):
    z = np.array([-1.7, -0.3, 0.4, 2.2])
    h = 1e-6
    fd = (activate(tag, z + h) - activate(tag, z - h)) / (2 * h)
    assert np.allclose(activate_grad(tag, z), fd, atol=1e-6)


def test_kinks_have_zero_derivative():
    assert activate_grad("relu", np.array([0.0]))[0] == 0.0
    assert activate_grad("abs", np.array([0.0]))[0] == 0.0


def test_gaussian_is_clamped():
    assert activate("gaussian", np.array([1e200]))[0] == np.exp(-350.0)
    assert np.isfinite(activate_grad("gaussian", np.array([1e200]))[0])


# -- forward -----------------------------------------------------------------------


def test_identity_chain_forward_and_backward():
    g = chain()
    out, tape = forward(g, np.array([[3.0]]))
    assert out.tolist() == [[3.0]]
    assert backward(g, tape, np.array([[1.0]])).tolist() == [3.0]


def test_gaussian_hidden_at_zero():
    g = chain(Transfer.GAUSSIAN)
    _, tape = forward(g, np.array([[0.0]]))
    assert tape.node_activation(2)[0, 0] == 1.0


def test_relu_hidden_negative():
    g = chain(Transfer.RELU)
    _, tape = forward(g, np.array([[-2.0]]))
    assert tape.node_activation(2)[0, 0] == 0.0


def test_zero_output_gradient_gives_zero():
    rng = np.random.default_rng(0)
    g = random_genome(rng)
    out, tape = forward(g, rng.normal(size=(5, 3)))
    assert not backward(g, tape, np.zeros_like(out)).any()


def test_batch_shape_checked():
    with pytest.raises(ValueError):
        forward(chain(), np.zeros((2, 3)))


def test_non_finite_raises_naming_node():
    g = chain(Transfer.IDENTITY, weight=1e300)
    g = g.with_weights(np.array([1e300, 1e300]))
    with pytest.raises(EvaluationError, match="node"):
        forward(g, np.array([[1e300]]))


def test_tape_from_other_genome_rejected():
    a, b = chain(), chain(Transfer.SINE)
    _, tape = forward(a, np.array([[1.0]]))
    with pytest.raises(ValueError):
        backward(b, tape, np.array([[1.0]]))


def test_finite_difference_on_identity_chain():
    g = chain()
    fd = finite_diff_gradient(g, np.array([[3.0]]), lambda out: out.sum())
    assert abs(fd[0] - 3.0) < 1e-6


def test_plan_is_cached_and_survives_weight_changes():
    g = new_minimal(8, 1, 0)
    plan = compile_genome(g)
    assert compile_genome(g) is plan
    assert compile_genome(g.with_weights(g.weights() * 2)) is plan


# -- gradients ---------------------------------------------------------------------


def _rel_err(a, b):
    return np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(b)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), linear=st.booleans())
def test_backward_matches_finite_differences(seed, linear):
    rng = np.random.default_rng(seed)
    g = random_genome(rng, grow=4, linear=linear)
    x = rng.uniform(-1, 1, size=(6, 3))
    target = rng.uniform(-1, 1, size=(6, 2))

    def loss(out):
        return 0.5 * np.sum((out - target) ** 2)

    out, tape = forward(g, x)
    grad = backward(g, tape, out - target)
    fd = finite_diff_gradient(g, x, loss)
    assert _rel_err(grad, fd) < 1e-4


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), linear=st.booleans(), rows=st.integers(1, 700))
def test_fused_route_matches_reference(seed, linear, rows):
    rng = np.random.default_rng(seed)
    g = random_genome(rng, input_dim=4, output_dim=3, grow=5, linear=linear)
    plan = compile_genome(g)
    w = g.weights()
    x = rng.uniform(-1, 1, size=(rows, 4))
    d = rng.normal(size=(rows, 3))
    out, tape = forward_plan(plan, w, x)
    assert np.allclose(plan_outputs(plan, w, x), out, rtol=1e-12, atol=1e-12)
    ref = backward_plan(tape, d)
    assert _rel_err(plan_gradient(plan, w, x, d), ref) < 1e-10


def test_fused_route_flags_non_finite():
    g = chain(Transfer.IDENTITY).with_weights(np.array([1e300, 1e300]))
    with pytest.raises(EvaluationError):
        plan_outputs(compile_genome(g), g.weights(), np.array([[1e300]]))
