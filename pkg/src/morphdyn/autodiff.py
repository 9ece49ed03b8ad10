"""Reverse-mode automatic differentiation over dense float32 tensors.

A ComputationTape records batched array primitives (matmul, bias add,
activations, reductions, gathers) as they execute; backward() replays the
record in reverse, accumulating gradients additively at fan-out points.
Parameters and activations are float32; explicit reductions accumulate in
float64 before casting back. Everything is plain single-threaded numpy, so
fixed seeds give bit-identical runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")


class AutodiffError(ValueError):
    pass


def _f32(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float32)
    return a


class Parameter:
    """A named, persistent float32 array optimized across steps."""

    __slots__ = ("name", "data")

    def __init__(self, name: str, data):
        self.name = name
        self.data = _f32(data)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


class Node:
    """One value in the recorded computation. Gradient filled by backward()."""

    __slots__ = ("data", "grad", "parents", "backprop", "needs_grad", "param")

    def __init__(self, data, parents=(), backprop=None, needs_grad=False, param=None):
        self.data = data
        self.grad = None
        self.parents = parents
        self.backprop = backprop
        self.needs_grad = needs_grad
        self.param = param

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = g.astype(np.float32, copy=True)
        else:
            self.grad += g


class Tape:
    """Ordered record of primitives; backward walks it in exact reverse order.

    Ops are methods so that every primitive is recorded at the moment it
    runs. A Parameter wrapped twice on the same tape returns the same node,
    so fan-out gradients accumulate in one place.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._param_nodes: dict[int, Node] = {}

    # -- leaves ------------------------------------------------------------

    def leaf(self, data, trainable: bool = False) -> Node:
        node = Node(_f32(data), needs_grad=trainable)
        self.nodes.append(node)
        return node

    def param(self, p: Parameter) -> Node:
        node = self._param_nodes.get(id(p))
        if node is None:
            node = Node(p.data, needs_grad=True, param=p)
            self._param_nodes[id(p)] = node
            self.nodes.append(node)
        return node

    def constant(self, data) -> Node:
        return self.leaf(data, trainable=False)

    def _record(self, data, parents, backprop) -> Node:
        needs = any(p.needs_grad for p in parents)
        node = Node(data, parents=parents, backprop=backprop if needs else None,
                    needs_grad=needs)
        self.nodes.append(node)
        return node

    # -- primitives ----------------------------------------------------------

    def matmul(self, a: Node, b: Node) -> Node:
        if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
            raise AutodiffError(
                f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
        out = a.data @ b.data

        def backprop(g):
            if a.needs_grad:
                a._accumulate(g @ b.data.T)
            if b.needs_grad:
                b._accumulate(a.data.T @ g)

        return self._record(out, (a, b), backprop)

    def add_bias(self, x: Node, b: Node) -> Node:
        if b.data.ndim != 1 or x.data.shape[-1] != b.data.shape[0]:
            raise AutodiffError(
                f"bias shape mismatch: {x.data.shape} + {b.data.shape}")
        out = x.data + b.data

        def backprop(g):
            if x.needs_grad:
                x._accumulate(g)
            if b.needs_grad:
                # reduction over the batch: accumulate in float64
                b._accumulate(g.sum(axis=0, dtype=np.float64).astype(np.float32))

        return self._record(out, (x, b), backprop)

    def add(self, a: Node, b: Node) -> Node:
        if a.data.shape != b.data.shape:
            raise AutodiffError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
        out = a.data + b.data

        def backprop(g):
            if a.needs_grad:
                a._accumulate(g)
            if b.needs_grad:
                b._accumulate(g)

        return self._record(out, (a, b), backprop)

    def sub(self, a: Node, b: Node) -> Node:
        if a.data.shape != b.data.shape:
            raise AutodiffError(f"sub shape mismatch: {a.data.shape} vs {b.data.shape}")
        out = a.data - b.data

        def backprop(g):
            if a.needs_grad:
                a._accumulate(g)
            if b.needs_grad:
                b._accumulate(-g)

        return self._record(out, (a, b), backprop)

    def mul(self, a: Node, b: Node) -> Node:
        if a.data.shape != b.data.shape:
            raise AutodiffError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
        out = a.data * b.data

        def backprop(g):
            if a.needs_grad:
                a._accumulate(g * b.data)
            if b.needs_grad:
                b._accumulate(g * a.data)

        return self._record(out, (a, b), backprop)

    def scale(self, x: Node, c: float) -> Node:
        c32 = np.float32(c)
        out = x.data * c32

        def backprop(g):
            x._accumulate(g * c32)

        return self._record(out, (x,), backprop)

    def relu(self, x: Node) -> Node:
        out = np.maximum(x.data, np.float32(0.0))

        def backprop(g):
            x._accumulate(np.where(out > 0, g, np.float32(0.0)))

        return self._record(out, (x,), backprop)

    def tanh(self, x: Node) -> Node:
        out = np.tanh(x.data)

        def backprop(g):
            x._accumulate(g * (np.float32(1.0) - out * out))

        return self._record(out, (x,), backprop)

    def clamp(self, x: Node, delta: float) -> Node:
        if delta <= 0:
            raise AutodiffError(f"clamp needs delta > 0, got {delta}")
        d32 = np.float32(delta)
        out = np.clip(x.data, -d32, d32)

        def backprop(g):
            # gradient exactly 1 inside the band, exactly 0 outside
            x._accumulate(np.where(np.abs(x.data) <= d32, g, np.float32(0.0)))

        return self._record(out, (x,), backprop)

    def abs(self, x: Node) -> Node:
        out = np.abs(x.data)

        def backprop(g):
            x._accumulate(g * np.sign(x.data))

        return self._record(out, (x,), backprop)

    def square(self, x: Node) -> Node:
        out = x.data * x.data

        def backprop(g):
            x._accumulate(g * (np.float32(2.0) * x.data))

        return self._record(out, (x,), backprop)

    def sum(self, x: Node) -> Node:
        out = np.float32(x.data.sum(dtype=np.float64))

        def backprop(g):
            x._accumulate(np.full_like(x.data, np.float32(g)))

        return self._record(np.asarray(out), (x,), backprop)

    def mean(self, x: Node) -> Node:
        n = x.data.size
        out = np.float32(x.data.sum(dtype=np.float64) / n)

        def backprop(g):
            x._accumulate(np.full_like(x.data, np.float32(g / np.float32(n))))

        return self._record(np.asarray(out), (x,), backprop)

    def concat_cols(self, a: Node, b: Node) -> Node:
        if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[0] != b.data.shape[0]:
            raise AutodiffError(
                f"concat_cols shape mismatch: {a.data.shape} vs {b.data.shape}")
        out = np.concatenate([a.data, b.data], axis=1)
        na = a.data.shape[1]

        def backprop(g):
            if a.needs_grad:
                a._accumulate(g[:, :na])
            if b.needs_grad:
                b._accumulate(g[:, na:])

        return self._record(out, (a, b), backprop)

    def gather_rows(self, x: Node, index) -> Node:
        """Select rows x[index]; backward scatter-adds into the source rows."""
        idx = np.asarray(index, dtype=np.int64)
        out = x.data[idx]

        def backprop(g):
            if x.needs_grad:
                acc = np.zeros_like(x.data)
                np.add.at(acc, idx, g)
                x._accumulate(acc)

        return self._record(out, (x,), backprop)

    # -- driver --------------------------------------------------------------

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        """Backpropagate from a scalar loss; returns grads for named parameters."""
        if loss not in self.nodes:
            raise AutodiffError("backward before forward: loss was not produced on this tape")
        if loss.data.ndim != 0:
            raise AutodiffError(f"loss must be a scalar node, got shape {loss.data.shape}")
        loss.grad = np.ones((), dtype=np.float32)
        seen = False
        for node in reversed(self.nodes):
            if node is loss:
                seen = True
            if not seen:
                continue
            if node.backprop is not None and node.grad is not None:
                node.backprop(node.grad)
        return {n.param.name: n.grad for n in self._param_nodes.values()
                if n.grad is not None}

    def grad_of(self, p: Parameter):
        node = self._param_nodes.get(id(p))
        return None if node is None else node.grad


def clamp(x, delta: float):
    """min(delta, max(-delta, x)) on plain scalars/arrays (no tape)."""
    if delta <= 0:
        raise AutodiffError(f"clamp needs delta > 0, got {delta}")
    return np.clip(x, -delta, delta)


# -- MLP layers ---------------------------------------------------------------

@dataclass
class Layer:
    weight: Parameter      # (fan_in, fan_out)
    bias: Parameter        # (fan_out,)
    activation: str = "relu"


def init_layer(name: str, fan_in: int, fan_out: int, activation: str,
               rng: np.random.Generator) -> Layer:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero bias."""
    if activation not in ACTIVATIONS:
        raise AutodiffError(f"unknown activation {activation!r}; expected {ACTIVATIONS}")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    w = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(np.float32)
    b = np.zeros(fan_out, dtype=np.float32)
    return Layer(Parameter(f"{name}.W", w), Parameter(f"{name}.b", b), activation)


def mlp_forward(tape: Tape, layers, x: Node) -> Node:
    """Compose affine + activation layers on the tape."""
    h = x
    for i, layer in enumerate(layers):
        if layer.activation not in ACTIVATIONS:
            raise AutodiffError(
                f"layer {i}: unknown activation {layer.activation!r}")
        if h.data.shape[-1] != layer.weight.data.shape[0]:
            raise AutodiffError(
                f"layer {i}: input width {h.data.shape} does not match "
                f"weight {layer.weight.data.shape}")
        h = tape.add_bias(tape.matmul(h, tape.param(layer.weight)),
                          tape.param(layer.bias))
        if layer.activation == "relu":
            h = tape.relu(h)
        elif layer.activation == "tanh":
            h = tape.tanh(h)
    return h


def mlp_infer(layers, x: np.ndarray) -> np.ndarray:
    """Tape-free forward pass over the same layers (inference/eval path)."""
    h = np.asarray(x, dtype=np.float32)
    for i, layer in enumerate(layers):
        if h.shape[-1] != layer.weight.data.shape[0]:
            raise AutodiffError(
                f"layer {i}: input width {h.shape} does not match "
                f"weight {layer.weight.data.shape}")
        h = h @ layer.weight.data + layer.bias.data
        if layer.activation == "relu":
            np.maximum(h, np.float32(0.0), out=h)
        elif layer.activation == "tanh":
            np.tanh(h, out=h)
    return h


# -- Adam ----------------------------------------------------------------------

@dataclass
class AdamState:
    """Standard Adam with bias correction; one shared step counter."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, Parameter],
              grads: dict[str, np.ndarray], lr: float | None = None) -> None:
    """One Adam update on every parameter that has a gradient, in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise AutodiffError(f"non-finite gradient for tensor {name!r}; step rejected")
        if params[name].data.shape != g.shape:
            raise AutodiffError(
                f"gradient shape {g.shape} does not match parameter "
                f"{name!r} shape {params[name].data.shape}")
    state.step += 1
    t = state.step
    lr_t = np.float32(state.lr if lr is None else lr)
    b1, b2 = np.float32(state.beta1), np.float32(state.beta2)
    eps = np.float32(state.eps)
    corr1 = np.float32(1.0 - state.beta1 ** t)
    corr2 = np.float32(1.0 - state.beta2 ** t)
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(p.data)
        m *= b1
        m += (np.float32(1.0) - b1) * g
        v *= b2
        v += (np.float32(1.0) - b2) * (g * g)
        p.data -= lr_t * (m / corr1) / (np.sqrt(v / corr2) + eps)


@dataclass
class RowwiseAdamState:
    """Adam over the rows of one embedding table.

    Rows absent from a step are untouched: their parameters, moments and
    per-row step counters all stay bit-identical.
    """

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = None
    v: np.ndarray = None
    steps: np.ndarray = None

    @classmethod
    def for_table(cls, table: np.ndarray, lr: float) -> "RowwiseAdamState":
        return cls(lr=lr, m=np.zeros_like(table), v=np.zeros_like(table),
                   steps=np.zeros(table.shape[0], dtype=np.int64))


def rowwise_adam_step(state: RowwiseAdamState, table: np.ndarray,
                      rows: np.ndarray, row_grads: np.ndarray,
                      lr: float | None = None) -> None:
    if not np.all(np.isfinite(row_grads)):
        raise AutodiffError("non-finite gradient for tensor 'latent_table'; step rejected")
    rows = np.asarray(rows, dtype=np.int64)
    lr_t = np.float32(state.lr if lr is None else lr)
    b1, b2 = np.float32(state.beta1), np.float32(state.beta2)
    eps = np.float32(state.eps)
    state.steps[rows] += 1
    t = state.steps[rows].astype(np.float64)
    m = state.m[rows] * b1 + (np.float32(1.0) - b1) * row_grads
    v = state.v[rows] * b2 + (np.float32(1.0) - b2) * (row_grads * row_grads)
    state.m[rows] = m
    state.v[rows] = v
    corr1 = (1.0 - state.beta1 ** t)[:, None].astype(np.float32)
    corr2 = (1.0 - state.beta2 ** t)[:, None].astype(np.float32)
    table[rows] -= lr_t * (m / corr1) / (np.sqrt(v / corr2) + eps)
