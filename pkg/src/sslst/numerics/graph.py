"""Declarative computation graphs evaluated with the eager kernels.

Models build their tape on the fly; this module gives the same kernels a
static, inspectable form with node-level error reporting.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import ops
from .tensor import Tensor, backward


class GraphError(ValueError):
    def __init__(self, node_id: int, message: str):
        super().__init__(f"node {node_id}: {message}")
        self.node_id = node_id


class ShapeError(GraphError):
    pass


class NonFiniteError(GraphError):
    pass


def _ints(t: Tensor) -> np.ndarray:
    return np.asarray(t.data).astype(np.int64)


KERNELS: dict[str, Callable] = {
    "affine": ops.affine,
    "conv1d": ops.conv1d,
    "conv2d": ops.conv2d,
    "tanh": ops.tanh,
    "sigmoid": ops.sigmoid,
    "relu": ops.relu,
    "softmax": ops.softmax,
    "log_softmax": ops.log_softmax,
    "add": ops.add,
    "mul": ops.mul,
    "concat": lambda *xs, axis=-1: ops.concat(xs, axis=axis),
    "lstm_cell": ops.lstm_cell,
    "layer_norm": ops.layer_norm,
    "embedding": lambda ids, table: ops.embedding(_ints(ids), table),
    "cross_entropy": lambda logits, targets: ops.cross_entropy(logits, _ints(targets)),
    "sum": ops.sum,
    "mean": ops.mean,
}


@dataclass(frozen=True)
class Node:
    id: int
    kind: str
    inputs: tuple[int, ...]
    attrs: dict = field(default_factory=dict)
    name: str | None = None


class Graph:
    """Nodes in topological order: a node may only consume earlier nodes."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[int, Tensor] = {}

    def _append(self, kind, inputs, attrs, name) -> int:
        node_id = len(self.nodes)
        for i in inputs:
            if not 0 <= i < node_id:
                raise GraphError(node_id, f"input {i} does not precede this node")
        self.nodes.append(Node(node_id, kind, tuple(inputs), dict(attrs), name))
        return node_id

    def input(self, name: str) -> int:
        return self._append("input", (), {}, name)

    def param(self, name: str, value) -> int:
        tensor = value if isinstance(value, Tensor) else Tensor(value, requires_grad=True)
        tensor.requires_grad = True
        node_id = self._append("param", (), {}, name)
        self.params[node_id] = tensor
        return node_id

    def add(self, kind: str, *inputs: int, name: str | None = None, **attrs) -> int:
        if kind not in KERNELS:
            raise GraphError(len(self.nodes), f"unknown node kind {kind!r}")
        return self._append(kind, inputs, attrs, name)

    def node_id(self, key) -> int:
        if isinstance(key, int):
            return key
        for node in self.nodes:
            if node.name == key:
                return node.id
        raise KeyError(key)


def _evaluate(graph: Graph, inputs: Mapping[str, object]) -> list[Tensor]:
    values: list[Tensor] = []
    for node in graph.nodes:
        if node.kind == "input":
            if node.name not in inputs:
                raise GraphError(node.id, f"input {node.name!r} is not bound")
            v = inputs[node.name]
            values.append(v if isinstance(v, Tensor) else Tensor(v))
            continue
        if node.kind == "param":
            values.append(graph.params[node.id])
            continue
        args = [values[i] for i in node.inputs]
        try:
            out = KERNELS[node.kind](*args, **node.attrs)
        except (ValueError, IndexError) as exc:
            shapes = ", ".join(str(a.shape) for a in args)
            raise ShapeError(node.id, f"{node.kind} rejected inputs of shape {shapes}: {exc}") from exc
        if out.data.dtype.kind == "f" and not np.all(np.isfinite(out.data)):
            raise NonFiniteError(node.id, f"{node.kind} produced non-finite values")
        values.append(out)
    return values


def forward(graph: Graph, inputs: Mapping[str, object], outputs=None) -> dict:
    """Evaluate ``graph``; returns the requested outputs (default: the last node) by key."""
    values = _evaluate(graph, inputs)
    keys = [len(graph.nodes) - 1] if outputs is None else list(outputs)
    return {k: values[graph.node_id(k)] for k in keys}


def gradients(graph: Graph, inputs: Mapping[str, object], loss_node) -> dict[str, np.ndarray]:
    """d(loss)/d(param) for every parameter node, keyed by parameter name."""
    values = _evaluate(graph, inputs)
    loss_id = graph.node_id(loss_node)
    loss = values[loss_id]
    if loss.data.size != 1:
        raise GraphError(loss_id, f"loss must be scalar, got shape {loss.shape}")
    grads = backward(loss, graph.params.values())
    return {graph.nodes[i].name: grads.get(id(t), np.zeros_like(t.data)) for i, t in graph.params.items()}
