"""Topological ordering, reverse sweep and a named-input graph wrapper."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import ShapeError, Tensor


def topo_order(output: Tensor) -> list[Tensor]:
    """Nodes reachable from ``output``, every node after all of its inputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(output: Tensor, seed: np.ndarray | None = None) -> dict[int, np.ndarray]:
    """Reverse sweep from ``output``; returns gradients keyed by ``id(node)``."""
    if seed is None:
        if output.data.size != 1:
            raise ShapeError(
                f"node {output.label!r} has shape {output.shape}; a seed is required "
                "for non-scalar outputs")
        seed = np.ones_like(output.data)
    else:
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != output.shape:
            raise ShapeError(f"seed shape {seed.shape} does not match node {output.label!r} {output.shape}")

    grads: dict[int, np.ndarray] = {id(output): seed}
    for node in reversed(topo_order(output)):
        g = grads.get(id(node))
        if g is None or node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg
    return grads


def grad(output: Tensor, params: Mapping[str, Tensor],
         seed: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Gradient of ``output`` for every named parameter (zeros where unused)."""
    g = backward(output, seed)
    return {name: g.get(id(p), np.zeros_like(p.data)) for name, p in params.items()}


class Graph:
    """A differentiable computation over named inputs and named parameters.

    ``fn(inputs, params)`` receives input Tensors and parameter Tensors by name
    and returns a dict of named output Tensors.  ``forward`` validates input
    shapes against ``input_shapes`` (``None`` entries are free dimensions) and
    keeps the most recent outputs so ``backward`` can differentiate them.
    """

    def __init__(self, fn: Callable[[dict, dict], dict], params: Mapping[str, Tensor],
                 input_shapes: Mapping[str, tuple] | None = None):
        self.fn = fn
        self.params = params
        self.input_shapes = dict(input_shapes or {})
        self._inputs: dict[str, Tensor] = {}
        self._outputs: dict[str, Tensor] | None = None

    def forward(self, inputs: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        if self.input_shapes:
            missing = set(self.input_shapes) - set(inputs)
            extra = set(inputs) - set(self.input_shapes)
            if missing or extra:
                raise ShapeError(f"inputs missing {sorted(missing)}, unexpected {sorted(extra)}")
            for key, want in self.input_shapes.items():
                have = np.shape(inputs[key])
                if len(have) != len(want) or any(w is not None and w != h for w, h in zip(want, have)):
                    raise ShapeError(f"input node {key!r}: expected shape {want}, got {have}")
        self._inputs = {k: Tensor(v, op="input", name=k) for k, v in inputs.items()}
        self._outputs = self.fn(self._inputs, self.params)
        return {k: v.data for k, v in self._outputs.items()}

    @property
    def nodes(self) -> list[Tensor]:
        if self._outputs is None:
            return []
        seen: dict[int, Tensor] = {}
        for out in self._outputs.values():
            for n in topo_order(out):
                seen.setdefault(id(n), n)
        return list(seen.values())

    def backward(self, output: str, seed: np.ndarray | None = None,
                 wrt_inputs: bool = False) -> dict[str, np.ndarray]:
        if self._outputs is None:
            raise RuntimeError("forward has not been evaluated")
        g = backward(self._outputs[output], seed)
        out = {name: g.get(id(p), np.zeros_like(p.data)) for name, p in self.params.items()}
        if wrt_inputs:
            for name, t in self._inputs.items():
                out[name] = g.get(id(t), np.zeros_like(t.data))
        return out
