"""Parameter store and perceptron helpers shared by the models."""

from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ParamStore(dict):
    """Ordered ``name -> Tensor`` map of trainable leaves."""

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self:
            raise KeyError(f"parameter {name!r} already exists")
        t = Tensor(np.array(value, dtype=np.float64), name=name)
        self[name] = t
        return t

    def prefixed(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.items() if k.startswith(prefix)}

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.items()}

    def copy_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, v in arrays.items():
            self[k].data = np.array(v, dtype=np.float64)

    def fingerprint(self, names: Iterable[str]) -> bytes:
        """Concatenated raw bytes of the named parameters, for bit-exact comparisons."""
        return b"".join(name.encode() + self[name].data.tobytes() for name in names)


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float = 2.0):
    w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(gain / fan_in)
    return w, np.zeros(fan_out)


def add_mlp(store: ParamStore, prefix: str, sizes: list[int], rng: np.random.Generator,
            last_gain: float = 1.0) -> list[str]:
    """Register a perceptron ``sizes[0] -> ... -> sizes[-1]`` as ``prefix.w{i}``/``prefix.b{i}``."""
    names = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = last_gain if i == len(sizes) - 2 else 2.0
        w, bias = init_linear(rng, a, b, gain)
        store.add(f"{prefix}.w{i}", w)
        store.add(f"{prefix}.b{i}", bias)
        names += [f"{prefix}.w{i}", f"{prefix}.b{i}"]
    return names


def mlp_layers(store: ParamStore, prefix: str) -> Iterator[tuple[Tensor, Tensor]]:
    i = 0
    while f"{prefix}.w{i}" in store:
        yield store[f"{prefix}.w{i}"], store[f"{prefix}.b{i}"]
        i += 1


def mlp(store: ParamStore, prefix: str, x: Tensor, final_relu: bool = False) -> Tensor:
    layers = list(mlp_layers(store, prefix))
    if not layers:
        raise KeyError(f"no perceptron registered under {prefix!r}")
    for i, (w, b) in enumerate(layers):
        x = T.add(T.matmul(x, w), b, name=f"{prefix}.out{i}")
        if i < len(layers) - 1 or final_relu:
            x = T.relu(x)
    return x


def mlp_numpy(store: ParamStore, prefix: str, x: np.ndarray, final_relu: bool = False) -> np.ndarray:
    """Same perceptron evaluated on raw arrays, with no graph recorded."""
    layers = list(mlp_layers(store, prefix))
    for i, (w, b) in enumerate(layers):
        x = x @ w.data + b.data
        if i < len(layers) - 1 or final_relu:
            x = np.maximum(x, 0.0)
    return x
