"""Parameter containers and initialisers shared by every layer."""

from __future__ import annotations

import zlib
from typing import Iterator

import numpy as np

from .tensor import Tensor, add, layer_norm, matmul, mul

INITS = ("glorot", "zeros", "ones", "normal", "identity_noise")


def _init_array(scheme: str, shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    rows, cols = shape
    if scheme == "glorot":
        bound = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-bound, bound, size=shape)
    if scheme == "zeros":
        return np.zeros(shape)
    if scheme == "ones":
        return np.ones(shape)
    if scheme == "normal":
        # external memories: N(0, 1/sqrt(d)) with d the feature width
        return rng.normal(0.0, 1.0 / np.sqrt(cols), size=shape)
    if scheme == "identity_noise":
        return np.eye(rows, cols) + rng.normal(0.0, 0.02, size=shape)
    raise ValueError(f"unknown init scheme {scheme!r}")


class Module:
    """Holds named parameter tensors and child modules.

    Parameters are registered with :meth:`param`; :meth:`initialize` fills
    each one from an RNG keyed by ``(seed, full parameter name)``, so the
    values a parameter receives do not depend on which other blocks exist.
    """

    def __init__(self) -> None:
        self._schemes: dict[str, str] = {}

    def param(self, name: str, shape: tuple[int, int], scheme: str = "glorot") -> Tensor:
        if scheme not in INITS:
            raise ValueError(f"unknown init scheme {scheme!r}")
        self._schemes[name] = scheme
        t = Tensor(np.zeros(shape), requires_grad=True)
        setattr(self, name, t)
        return t

    def children(self) -> Iterator[tuple[str, Module]]:
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name in self._schemes:
            yield prefix + name, getattr(self, name)
        for key, child in self.children():
            yield from child.named_parameters(f"{prefix}{key}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def _named_schemes(self, prefix: str = "") -> Iterator[tuple[str, Tensor, str]]:
        for name, scheme in self._schemes.items():
            yield prefix + name, getattr(self, name), scheme
        for key, child in self.children():
            yield from child._named_schemes(f"{prefix}{key}.")

    def initialize(self, seed: int) -> None:
        for full, t, scheme in self._named_schemes():
            rng = np.random.default_rng([seed, zlib.crc32(full.encode())])
            t.data = _init_array(scheme, t.shape, rng)
            t.grad = None

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.data.size for _, p in self.named_parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()


class Linear(Module):
    """Row-major affine map ``X W + b``."""

    def __init__(self, d_in: int, d_out: int, bias: bool = True) -> None:
        super().__init__()
        self.param("W", (d_in, d_out), "glorot")
        self.has_bias = bias
        if bias:
            self.param("b", (1, d_out), "zeros")

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.W)
        return add(y, self.b) if self.has_bias else y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5) -> None:
        super().__init__()
        self.eps = eps
        self.param("gamma", (1, dim), "ones")
        self.param("beta", (1, dim), "zeros")

    def __call__(self, x: Tensor) -> Tensor:
        return add(mul(layer_norm(x, self.eps), self.gamma), self.beta)
