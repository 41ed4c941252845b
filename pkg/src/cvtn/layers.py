"""Parameter initialisation and a tiny container base shared by the encoders."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def uniform_param(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, name: str) -> Tensor:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual dense-layer default."""
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def zeros_param(shape: tuple[int, ...], name: str) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def ones_param(shape: tuple[int, ...], name: str) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True, name=name)


class ParamContainer:
    """Holds an ordered name -> parameter mapping.

    Subclasses register leaves with :meth:`add` and children with :meth:`adopt`;
    names are dotted paths so the full model has a flat, stable namespace.
    """

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, param: Tensor) -> Tensor:
        param.name = name
        self._params[name] = param
        return param

    def adopt(self, prefix: str, params: dict[str, Tensor]) -> None:
        for name, p in params.items():
            self.add(f"{prefix}.{name}", p)

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def n_parameters(self) -> int:
        return sum(p.size for p in self._params.values())
