"""Reversible instance normalisation.

Statistics are taken per window and per variable over the time axis, removed
on the way in and restored on the way out. Window statistics are treated as
constants (no gradient flows into them); the learnable affine pair does
receive gradients on both sides.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class RevinState:
    mean: np.ndarray  # [..., C]
    std: np.ndarray  # [..., C], sqrt(var + eps)
    affine_gamma: Tensor | None
    affine_beta: Tensor | None
    eps: float


class RevIN:
    def __init__(self, n_vars: int, eps: float = 1e-5, affine: bool = True):
        self.n_vars = n_vars
        self.eps = eps
        self.affine = affine
        self.gamma = Tensor(np.ones(n_vars), requires_grad=True, name="revin.gamma") if affine else None
        self.beta = Tensor(np.zeros(n_vars), requires_grad=True, name="revin.beta") if affine else None

    def parameters(self) -> dict[str, Tensor]:
        if not self.affine:
            return {}
        return {"revin.gamma": self.gamma, "revin.beta": self.beta}

    def encode(self, x: Tensor) -> tuple[Tensor, RevinState]:
        """Normalise ``x[..., L, C]`` with its own per-variable statistics."""
        if x.ndim < 2 or x.shape[-1] != self.n_vars:
            raise ShapeError(f"RevIN.encode expects [..., L, {self.n_vars}], got {x.shape}")
        if x.shape[-2] < 2:
            raise ShapeError("RevIN.encode needs at least 2 time steps")
        mean = x.data.mean(axis=-2)
        std = np.sqrt(x.data.var(axis=-2) + self.eps)
        state = RevinState(mean, std, self.gamma, self.beta, self.eps)
        return self.apply(x, state), state

    def apply(self, x: Tensor, state: RevinState) -> Tensor:
        """Map ``x`` into the normalised frame of an existing state."""
        self._check(x, state)
        inv = 1.0 / state.std[..., None, :]
        out = T.affine_const(x, inv, -state.mean[..., None, :] * inv)
        if self.affine:
            out = T.add_bias(T.mul_axis(out, self.gamma), self.beta)
        return out

    def decode(self, y: Tensor, state: RevinState) -> Tensor:
        """Exact inverse of :meth:`apply` for a ``[..., O, C]`` prediction."""
        self._check(y, state)
        out = y
        if self.affine:
            out = T.add_bias(out, T.scale(self.beta, -1.0))
            out = T.div_axis(out, self.gamma, min_abs=self.eps)
        return T.affine_const(out, state.std[..., None, :], state.mean[..., None, :])

    def _check(self, x: Tensor, state: RevinState) -> None:
        if not isinstance(state, RevinState):
            raise ContractError("RevIN needs the state returned by the paired encode()")
        if state.affine_gamma is not self.gamma or state.eps != self.eps:
            raise ContractError("RevIN state was produced by a different RevIN instance")
        if x.shape[:-2] != state.mean.shape[:-1] or x.shape[-1] != state.mean.shape[-1]:
            raise ContractError(f"RevIN state for {state.mean.shape} does not match tensor {x.shape}")
