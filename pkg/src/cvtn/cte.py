"""Cross-temporal encoder.

Works channel-major (``[..., F, O]``) on the horizon axis. The input state is
a horizon projection of the history plus the CVE prediction; each layer
appends ``r`` convolutional feature maps to its input and a pointwise
down-sample keeps ``r/2`` of that growth, so layer ``n`` carries
``C + n*r/2`` channels. A final pointwise map back to ``C`` channels is
added to the CVE prediction as a residual correction.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .layers import ParamContainer, uniform_param, zeros_param
from .tensor import Tensor


def channels_at(n_vars: int, growth_r: int, layer: int) -> int:
    """Channel count after ``layer`` CrossTimeBlock+FDS steps."""
    return n_vars + layer * growth_r // 2


class CrossTimeBlock(ParamContainer):
    """``concat(T, act(conv(T)))``: the input passes through untouched as a prefix."""

    def __init__(self, in_channels: int, growth_r: int, kernel: int, rng: np.random.Generator,
                 activation: str = "gelu"):
        super().__init__()
        if kernel % 2 == 0:
            raise ConfigError(f"conv kernel must be odd, got {kernel}")
        self.in_channels = in_channels
        self.growth_r = growth_r
        self.act = T.activation(activation)
        fan_in = in_channels * kernel
        self.add("conv.w", uniform_param(rng, (growth_r, in_channels, kernel), fan_in, ""))
        self.add("conv.b", uniform_param(rng, (growth_r,), fan_in, ""))

    def __call__(self, t: Tensor) -> Tensor:
        p = self._params
        return T.concat([t, self.act(T.conv1d_same(t, p["conv.w"], p["conv.b"]))], axis=-2)


class FeatureDownSample(ParamContainer):
    """Pointwise conv from ``F + r`` to ``F + r/2`` channels."""

    def __init__(self, in_channels: int, growth_r: int, rng: np.random.Generator):
        super().__init__()
        if growth_r % 2:
            raise ConfigError(f"growth rate r must be even, got {growth_r}")
        wide = in_channels + growth_r
        self.out_channels = in_channels + growth_r // 2
        self.add("w", uniform_param(rng, (self.out_channels, wide), wide, ""))
        self.add("b", uniform_param(rng, (self.out_channels,), wide, ""))

    def __call__(self, t: Tensor) -> Tensor:
        return T.pointwise_conv(t, self._params["w"], self._params["b"])


class CrossTemporalEncoder(ParamContainer):
    def __init__(self, lookback: int, horizon: int, n_vars: int, rng: np.random.Generator, *,
                 layers: int = 2, growth_r: int = 8, kernel: int = 3, activation: str = "gelu"):
        super().__init__()
        if growth_r < 2 or growth_r % 2:
            raise ConfigError(f"growth rate r must be a positive even integer, got {growth_r}")
        self.lookback = lookback
        self.horizon = horizon
        self.n_vars = n_vars
        self.growth_r = growth_r
        self.n_layers = layers
        self.add("cte.zproj.w", uniform_param(rng, (lookback, horizon), lookback, ""))
        self.add("cte.zproj.b", uniform_param(rng, (horizon,), lookback, ""))
        self.blocks: list[CrossTimeBlock] = []
        self.fds: list[FeatureDownSample] = []
        for n in range(layers):
            f = channels_at(n_vars, growth_r, n)
            self.blocks.append(CrossTimeBlock(f, growth_r, kernel, rng, activation))
            self.fds.append(FeatureDownSample(f, growth_r, rng))
            self.adopt(f"cte.layer{n}.ctb", self.blocks[-1].parameters())
            self.adopt(f"cte.layer{n}.fds", self.fds[-1].parameters())
        f_final = channels_at(n_vars, growth_r, layers)
        # zero init: the stage-2 starting output is exactly the CVE prediction
        self.add("cte.out.w", zeros_param((n_vars, f_final), ""))
        self.add("cte.out.b", zeros_param((n_vars,), ""))

    def target_projection(self, x_in: Tensor) -> Tensor:
        """Shared per-variable L -> O map; returns channel-major ``[..., C, O]``."""
        p = self._params
        return T.linear(T.transpose(x_in), p["cte.zproj.w"], p["cte.zproj.b"])

    def __call__(self, x_in: Tensor, z_cve: Tensor, ledger: list[int] | None = None) -> Tensor:
        """Refine ``z_cve[..., O, C]`` given the history ``x_in[..., L, C]`` (same frame).

        If ``ledger`` is given, the channel count of every layer state
        (``T^0 .. T^N``) is appended to it.
        """
        c, o = self.n_vars, self.horizon
        if x_in.ndim < 2 or x_in.shape[-2:] != (self.lookback, c):
            raise ShapeError(f"CTE history must be [..., {self.lookback}, {c}], got {x_in.shape}")
        if z_cve.shape[-2:] != (o, c) or z_cve.shape[:-2] != x_in.shape[:-2]:
            raise ShapeError(f"CTE expects Z_CVE [..., {o}, {c}], got {z_cve.shape}")
        p = self._params
        t = T.add(self.target_projection(x_in), T.transpose(z_cve))
        channels = [t.shape[-2]]
        for n, (ctb, fds) in enumerate(zip(self.blocks, self.fds)):
            t = fds(ctb(t))
            expected = channels_at(c, self.growth_r, n + 1)
            if t.shape[-2:] != (expected, o):
                raise ContractError(f"CTE layer {n}: got {t.shape[-2:]}, expected ({expected}, {o})")
            channels.append(t.shape[-2])
        if ledger is not None:
            ledger.extend(channels)
        correction = T.transpose(T.pointwise_conv(t, p["cte.out.w"], p["cte.out.b"]))
        return T.add(z_cve, correction)
