"""The full two-part forecaster and its configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .cte import CrossTemporalEncoder
from .cve import CrossVariableEncoder, CveOutput
from .errors import ConfigError
from .tensor import Tensor

GROUPS = ("cve", "cte")
CTE_FRAMES = ("normalized", "raw")


@dataclass(frozen=True)
class ModelConfig:
    lookback: int = 96
    horizon: int = 96
    n_vars: int = 7
    cve_layers: int = 2
    cte_layers: int = 2
    growth_r: int = 8
    kernel: int = 3
    heads: int = 8
    d_ff: int | None = None
    dropout: float = 0.1
    activation: str = "gelu"
    trend: bool = True
    cte_frame: str = "normalized"
    revin_eps: float = 1e-5
    revin_affine: bool = True
    seed: int = 0

    def __post_init__(self):
        if min(self.lookback, self.horizon, self.n_vars) < 1:
            raise ConfigError("lookback, horizon and n_vars must be positive")
        if self.cte_frame not in CTE_FRAMES:
            raise ConfigError(f"cte_frame must be one of {CTE_FRAMES}, got {self.cte_frame!r}")
        if self.growth_r < 2 or self.growth_r % 2:
            raise ConfigError(f"growth_r must be a positive even integer, got {self.growth_r}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"kernel must be a positive odd integer, got {self.kernel}")
        if self.heads < 1 or self.lookback % self.heads:
            raise ConfigError(f"lookback {self.lookback} is not divisible by {self.heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.cve_layers < 0 or self.cte_layers < 0:
            raise ConfigError("layer counts must be non-negative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class CvtnModel:
    """Cross-variable encoder followed by a residual cross-temporal encoder.

    Parameters are split into two disjoint groups, ``"cve"`` and ``"cte"``,
    which the trainer optimises in separate stages.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        c = config
        self.cve = CrossVariableEncoder(
            c.lookback, c.horizon, c.n_vars, rng, layers=c.cve_layers, heads=c.heads,
            d_ff=c.d_ff, dropout=c.dropout, activation=c.activation, trend=c.trend,
            revin_eps=c.revin_eps, revin_affine=c.revin_affine)
        self.cte = CrossTemporalEncoder(
            c.lookback, c.horizon, c.n_vars, rng, layers=c.cte_layers, growth_r=c.growth_r,
            kernel=c.kernel, activation=c.activation)

    # -- parameters -------------------------------------------------------

    def group(self, name: str) -> dict[str, Tensor]:
        if name == "cve":
            return self.cve.parameters()
        if name == "cte":
            return self.cte.parameters()
        raise KeyError(f"unknown parameter group {name!r}; expected one of {GROUPS}")

    def parameters(self) -> dict[str, Tensor]:
        return {**self.cve.parameters(), **self.cte.parameters()}

    def set_trainable(self, name: str, flag: bool) -> None:
        for p in self.group(name).values():
            p.requires_grad = flag
            if flag and p.grad is None:
                p.grad = np.zeros_like(p.data)

    def freeze(self, name: str) -> None:
        self.set_trainable(name, False)

    def unfreeze(self, name: str) -> None:
        self.set_trainable(name, True)

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray], group: str | None = None) -> None:
        params = self.parameters() if group is None else self.group(group)
        for k, p in params.items():
            src = np.asarray(state[k], dtype=np.float64)
            if src.shape != p.shape:
                raise ConfigError(f"parameter {k}: stored shape {src.shape} vs model {p.shape}")
            p.data[...] = src

    # -- forward ----------------------------------------------------------

    def cve_forward(self, x: Tensor, training: bool = False,
                    rng: np.random.Generator | None = None) -> CveOutput:
        return self.cve(x, training, rng)

    def cte_forward(self, x: Tensor, cve_out: CveOutput, ledger: list[int] | None = None) -> Tensor:
        """Final prediction ``Y`` given a (usually frozen) CVE pass."""
        if self.config.cte_frame == "normalized":
            y_norm = self.cte(cve_out.x_norm, cve_out.z_norm, ledger)
            return self.cve.revin.decode(y_norm, cve_out.state)
        return self.cte(x, cve_out.z, ledger)

    def forward(self, x: Tensor, ledger: list[int] | None = None) -> Tensor:
        """Inference-mode prediction (no dropout)."""
        return self.cte_forward(x, self.cve_forward(x), ledger)

    def predict(self, x: np.ndarray, cve_only: bool = False) -> np.ndarray:
        with T.no_grad():
            xt = Tensor(x)
            out = self.cve_forward(xt)
            return out.z.data if cve_only else self.cte_forward(xt, out).data
