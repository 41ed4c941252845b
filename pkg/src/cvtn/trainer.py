"""Two-stage training with hard parameter-group isolation.

Stage 1 optimises only the CVE group against the targets. Stage 2 runs the
CVE in inference mode (no dropout, nothing recorded on the tape) and
optimises only the CTE group on the final output. Each stage keeps the
parameters from its best validation epoch.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import TimeSeriesDataset, window_arrays
from .errors import ShapeError, TrainingAborted
from .model import CvtnModel
from .tensor import Tensor

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def mse(pred: np.ndarray, true: np.ndarray) -> float:
    pred, true = np.asarray(pred), np.asarray(true)
    if pred.shape != true.shape:
        raise ShapeError(f"mse: prediction {pred.shape} vs target {true.shape}")
    return float(np.mean((pred - true) ** 2))


def mae(pred: np.ndarray, true: np.ndarray) -> float:
    pred, true = np.asarray(pred), np.asarray(true)
    if pred.shape != true.shape:
        raise ShapeError(f"mae: prediction {pred.shape} vs target {true.shape}")
    return float(np.mean(np.abs(pred - true)))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, in place on ``params``."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("adam_step: parameter, gradient and moment lists differ in length")
    state.step += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or m.shape != p.shape:
            raise ShapeError(f"adam_step: parameter {p.shape} vs gradient {g.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.state = AdamState(lr=lr, betas=tuple(betas), eps=eps, weight_decay=weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state)


# ---------------------------------------------------------------------------
# config / report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    patience: int = 3
    lr: float = 1e-4
    batch_size: int = 32
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    track_test: bool = False
    eval_batch_size: int = 256


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    test_loss: float  # NaN unless test tracking is on


@dataclass
class TrainReport:
    stage: int
    epochs: list[EpochRecord] = field(default_factory=list)
    initial_val_loss: float = float("nan")
    best_epoch: int = 0  # 0 = the starting parameters
    best_val_loss: float = float("inf")
    stop_epoch: int = 0
    early_stopped: bool = False
    wall_clock: float = 0.0

    def val_losses(self) -> list[float]:
        return [e.val_loss for e in self.epochs]

    def train_losses(self) -> list[float]:
        return [e.train_loss for e in self.epochs]


class EarlyStopping:
    """Stop once ``patience`` consecutive epochs fail to improve on the best."""

    def __init__(self, patience: int = 3, best: float = float("inf")):
        self.patience = patience
        self.best = best
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, val_loss: float) -> tuple[bool, bool]:
        """Returns ``(improved, should_stop)``."""
        if val_loss < self.best:
            self.best, self.best_epoch, self.bad_epochs = val_loss, epoch, 0
            return True, False
        self.bad_epochs += 1
        return False, self.bad_epochs >= self.patience


# ---------------------------------------------------------------------------
# data bundle
# ---------------------------------------------------------------------------

@dataclass
class WindowData:
    """Stacked windows per split, already in the z-score frame."""

    train: tuple[np.ndarray, np.ndarray]
    val: tuple[np.ndarray, np.ndarray]
    test: tuple[np.ndarray, np.ndarray] | None = None
    origins: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_dataset(cls, ds: TimeSeriesDataset, lookback: int, horizon: int) -> "WindowData":
        parts, origins = {}, {}
        for sid in ("train", "val", "test"):
            h, t, o = window_arrays(ds, lookback, horizon, sid)
            parts[sid] = (h, t)
            origins[sid] = o
        return cls(parts["train"], parts["val"], parts["test"], origins)


# ---------------------------------------------------------------------------
# loops
# ---------------------------------------------------------------------------

def _batches(n: int, size: int):
    for lo in range(0, n, size):
        yield slice(lo, min(lo + size, n))


def predict(model: CvtnModel, histories: np.ndarray, cve_only: bool = False,
            batch_size: int = 256) -> np.ndarray:
    """Deterministic inference over stacked windows."""
    out = [model.predict(np.ascontiguousarray(histories[sl]), cve_only)
           for sl in _batches(len(histories), batch_size)]
    return np.concatenate(out, axis=0)


def evaluate_loss(model: CvtnModel, split: tuple[np.ndarray, np.ndarray], cve_only: bool,
                  batch_size: int = 256) -> float:
    hist, tgt = split
    sse = 0.0
    for sl in _batches(len(hist), batch_size):
        pred = model.predict(np.ascontiguousarray(hist[sl]), cve_only)
        sse += float(np.sum((pred - tgt[sl]) ** 2))
    return sse / tgt.size


def _stage1_loss(model: CvtnModel, x: Tensor, y: Tensor, rng: np.random.Generator) -> Tensor:
    out = model.cve_forward(x, training=True, rng=rng)
    return T.mse_loss(out.z, y)


def _stage2_loss(model: CvtnModel, x: Tensor, y: Tensor, rng: np.random.Generator) -> Tensor:
    with T.no_grad():
        cve_out = model.cve_forward(x, training=False)
    return T.mse_loss(model.cte_forward(x, cve_out), y)


def _run_stage(stage: int, model: CvtnModel, data: WindowData, cfg: TrainConfig) -> TrainReport:
    group, frozen = ("cve", "cte") if stage == 1 else ("cte", "cve")
    cve_only = stage == 1
    loss_fn = _stage1_loss if stage == 1 else _stage2_loss
    model.freeze(frozen)
    model.unfreeze(group)
    params = model.group(group)
    opt = Adam(list(params.values()), lr=cfg.lr, betas=cfg.betas, eps=cfg.eps,
               weight_decay=cfg.weight_decay)
    # independent streams: batch order per epoch, and dropout masks
    shuffle_rng = np.random.default_rng([cfg.seed, stage, 0])
    dropout_rng = np.random.default_rng([cfg.seed, stage, 1])

    report = TrainReport(stage=stage)
    t0 = time.perf_counter()
    report.initial_val_loss = evaluate_loss(model, data.val, cve_only, cfg.eval_batch_size)
    stopper = EarlyStopping(cfg.patience, best=report.initial_val_loss)
    best_state = {k: p.data.copy() for k, p in params.items()}

    hist, tgt = data.train
    n = len(hist)
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        total, count = 0.0, 0
        for b, sl in enumerate(_batches(n, cfg.batch_size)):
            idx = order[sl]
            x, y = Tensor(hist[idx]), Tensor(tgt[idx])
            opt.zero_grad()
            loss = loss_fn(model, x, y, dropout_rng)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingAborted(
                    f"stage {stage}: non-finite loss {value} at epoch {epoch}, batch {b} (lr={cfg.lr})",
                    lr=cfg.lr, batch_index=b, epoch=epoch)
            T.backward(loss)
            opt.step()
            total += value * len(idx)
            count += len(idx)
        val = evaluate_loss(model, data.val, cve_only, cfg.eval_batch_size)
        test = (evaluate_loss(model, data.test, cve_only, cfg.eval_batch_size)
                if cfg.track_test and data.test is not None else float("nan"))
        report.epochs.append(EpochRecord(epoch, total / count, val, test))
        improved, stop = stopper.update(epoch, val)
        log.info("stage %d epoch %d: train %.6f val %.6f%s", stage, epoch, total / count, val,
                 " *" if improved else "")
        if improved:
            best_state = {k: p.data.copy() for k, p in params.items()}
        if stop:
            report.early_stopped = True
            break

    for k, p in params.items():
        p.data[...] = best_state[k]
    model.unfreeze(frozen)
    report.best_epoch = stopper.best_epoch
    report.best_val_loss = stopper.best
    report.stop_epoch = len(report.epochs)
    report.wall_clock = time.perf_counter() - t0
    return report


def train_stage1(model: CvtnModel, data: WindowData, cfg: TrainConfig = TrainConfig()) -> TrainReport:
    """Fit the CVE group; the CTE group is frozen and never touched."""
    return _run_stage(1, model, data, cfg)


def train_stage2(model: CvtnModel, data: WindowData, cfg: TrainConfig = TrainConfig()) -> TrainReport:
    """Fit the CTE group on the final output with the CVE frozen."""
    return _run_stage(2, model, data, cfg)
