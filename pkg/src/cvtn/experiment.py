"""Experiment grid driver: train both stages per (horizon, seed), evaluate, write artifacts.

Artifact directory layout::

    config.txt            flat key=value snapshot of the run
    metrics.csv           one row per grid point (test split)
    metrics.jsonl         same records, JSON lines
    summary.csv           per-horizon mean/std over seeds, then Avg and Me rows
    masking.csv           clean vs masked-history metrics (only if mask_fraction > 0)
    failures.jsonl        grid points that aborted (only if any)
    h{O}_s{seed}/
        loss_stage1.csv   epoch,train_loss,val_loss,test_loss,stage
        loss_stage2.csv
        model.ckpt        binary checkpoint
        manifest.txt      parameter names, shapes, SHA-256 digests
        freeze_audit.json group digests before/after each stage
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import statistics
import time
import traceback
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint
from .data import EttMonths, Ratio, TimeSeriesDataset, load_csv, mask_histories, split, window_arrays, zscore
from .errors import ConfigError, ContractError, CvtnError
from .model import CvtnModel, ModelConfig
from .trainer import TrainConfig, TrainReport, WindowData, mae, mse, predict, train_stage1, train_stage2

log = logging.getLogger(__name__)

CURVE_FIELDS = ("epoch", "train_loss", "val_loss", "test_loss", "stage")
METRIC_FIELDS = ("dataset", "horizon", "seed", "split", "mse", "mae",
                 "epochs_stage1", "epochs_stage2", "wall_clock")


@dataclass
class ExperimentConfig:
    data: str | None = None
    dataset_name: str | None = None
    splits: str = "ratio"
    steps_per_day: int = 24
    lookback: int = 96
    horizons: tuple[int, ...] = (96, 192, 336, 720)
    seeds: tuple[int, ...] = (0, 1, 2)
    epochs_stage1: int = 10
    epochs_stage2: int = 10
    patience: int = 3
    lr: float = 1e-4
    batch: int = 32
    heads: int = 8
    layers_cve: int = 2
    layers_cte: int = 2
    growth_r: int = 8
    kernel: int = 3
    d_ff: int | None = None
    dropout: float = 0.1
    activation: str = "gelu"
    trend: bool = True
    cte_frame: str = "normalized"
    mask_fraction: float = 0.0
    mask_contiguous: bool = False
    track_test: bool = False
    out: str = "runs/cvtn"

    def __post_init__(self):
        self.horizons = tuple(int(h) for h in self.horizons)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.horizons or min(self.horizons) < 1:
            raise ConfigError("horizons must be positive")
        if self.lookback < 1:
            raise ConfigError("lookback must be positive")
        if self.splits not in ("ratio", "ett-months"):
            raise ConfigError(f"unknown split scheme {self.splits!r}")
        if not 0.0 <= self.mask_fraction <= 1.0:
            raise ConfigError("mask fraction must lie in [0, 1]")

    @property
    def name(self) -> str:
        if self.dataset_name:
            return self.dataset_name
        return Path(self.data).stem if self.data else "dataset"

    def scheme(self):
        return Ratio() if self.splits == "ratio" else EttMonths(steps_per_day=self.steps_per_day)

    def model_config(self, horizon: int, n_vars: int, seed: int) -> ModelConfig:
        return ModelConfig(
            lookback=self.lookback, horizon=horizon, n_vars=n_vars, cve_layers=self.layers_cve,
            cte_layers=self.layers_cte, growth_r=self.growth_r, kernel=self.kernel, heads=self.heads,
            d_ff=self.d_ff, dropout=self.dropout, activation=self.activation, trend=self.trend,
            cte_frame=self.cte_frame, seed=seed)

    def train_config(self, stage: int, seed: int) -> TrainConfig:
        epochs = self.epochs_stage1 if stage == 1 else self.epochs_stage2
        return TrainConfig(epochs=epochs, patience=self.patience, lr=self.lr, batch_size=self.batch,
                           seed=seed, track_test=self.track_test)


@dataclass
class MetricsRecord:
    dataset: str
    horizon: int
    seed: int
    split: str
    mse: float
    mae: float
    epochs_stage1: int = 0
    epochs_stage2: int = 0
    wall_clock: float = 0.0


@dataclass(frozen=True)
class Aggregate:
    avg: float
    median: float


def aggregate(values) -> Aggregate:
    """Mean and median across horizons, as in the usual Avg/Me summary rows."""
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("aggregate of an empty sequence")
    return Aggregate(statistics.fmean(vals), statistics.median(vals))


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate(model: CvtnModel, ds: TimeSeriesDataset, split_id: str = "test", mask_fraction: float = 0.0,
             seed: int = 0, cve_only: bool = False, contiguous: bool = False) -> MetricsRecord:
    """Single deterministic pass over a split's windows, optionally with masked histories."""
    cfg = model.config
    hist, tgt, origins = window_arrays(ds, cfg.lookback, cfg.horizon, split_id)
    if mask_fraction > 0:
        hist = mask_histories(hist, origins, mask_fraction, seed, contiguous)
    pred = predict(model, hist, cve_only=cve_only)
    return MetricsRecord(dataset="", horizon=cfg.horizon, seed=seed, split=split_id,
                         mse=mse(pred, tgt), mae=mae(pred, tgt))


# ---------------------------------------------------------------------------
# artifact writers
# ---------------------------------------------------------------------------

def emit_loss_curves(report: TrainReport, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_FIELDS)
        for e in report.epochs:
            w.writerow([e.epoch, repr(float(e.train_loss)), repr(float(e.val_loss)), repr(float(e.test_loss)),
                        report.stage])
    return path


def read_loss_curves(path: str | Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return [{"epoch": int(r["epoch"]), "train_loss": float(r["train_loss"]),
                 "val_loss": float(r["val_loss"]), "test_loss": float(r["test_loss"]),
                 "stage": int(r["stage"])} for r in csv.DictReader(fh)]


def _flat(value) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return "" if value is None else str(value)


def write_config_snapshot(cfg: ExperimentConfig, path: Path) -> None:
    lines = [f"{k}={_flat(v)}" for k, v in dataclasses.asdict(cfg).items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_config_snapshot(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        key, _, value = line.partition("=")
        out[key] = value
    return out


def _write_rows(path: Path, fields, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in r.items()})


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------

@dataclass
class GridResult:
    record: MetricsRecord
    reports: tuple[TrainReport, TrainReport]
    masking: dict | None = None


def run_grid_point(cfg: ExperimentConfig, ds: TimeSeriesDataset, horizon: int, seed: int,
                   out_dir: Path) -> GridResult:
    t0 = time.perf_counter()
    out_dir.mkdir(parents=True, exist_ok=True)
    nds = zscore(split(ds, cfg.scheme(), cfg.lookback, horizon))
    data = WindowData.from_dataset(nds, cfg.lookback, horizon)
    model = CvtnModel(cfg.model_config(horizon, nds.n_vars, seed))

    audit = {}
    before = {g: checkpoint.group_digest(model, g) for g in ("cve", "cte")}
    r1 = train_stage1(model, data, cfg.train_config(1, seed))
    mid = {g: checkpoint.group_digest(model, g) for g in ("cve", "cte")}
    r2 = train_stage2(model, data, cfg.train_config(2, seed))
    after = {g: checkpoint.group_digest(model, g) for g in ("cve", "cte")}
    audit["stage1"] = {"cte_before": before["cte"], "cte_after": mid["cte"]}
    audit["stage2"] = {"cve_before": mid["cve"], "cve_after": after["cve"]}
    (out_dir / "freeze_audit.json").write_text(json.dumps(audit, indent=2))
    if before["cte"] != mid["cte"] or mid["cve"] != after["cve"]:
        raise ContractError("frozen parameter group changed during training")

    emit_loss_curves(r1, out_dir / "loss_stage1.csv")
    emit_loss_curves(r2, out_dir / "loss_stage2.csv")
    checkpoint.save(model, out_dir / "model.ckpt")
    checkpoint.write_manifest(model, out_dir / "manifest.txt")

    rec = evaluate(model, nds, "test", cfg.mask_fraction, seed, contiguous=cfg.mask_contiguous)
    masking = None
    if cfg.mask_fraction > 0:
        clean = evaluate(model, nds, "test", 0.0, seed)
        cve_clean = evaluate(model, nds, "test", 0.0, seed, cve_only=True)
        cve_masked = evaluate(model, nds, "test", cfg.mask_fraction, seed, cve_only=True,
                              contiguous=cfg.mask_contiguous)
        masking = {"horizon": horizon, "seed": seed, "mask_fraction": cfg.mask_fraction,
                   "cve_mse_clean": cve_clean.mse, "cve_mse_masked": cve_masked.mse,
                   "cve_degradation": cve_masked.mse / cve_clean.mse,
                   "mse_clean": clean.mse, "mse_masked": rec.mse,
                   "degradation": rec.mse / clean.mse}
    rec.dataset = cfg.name
    rec.epochs_stage1 = r1.stop_epoch
    rec.epochs_stage2 = r2.stop_epoch
    rec.wall_clock = time.perf_counter() - t0
    return GridResult(rec, (r1, r2), masking)


def run_experiment(cfg: ExperimentConfig, dataset: TimeSeriesDataset | None = None) -> tuple[Path, list[dict]]:
    """Run the (horizon x seed) grid. Returns the artifact directory and any failures."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config_snapshot(cfg, out / "config.txt")
    if dataset is None:
        if cfg.data is None:
            raise ConfigError("no dataset: pass a CSV path or a dataset object")
        dataset = load_csv(cfg.data)

    records: list[MetricsRecord] = []
    masking: list[dict] = []
    failures: list[dict] = []
    for horizon in cfg.horizons:
        for seed in cfg.seeds:
            log.info("grid point horizon=%d seed=%d", horizon, seed)
            try:
                res = run_grid_point(cfg, dataset, horizon, seed, out / f"h{horizon}_s{seed}")
            except CvtnError as exc:
                log.error("horizon=%d seed=%d failed: %s", horizon, seed, exc)
                failures.append({"horizon": horizon, "seed": seed, "error": type(exc).__name__,
                                 "message": str(exc), "traceback": traceback.format_exc()})
                continue
            records.append(res.record)
            if res.masking:
                masking.append(res.masking)

    rows = [dataclasses.asdict(r) for r in records]
    _write_rows(out / "metrics.csv", METRIC_FIELDS, rows)
    with (out / "metrics.jsonl").open("w") as fh:
        for r in rows:
            fh.write(json.dumps(r) + "\n")
    if records:
        _write_rows(out / "summary.csv", ("row", "mse", "mse_std", "mae", "mae_std", "n_seeds"),
                    summarize(records))
    if masking:
        _write_rows(out / "masking.csv", tuple(masking[0]), masking)
    if failures:
        with (out / "failures.jsonl").open("w") as fh:
            for f in failures:
                fh.write(json.dumps(f) + "\n")
    return out, failures


def summarize(records: list[MetricsRecord]) -> list[dict]:
    """Per-horizon mean/std over seeds, then Avg and Me across horizons."""
    by_h: dict[int, list[MetricsRecord]] = {}
    for r in records:
        by_h.setdefault(r.horizon, []).append(r)
    rows = []
    for h in sorted(by_h):
        m = np.array([r.mse for r in by_h[h]])
        a = np.array([r.mae for r in by_h[h]])
        rows.append({"row": str(h), "mse": float(m.mean()), "mse_std": float(m.std()),
                     "mae": float(a.mean()), "mae_std": float(a.std()), "n_seeds": len(m)})
    agg_mse = aggregate(r["mse"] for r in rows)
    agg_mae = aggregate(r["mae"] for r in rows)
    rows.append({"row": "Avg", "mse": agg_mse.avg, "mse_std": "", "mae": agg_mae.avg, "mae_std": "",
                 "n_seeds": ""})
    rows.append({"row": "Me", "mse": agg_mse.median, "mse_std": "", "mae": agg_mae.median, "mae_std": "",
                 "n_seeds": ""})
    return rows
