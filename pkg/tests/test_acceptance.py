"""Acceptance gate: one test (and one PASS/FAIL line) per primary criterion.

Run alone with ``pytest tests/test_acceptance.py -v -s`` to see the lines as
they are produced; they are also collected into an "acceptance criteria"
section of the terminal summary. The long tiny-synthetic run takes a few
minutes single-threaded.
"""

import itertools
import os
import time

import numpy as np
import pytest

from cases import case_rng, primitive_cases
from conftest import check_param_gradients
from oracles import naive_attention
from cvtn import checkpoint
from cvtn import data as D
from cvtn import tensor as T
from cvtn.cve import TransformerBlock
from cvtn.experiment import ExperimentConfig, aggregate, run_experiment
from cvtn.model import CvtnModel, ModelConfig
from cvtn.revin import RevIN
from cvtn.synthetic import lagged_pair, ols_forecast
from cvtn.tensor import Tensor
from cvtn.trainer import TrainConfig, WindowData, mse, predict, train_stage1, train_stage2

GRAD_COORDS = 50
TINY_EPOCHS = 100  # per stage, 200 in total


def _perturbed_model(rng, **kw):
    cfg = dict(lookback=16, horizon=8, n_vars=3, heads=4, cve_layers=2, cte_layers=2,
               growth_r=4, dropout=0.0)
    cfg.update(kw)
    model = CvtnModel(ModelConfig(**cfg))
    # leave the zero-initialised CTE output map non-zero so gradients reach every layer
    for p in model.parameters().values():
        p.data[...] += rng.normal(size=p.shape) * 0.1
    return model


def test_gradient_suite(criterion):
    t0 = time.perf_counter()
    worst = {}
    for name in sorted(primitive_cases(np.random.default_rng(0))):
        rng = case_rng(name)
        fn, arrays = primitive_cases(rng)[name]
        leaves = [Tensor(a, requires_grad=True) for a in arrays]
        r = rng.normal(size=fn(*[Tensor(a) for a in arrays]).shape)
        params = {f"arg{i}": t for i, t in enumerate(leaves)}
        worst[name] = check_param_gradients(
            lambda: T.sum_all(T.mul(fn(*leaves), Tensor(r))), params, GRAD_COORDS, rng)

    rng = np.random.default_rng(11)
    model = _perturbed_model(rng)
    x = Tensor(rng.normal(size=(2, 16, 3)))
    y = Tensor(rng.normal(size=(2, 8, 3)))
    worst["cve_forward"] = check_param_gradients(
        lambda: T.mse_loss(model.cve_forward(x).z, y), model.group("cve"), GRAD_COORDS, rng)

    def cte_loss():
        with T.no_grad():
            cve_out = model.cve_forward(x)
        return T.mse_loss(model.cte_forward(x, cve_out), y)

    worst["cte_forward"] = check_param_gradients(cte_loss, model.group("cte"), GRAD_COORDS, rng)
    elapsed = time.perf_counter() - t0
    top = max(worst, key=worst.get)
    criterion("gradient suite", elapsed < 120 and max(worst.values()) < 1e-4,
              f"{len(worst)} checks x {GRAD_COORDS} coords, worst rel err {worst[top]:.2e} ({top}), "
              f"{elapsed:.1f}s")


def test_revin_round_trip(criterion):
    rng = np.random.default_rng(21)
    rv = RevIN(7)
    rv.gamma.data[:] = rng.uniform(0.5, 2.0, 7) * rng.choice([-1, 1], 7)
    rv.beta.data[:] = rng.normal(size=7)
    worst = 0.0
    for _ in range(100):
        scale = 10.0 ** rng.uniform(-2.5, 3, size=7)
        x = rng.normal(size=(96, 7)) * scale + rng.normal(size=7) * 5
        assert (x.std(axis=0) > 1e-3).all()
        enc, state = rv.encode(Tensor(x))
        worst = max(worst, float(np.abs(rv.decode(enc, state).data - x).max()))
    criterion("RevIN round trip", worst < 1e-10, f"100 windows, max abs err {worst:.1e}")


def test_shape_contract_matrix(criterion):
    rng = np.random.default_rng(31)
    combos = list(itertools.product((96, 192, 336, 720), (1, 7, 21), (1, 2), (1, 2, 3), (4, 8)))
    bad = []
    for o, c, m, n, r in combos:
        model = CvtnModel(ModelConfig(lookback=96, horizon=o, n_vars=c, cve_layers=m,
                                      cte_layers=n, growth_r=r))
        x = Tensor(rng.normal(size=(96, c)))
        with T.no_grad():
            cve_out = model.cve_forward(x)
            ledger = []
            y = model.cte_forward(x, cve_out, ledger)
        want = [c + k * r // 2 for k in range(n + 1)]
        if cve_out.z.shape != (o, c) or ledger != want or y.shape != (o, c):
            bad.append((o, c, m, n, r))
    criterion("shape-contract matrix", len(combos) == 144 and not bad,
              f"{len(combos) - len(bad)}/{len(combos)} combinations" + (f", failing {bad[:3]}" if bad else ""))


def test_permutation_equivariance(criterion):
    rng = np.random.default_rng(41)
    model = CvtnModel(ModelConfig(lookback=96, horizon=96, n_vars=7))
    rv = model.cve.revin
    rv.gamma.data[:] = rng.uniform(0.5, 2.0, 7)
    rv.beta.data[:] = rng.normal(size=7) * 0.5
    g, b = rv.gamma.data.copy(), rv.beta.data.copy()
    worst = 0.0
    for _ in range(20):
        x = rng.normal(size=(96, 7)) * rng.uniform(0.5, 3, 7) + rng.normal(size=7)
        perm = rng.permutation(7)
        rv.gamma.data[:], rv.beta.data[:] = g, b
        base = model.predict(x, cve_only=True)
        # the per-variable affine pair travels with its variable
        rv.gamma.data[:], rv.beta.data[:] = g[perm], b[perm]
        worst = max(worst, float(np.abs(model.predict(x[:, perm], cve_only=True) - base[:, perm]).max()))
    criterion("permutation equivariance", worst < 1e-9, f"20 (X, pi) pairs, max abs diff {worst:.1e}")


def test_attention_oracle(criterion):
    rng = np.random.default_rng(51)
    blk = TransformerBlock(96, 8, 384, rng, dropout=0.0)
    p = {k: v.data for k, v in blk.parameters().items()}
    worst = 0.0
    for _ in range(3):
        h = rng.normal(size=(8, 96))
        want = naive_attention(h, p["attn.wq"], p["attn.bq"], p["attn.wk"], p["attn.bk"],
                               p["attn.wv"], p["attn.bv"], p["attn.wo"], p["attn.bo"], heads=8)
        worst = max(worst, float(np.abs(blk.attention(Tensor(h)).data - want).max()))
    criterion("attention oracle", worst < 1e-10, f"3 random 8x96 inputs, max abs diff {worst:.1e}")


def test_aggregation(criterion):
    agg = aggregate([0.132, 0.154, 0.170, 0.187])
    ok = abs(agg.avg - 0.16075) < 1e-12 and abs(agg.median - 0.162) < 1e-12
    criterion("Avg/Me aggregation", ok, f"Avg {agg.avg:.5f}, Me {agg.median:.3f}")


# ---------------------------------------------------------------------------
# tiny synthetic: one full two-stage run shared by several criteria
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_run():
    ds = D.zscore(D.split(lagged_pair(), D.Ratio(), 96, 96))
    data = WindowData.from_dataset(ds, 96, 96)
    model = CvtnModel(ModelConfig(lookback=96, horizon=96, n_vars=2))
    t0 = time.perf_counter()
    digests = {"start": {g: checkpoint.group_digest(model, g) for g in ("cve", "cte")}}
    r1 = train_stage1(model, data, TrainConfig(epochs=TINY_EPOCHS))
    digests["mid"] = {g: checkpoint.group_digest(model, g) for g in ("cve", "cte")}
    hist = data.val[0][:64]
    z_cve = predict(model, hist, cve_only=True)
    y_first = predict(model, hist)
    r2 = train_stage2(model, data, TrainConfig(epochs=TINY_EPOCHS))
    digests["end"] = {g: checkpoint.group_digest(model, g) for g in ("cve", "cte")}
    return {"data": data, "model": model, "r1": r1, "r2": r2, "digests": digests,
            "z_cve": z_cve, "y_first": y_first, "elapsed": time.perf_counter() - t0}


@pytest.mark.slow
def test_freezing_audit(tiny_run, criterion):
    d = tiny_run["digests"]
    ok = (d["start"]["cte"] == d["mid"]["cte"] and d["mid"]["cve"] == d["end"]["cve"]
          and d["start"]["cve"] != d["mid"]["cve"])
    criterion("freezing audit", ok, f"cte {d['mid']['cte'][:12]} across stage 1, "
                                    f"cve {d['end']['cve'][:12]} across stage 2")


@pytest.mark.slow
def test_residual_identity(tiny_run, criterion):
    fwd = float(np.abs(tiny_run["y_first"] - tiny_run["z_cve"]).max())
    val = abs(tiny_run["r2"].initial_val_loss - tiny_run["r1"].best_val_loss)
    criterion("residual identity", fwd < 1e-12 and val < 1e-8,
              f"first forward vs Z_CVE {fwd:.1e}, epoch-0 val gap {val:.1e}")


@pytest.mark.slow
def test_tiny_synthetic_learning(tiny_run, criterion):
    r1, r2 = tiny_run["r1"], tiny_run["r2"]
    epochs = r1.stop_epoch + r2.stop_epoch
    ok = (r1.best_val_loss < 0.15 and r2.best_val_loss <= r1.best_val_loss
          and epochs <= 200 and tiny_run["elapsed"] < 600)
    criterion("tiny-synthetic learning", ok,
              f"stage-1 best val {r1.best_val_loss:.6f}, stage-2 best val {r2.best_val_loss:.6f}, "
              f"{epochs} epochs, {tiny_run['elapsed']:.0f}s")


@pytest.mark.slow
def test_tiny_synthetic_beats_ols(tiny_run, criterion):
    data = tiny_run["data"]
    ols = mse(ols_forecast(data.train, data.val[0]), data.val[1])
    cvtn = tiny_run["r2"].best_val_loss
    criterion("tiny-synthetic beats per-variable OLS", cvtn < ols,
              f"CVTN val {cvtn:.6f} vs OLS val {ols:.6f}")


@pytest.mark.slow
def test_masking_diagnostic(tmp_path, criterion):
    cfg = ExperimentConfig(horizons=(96,), seeds=(0,), epochs_stage1=5, epochs_stage2=2,
                           mask_fraction=0.5, dataset_name="lagged_pair", out=str(tmp_path / "mask"))
    out, failures = run_experiment(cfg, lagged_pair())
    path = out / "masking.csv"
    text = path.read_text() if path.exists() else ""
    factor = ""
    if text:
        header, row = text.splitlines()[:2]
        factor = dict(zip(header.split(","), row.split(",")))["cve_degradation"]
    criterion("masking diagnostic emitted", not failures and bool(factor),
              f"CVE-only MSE x{float(factor):.2f} with 50% of history masked" if factor else "no masking.csv")


@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get("CVTN_ETTH1_CSV"), reason="set CVTN_ETTH1_CSV to an ETTh1 CSV to run")
def test_etth1_long_run(tmp_path, criterion):
    cfg = ExperimentConfig(data=os.environ["CVTN_ETTH1_CSV"], splits="ett-months", horizons=(96,),
                           seeds=(0,), out=str(tmp_path / "etth1"))
    out, failures = run_experiment(cfg)
    rows = (out / "metrics.csv").read_text().splitlines()
    test_mse = float(dict(zip(rows[0].split(","), rows[1].split(",")))["mse"]) if len(rows) > 1 else float("nan")
    criterion("ETTh1 O=96 within 20% of 0.386", not failures and abs(test_mse - 0.386) <= 0.2 * 0.386,
              f"test MSE {test_mse:.4f}")
