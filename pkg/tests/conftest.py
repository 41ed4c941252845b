import numpy as np
import pytest

from oracles import central_difference, rel_error, sample_coordinates
from cvtn import tensor as T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def check_param_gradients(loss_fn, params, n_coords, rng, h=1e-5, tol=1e-4):
    """Compare tape gradients of ``loss_fn()`` w.r.t. ``params`` with central differences.

    ``loss_fn`` must build a fresh graph and return a scalar Tensor; ``params``
    maps names to requires-grad leaves. Returns the worst relative error.
    """
    for p in params.values():
        p.zero_grad()
    T.backward(loss_fn())
    analytic = {k: p.grad.copy() for k, p in params.items()}

    def value():
        with T.no_grad():
            return loss_fn().item()

    worst = 0.0
    for name, idx in sample_coordinates(params, n_coords, rng):
        num = central_difference(value, params[name].data, idx, h)
        err = rel_error(analytic[name][idx], num)
        worst = max(worst, err)
        assert err < tol, f"{name}{idx}: analytic {analytic[name][idx]:.6e} vs numeric {num:.6e}"
    return worst


@pytest.fixture
def gradcheck():
    return check_param_gradients


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """``criterion(name, ok, detail)`` prints one PASS/FAIL line and asserts ``ok``."""

    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else "")
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
