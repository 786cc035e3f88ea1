import numpy as np
import pytest

from framp_sim.nn import ModelSpec, init_params
from framp_sim.prototypes import PrototypeSet


def central_fd(f, x, eps=1e-5, idx=None):
    """Central finite differences of scalar ``f`` at ``x`` (optionally only at ``idx``)."""
    x = np.array(x, dtype=np.float64)
    idx = range(len(x)) if idx is None else idx
    out = np.zeros_like(x)
    for i in idx:
        xp, xm = x.copy(), x.copy()
        xp[i] += eps
        xm[i] -= eps
        out[i] = (f(xp) - f(xm)) / (2 * eps)
    return out


def random_instance(rng, widths, activation="tanh", B=6, density=0.7):
    spec = ModelSpec(tuple(widths), activation)
    params = init_params(spec, int(rng.integers(1 << 30))) + 0.1 * rng.standard_normal(spec.d)
    mask = rng.random(spec.d) < density
    X = rng.standard_normal((B, spec.input_dim))
    y = rng.integers(0, spec.n_classes, size=B)
    protos = PrototypeSet(rng.standard_normal((spec.n_classes, spec.hidden_dim)), rng.random(spec.n_classes) < 0.8)
    return spec, params, mask, X, y, protos


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
