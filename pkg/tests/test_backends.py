import os
import subprocess
import sys

import numpy as np
import pytest

from netbooster.engine import GradientTape, backward, conv
from netbooster.engine import _conv_numpy
from netbooster.engine import autograd as ag
from netbooster.graph import desk_tnn, forward
from netbooster.oracle import TOLERANCE, oracle_conv, relative_error

ext = pytest.importorskip("netbooster.engine._conv_ext")

CASES = [
    # (n, cin, h, w, k, cout, stride, groups)
    (2, 3, 9, 9, 3, 4, 1, 1),
    (2, 4, 10, 8, 3, 6, 2, 2),
    (3, 8, 7, 7, 3, 8, 1, 8),
    (1, 6, 5, 5, 1, 6, 1, 6),
    (2, 5, 6, 6, 5, 3, 1, 1),
]


def _run(impl, fn, *args, threads=1):
    return getattr(impl, fn)(*args, threads)


@pytest.mark.parametrize("dtype", ["float64", "float32"])
@pytest.mark.parametrize("case", CASES)
def test_compiled_and_numpy_forward_agree(case, dtype):
    n, cin, h, w, k, cout, s, g = case
    rng = np.random.default_rng(0)
    x = rng.normal(size=(n, cin, h, w)).astype(dtype)
    kern = rng.normal(size=(k, k, cin // g, cout)).astype(dtype)
    ho, wo = (h - k) // s + 1, (w - k) // s + 1
    outs = []
    for impl in (ext, _conv_numpy):
        out = np.empty((n, cout, ho, wo), dtype=dtype)
        impl.conv_valid(x, kern, out, s, g, 1)
        outs.append(out)
    ref = oracle_conv(x, kern, stride=s, groups=g)
    assert relative_error(outs[0], ref) <= TOLERANCE[dtype]
    assert relative_error(outs[1], ref) <= TOLERANCE[dtype]


@pytest.mark.parametrize("case", CASES)
def test_compiled_and_numpy_gradients_agree(case):
    n, cin, h, w, k, cout, s, g = case
    rng = np.random.default_rng(1)
    x = rng.normal(size=(n, cin, h, w))
    kern = rng.normal(size=(k, k, cin // g, cout))
    ho, wo = (h - k) // s + 1, (w - k) // s + 1
    dy = rng.normal(size=(n, cout, ho, wo))
    dx = [np.zeros_like(x) for _ in range(2)]
    ext.conv_valid_grad_input(dy, kern, dx[0], s, g, 1)
    _conv_numpy.conv_valid_grad_input(dy, kern, dx[1], s, g, 1)
    assert relative_error(dx[0], dx[1]) <= 1e-12
    dk = [np.zeros((1,) + kern.shape) for _ in range(2)]
    ext.conv_valid_grad_kernel(dy, x, dk[0], s, g, 1)
    _conv_numpy.conv_valid_grad_kernel(dy, x, dk[1], s, g, 1)
    assert relative_error(dk[0], dk[1]) <= 1e-12


def _desk_step():
    m = desk_tnn(dtype="float32", seed=4)
    x = np.random.default_rng(2).normal(size=(16,) + m.input_shape).astype("float32")
    y = np.arange(16) % 10
    tape = GradientTape()
    loss = ag.cross_entropy(forward(m, x, tape), y, tape)
    return loss, backward(tape, np.ones((), np.float32))


@pytest.mark.skipif(conv.BACKEND != "ext", reason="compiled backend not active")
@pytest.mark.parametrize("threads", ["1", "3"])
def test_fixed_worker_count_is_deterministic(monkeypatch, threads):
    monkeypatch.setenv("NETBOOSTER_THREADS", threads)
    loss_a, ga = _desk_step()
    loss_b, gb = _desk_step()
    assert loss_a == loss_b
    assert all(np.array_equal(ga[k], gb[k]) for k in ga)


@pytest.mark.skipif(conv.BACKEND != "ext", reason="compiled backend not active")
def test_worker_counts_agree_within_rounding(monkeypatch):
    monkeypatch.setenv("NETBOOSTER_THREADS", "1")
    _, g1 = _desk_step()
    monkeypatch.setenv("NETBOOSTER_THREADS", "4")
    _, g4 = _desk_step()
    assert max(relative_error(g4[k], g1[k]) for k in g1) <= 1e-5


def test_backend_can_be_forced_to_numpy():
    env = dict(os.environ, NETBOOSTER_BACKEND="numpy")
    out = subprocess.run([sys.executable, "-c", "from netbooster.engine import BACKEND; print(BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_default_backend_is_compiled_when_built():
    assert conv.BACKEND == "ext"
