import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppoher import _pure, kernels

try:
    from ppoher import _core
except ImportError:  # extension not built
    _core = None

needs_core = pytest.mark.skipif(_core is None, reason="compiled extension not built")


def random_net(rng, sizes):
    ws = [np.ascontiguousarray(rng.normal(size=(o, i))) for i, o in zip(sizes[:-1], sizes[1:])]
    bs = [rng.normal(size=o) for o in sizes[1:]]
    return ws, bs


def test_backend_flag():
    assert kernels.BACKEND in ("cython", "python")
    if _core is not None:
        assert kernels.BACKEND == "cython"


def test_pure_python_env_var_forces_fallback():
    env = dict(os.environ, PPOHER_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "from ppoher import kernels; print(kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"


def test_pure_mlp_matches_manual():
    rng = np.random.default_rng(0)
    ws, bs = random_net(rng, [4, 6, 2])
    x = rng.normal(size=4)
    expect = ws[1] @ np.tanh(ws[0] @ x + bs[0]) + bs[1]
    np.testing.assert_allclose(_pure.mlp_forward(ws, bs, x), expect, rtol=0, atol=1e-12)


def test_pure_move_clamped():
    pos = np.array([0.5, 9.5])
    disp = _pure.move_clamped(pos, np.array([-3.0, 0.2]), 10.0, 1.0)
    np.testing.assert_allclose(pos, [0.0, 9.7])
    np.testing.assert_allclose(disp, [-0.5, 0.2])


def test_pure_gae_single_step():
    adv = _pure.gae_episode(np.array([1.0]), np.array([0.25]), 7.0, False, 0.99, 0.95)
    assert adv.tolist() == [0.75]
    adv = _pure.gae_episode(np.array([0.0]), np.array([0.25]), 1.0, True, 0.5, 0.95)
    assert adv.tolist() == [0.25]


@pytest.mark.parametrize("mod", [_pure, _core] if _core is not None else [_pure])
def test_dimension_errors(mod):
    rng = np.random.default_rng(0)
    ws, bs = random_net(rng, [3, 4, 1])
    with pytest.raises(ValueError):
        mod.mlp_forward(ws, bs, np.zeros(5))
    with pytest.raises(ValueError):
        mod.move_clamped(np.zeros(3), np.zeros(2), 10.0, 1.0)


@needs_core
@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_in=st.integers(1, 12), n_out=st.integers(1, 6),
       depth=st.integers(0, 3))
def test_mlp_parity(seed, n_in, n_out, depth):
    rng = np.random.default_rng(seed)
    sizes = [n_in] + [int(rng.integers(1, 65)) for _ in range(depth)] + [n_out]
    ws, bs = random_net(rng, sizes)
    x = rng.normal(size=n_in)
    np.testing.assert_allclose(_core.mlp_forward(ws, bs, x), _pure.mlp_forward(ws, bs, x), rtol=0, atol=1e-12)


@needs_core
@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 8), limit=st.sampled_from([0.0, 1.0, 0.5]))
def test_move_parity(seed, d, limit):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0, 10, d)
    delta = rng.normal(scale=3, size=d)
    a, b = pos.copy(), pos.copy()
    da = _core.move_clamped(a, delta, 10.0, limit)
    db = _pure.move_clamped(b, delta, 10.0, limit)
    assert a.tobytes() == b.tobytes()
    np.testing.assert_allclose(da, db, rtol=0, atol=1e-12)
    assert _core.distance(a, pos) == pytest.approx(_pure.distance(a, pos), abs=1e-12)


@needs_core
@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 8))
def test_log_prob_parity(seed, d):
    rng = np.random.default_rng(seed)
    mean, log_std, act = rng.normal(size=d), rng.uniform(-5, 2, d), rng.normal(size=d)
    assert _core.gaussian_log_prob(mean, log_std, act) == pytest.approx(
        _pure.gaussian_log_prob(mean, log_std, act), abs=1e-12 * max(1.0, abs(_pure.gaussian_log_prob(mean, log_std, act))))


@needs_core
@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 40), bootstrap=st.booleans())
def test_gae_parity(seed, n, bootstrap):
    rng = np.random.default_rng(seed)
    r, v, last = rng.normal(size=n), rng.normal(size=n), float(rng.normal())
    np.testing.assert_allclose(
        _core.gae_episode(r, v, last, bootstrap, 0.99, 0.95),
        _pure.gae_episode(r, v, last, bootstrap, 0.99, 0.95),
        rtol=0, atol=1e-12,
    )
