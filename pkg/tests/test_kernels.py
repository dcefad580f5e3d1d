"""Compiled and pure-Python kernels must agree."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from groupfts import _backend
from groupfts._backend import python_kernels

BACKENDS = [pytest.param(python_kernels, id="python")]
if _backend.compiled_kernels is not None:
    BACKENDS.append(pytest.param(_backend.compiled_kernels, id="cython"))

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_backend_name():
    assert _backend.BACKEND in ("cython", "python")


@pytest.mark.parametrize("k", BACKENDS)
def test_pava_hand_case(k):
    out = k.pava(np.array([1.0, 3.0, 2.0]), np.ones(3))
    np.testing.assert_allclose(out, [1.0, 2.5, 2.5], atol=1e-15)


@pytest.mark.parametrize("k", BACKENDS)
def test_pava_weighted(k):
    # weighted pool of (3, w=1) and (1, w=3) is 1.5
    out = k.pava(np.array([3.0, 1.0]), np.array([1.0, 3.0]))
    np.testing.assert_allclose(out, [1.5, 1.5])


@pytest.mark.parametrize("k", BACKENDS)
@given(y=arrays(float, st.integers(1, 40), elements=finite))
def test_pava_monotone_and_idempotent(k, y):
    w = np.ones_like(y)
    out = k.pava(y, w)
    assert np.all(np.diff(out) >= -1e-9)
    np.testing.assert_allclose(k.pava(out, w), out, atol=1e-9)
    # projection preserves the weighted total
    assert abs(out.sum() - y.sum()) <= 1e-9 * (1 + np.abs(y).sum())


@pytest.mark.parametrize("k", BACKENDS)
def test_lag_crossprod_matches_loop(k, rng):
    x = rng.standard_normal((17, 5))
    xc = x - x.mean(axis=0)
    w = rng.uniform(size=17)
    expected = np.zeros((5, 5))
    for lag in range(1, 17):
        a = xc[:-lag].T @ xc[lag:]
        expected += w[lag] * (a + a.T)
    np.testing.assert_allclose(k.lag_weighted_crossprod(xc, w), expected, atol=1e-12)


@pytest.mark.parametrize("k", BACKENDS)
def test_pentadiagonal_solve(k, rng):
    from groupfts.curves import _second_difference_penalty

    p = 12
    a = np.eye(p) + 3.0 * _second_difference_penalty(p)[0]
    rhs = rng.standard_normal(p)
    d0 = np.diag(a).copy()
    d1 = np.diag(a, 1).copy()
    d2 = np.diag(a, 2).copy()
    np.testing.assert_allclose(k.solve_pentadiagonal(d0, d1, d2, rhs), np.linalg.solve(a, rhs), atol=1e-10)


@pytest.mark.parametrize("k", BACKENDS)
@pytest.mark.parametrize("order", [1, 2, 4])
def test_ar_fit_matches_lstsq(k, order, rng):
    z = rng.standard_normal(50)
    coef, rss = k.ar_fit(z, order, 4)
    x = np.column_stack([z[order - j - 1 : z.size - j - 1] for j in range(order)])
    ref = np.linalg.lstsq(x, z[order:], rcond=None)[0]
    np.testing.assert_allclose(coef, ref, atol=1e-10)
    resid = z[4:] - np.column_stack([z[4 - j - 1 : z.size - j - 1] for j in range(order)]) @ ref
    assert rss == pytest.approx(float(resid @ resid), rel=1e-10)


@pytest.mark.skipif(_backend.compiled_kernels is None, reason="compiled extension not built")
@given(y=arrays(float, st.integers(2, 30), elements=finite), seed=st.integers(0, 1000))
def test_backends_agree(y, seed):
    c, p = _backend.compiled_kernels, python_kernels
    w = np.random.default_rng(seed).uniform(0.1, 2.0, y.size)
    np.testing.assert_allclose(c.pava(y, w), p.pava(y, w), rtol=1e-12, atol=1e-9)
    x = np.column_stack([y, y[::-1]])
    xc = x - x.mean(axis=0)
    np.testing.assert_allclose(
        c.lag_weighted_crossprod(xc, w), p.lag_weighted_crossprod(xc, w), rtol=1e-10, atol=1e-6
    )


def test_fallback_selected_by_environment():
    import os
    import subprocess
    import sys

    code = (
        "import numpy as np, groupfts\n"
        "from groupfts.data import simulate_curves\n"
        "from groupfts.forecast import forecast_curves\n"
        "f, _, _ = simulate_curves(30, 12, 2, rng=1)\n"
        "c = forecast_curves(f, 'dynamic', horizon=5).curves\n"
        "print(groupfts.BACKEND, repr(float(c.sum())))\n"
    )
    out = {}
    for name in ("python", "auto"):
        env = dict(os.environ, GROUPFTS_BACKEND=name)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, total = res.stdout.split()
        out[name] = (backend, float(total))
    assert out["python"][0] == "python"
    assert out["auto"][0] in ("cython", "python")
    assert out["python"][1] == pytest.approx(out["auto"][1], rel=1e-9)
