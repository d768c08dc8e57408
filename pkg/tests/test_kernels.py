import os
import subprocess
import sys

import numpy as np
import pytest

from mirake import _kernels


@pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")
@pytest.mark.parametrize("exclude_self", [False, True])
def test_nw_numba_matches_numpy(exclude_self):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(700)
    y = rng.standard_normal(700)
    ref = _kernels._nw_sums_numpy(x, x, y, 0.3, exclude_self)
    got = _kernels._nw_self_numba(x, y, 0.3, 0.0 if exclude_self else 1.0)
    other = _kernels._nw_sums_numba(x, x, y, 0.3, exclude_self)
    for a, b, c in zip(ref, got, other):
        np.testing.assert_allclose(b, a, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(c, a, rtol=1e-12, atol=1e-12)


@pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")
def test_em_numba_matches_numpy():
    rng = np.random.default_rng(1)
    y = rng.standard_normal(300)
    support = np.sort(rng.standard_normal(40))
    logq = np.log(rng.dirichlet(np.ones(40)))
    ref = _kernels._em_estep_numpy(y, support, logq, 0.1, 0.9, 1.2)
    got = _kernels._em_estep_numba(y, support, logq, 0.1, 0.9, 1.2)
    assert got[0] == pytest.approx(ref[0], rel=1e-12)
    np.testing.assert_allclose(got[1], ref[1], rtol=1e-10)
    np.testing.assert_allclose(got[2], ref[2], rtol=1e-10, atol=1e-12)


def test_env_var_disables_numba():
    code = "from mirake import _kernels; print(_kernels.USE_NUMBA)"
    env = dict(os.environ, MIRAKE_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"


def test_numpy_path_end_to_end():
    code = (
        "import numpy as np\n"
        "from mirake.diagnostics import kernel_regression\n"
        "x = np.linspace(-1, 1, 50); y = x ** 2\n"
        "print(repr(float(kernel_regression(x, y, 0.2).fitted.sum())))\n"
    )
    env = dict(os.environ, MIRAKE_DISABLE_NUMBA="1")
    slow = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    from mirake.diagnostics import kernel_regression

    x = np.linspace(-1, 1, 50)
    fast = kernel_regression(x, x**2, 0.2).fitted.sum()
    assert float(slow.stdout) == pytest.approx(fast, rel=1e-12)
