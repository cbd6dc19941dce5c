import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hurdle_imdl import _accel, kernels
from hurdle_imdl.verify import DEFAULT_THRESHOLDS

needs_numba = pytest.mark.skipif(not _accel.HAS_NUMBA, reason="numba not installed")


def sample(n, seed):
    rng = np.random.default_rng(seed)
    labels = np.where(rng.random(n) < 0.25, 0.0, np.exp(rng.normal(0.46, 1.28, n)))
    return rng, labels


@needs_numba
@pytest.mark.parametrize("flags", [(True, True, True), (True, True, False),
                                   (True, False, False), (False, True, True)])
def test_hurdle_nll_paths_agree(flags):
    rng, labels = sample(5000, 0)
    args = (labels, rng.normal(0, 3, 5000), rng.normal(0, 2, 5000), 0.5, 0.46, 1.28, 1e-7, *flags)
    for a, b in zip(kernels.hurdle_nll_numpy(*args), kernels.hurdle_nll_numba(*args)):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


@needs_numba
@given(st.integers(1, 400), st.integers(0, 2**32 - 1))
def test_graded_tallies_paths_agree(n, seed):
    rng, obs = sample(n, seed)
    ret = np.abs(obs + rng.normal(0, 2, n))
    th = np.asarray(DEFAULT_THRESHOLDS)
    a = kernels.graded_tallies_numpy(ret, obs, th)
    b = kernels.graded_tallies_numba(ret, obs, th)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    np.testing.assert_allclose(a[2], b[2], rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(a[3], b[3], rtol=1e-12, atol=1e-12)


@needs_numba
def test_gaussian_grid_paths_agree():
    rng = np.random.default_rng(3)
    s = rng.normal(0, 20, (40, 3))
    m = rng.normal(0, 20, (300, 3))
    np.testing.assert_allclose(kernels.gaussian_loglik_grid_numpy(s, m, 9.0),
                               kernels.gaussian_loglik_grid_numba(s, m, 9.0), rtol=1e-13)


def test_gaussian_grid_matches_scipy():
    from scipy import stats
    rng = np.random.default_rng(4)
    s, m = rng.normal(size=(5, 2)), rng.normal(size=(7, 2))
    ref = stats.norm.logpdf(s[:, None, :], m[None, :, :], 1.5).sum(-1)
    np.testing.assert_allclose(kernels.gaussian_loglik_grid(s, m, 1.5), ref, rtol=1e-13)


def test_env_flag_forces_numpy():
    code = "from hurdle_imdl import _accel; print(_accel.USE_NUMBA)"
    env = dict(os.environ, HURDLE_IMDL_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "False"
    env["HURDLE_IMDL_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == str(_accel.HAS_NUMBA)
