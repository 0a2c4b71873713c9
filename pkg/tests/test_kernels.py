"""Numba and numpy kernel backends agree; backend selection."""

import os
import subprocess
import sys

import numpy as np
import pytest

from medrobust import kernels, solve
from medrobust.kernels import _numba, _numpy


@pytest.fixture(scope="module")
def arrays(sample800):
    data, _ = sample800
    rng = np.random.default_rng(0)
    return data, rng


def _beta(rng, k):
    return 0.3 * rng.standard_normal(k)


class TestAgreement:
    @pytest.mark.parametrize("pi_logistic", [True, False])
    @pytest.mark.parametrize("rho_log", [True, False])
    def test_mr_system(self, arrays, pi_logistic, rho_log):
        data, rng = arrays
        x = data.x
        beta = _beta(rng, 3 + 4 * x.shape[1])
        if not pi_logistic:
            beta[3:6] = [0.4, 0.01, 0.01]
        args = (data.y, data.a, data.m, x, x, x, x, beta, pi_logistic, rho_log)
        ga, ja = _numpy.mr_system(*args)
        gb, jb = _numba.mr_system(*args)
        np.testing.assert_allclose(gb, ga, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(jb, ja, rtol=1e-10, atol=1e-12)

    @pytest.mark.parametrize("pi_logistic", [True, False])
    def test_ps_system(self, arrays, pi_logistic):
        data, rng = arrays
        x = data.x
        beta = _beta(rng, 3 + 2 * x.shape[1])
        if not pi_logistic:
            beta[3:6] = [0.4, 0.01, 0.01]
        args = (data.y, data.a, data.m, x, x, beta, pi_logistic)
        ga, ja = _numpy.ps_system(*args)
        gb, jb = _numba.ps_system(*args)
        np.testing.assert_allclose(gb, ga, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(jb, ja, rtol=1e-10, atol=1e-12)

    @pytest.mark.parametrize("tag", ["MR", "PS"])
    def test_same_root(self, sample800, tag):
        data, spec = sample800
        previous = kernels.set_backend("numpy")
        try:
            a = solve(tag, data, spec).theta.as_array()
            kernels.set_backend("numba")
            b = solve(tag, data, spec).theta.as_array()
        finally:
            kernels.set_backend(previous)
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


class TestSelection:
    def test_set_backend_returns_previous(self):
        first = kernels.get_backend()
        assert kernels.set_backend("numpy") == first
        assert kernels.get_backend() == "numpy"
        kernels.set_backend(first)

    def test_rejects_unknown(self):
        with pytest.raises(ValueError):
            kernels.set_backend("cuda")

    @pytest.mark.parametrize("flag,expected", [("numpy", "numpy"), ("NumPy", "numpy"),
                                               ("numba", "numba"), ("bogus", "numpy")])
    def test_environment_flag(self, flag, expected):
        env = dict(os.environ, MEDROBUST_BACKEND=flag)
        out = subprocess.run(
            [sys.executable, "-W", "ignore", "-c",
             "from medrobust import kernels; print(kernels.get_backend())"],
            env=env, capture_output=True, text=True, check=True)
        assert out.stdout.strip() == expected
