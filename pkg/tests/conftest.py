"""Shared fixtures: noiseless exact-fit data and seeded DGP samples."""

import numpy as np
import pytest

from medrobust import Dataset, DgpConfig, ModelSpec, generate_dataset
from medrobust.nuisance import fit_logistic
from medrobust.rng import replicate_rng

THETA_TRUE = (2.0, 1.0, 1.5)


def noiseless_data(n=400, zeta=0.0, seed=11):
    """Exact-fit data without latent confounding.

    Y = 1 + A + 2M + zeta A M exactly and M = 1 + 1.5A + X1 + e. The mediator
    noise e is heteroskedastic in (A, X1), which identifies the bilinear
    moment, and is projected off (1, X1, X2, A, pi_hat, pi_hat A) so every
    estimator's empirical moments vanish at the true theta. The mediator-outcome
    covariance is identically zero, so rho uses the identity link.
    """
    rng = np.random.default_rng(seed)
    x1, x2 = rng.standard_normal((2, n))
    x = np.column_stack([np.ones(n), x1, x2])
    a = (rng.random(n) < 1 / (1 + np.exp(1 - 1.5 * x1 + 0.3 * x2))).astype(float)
    pi_hat = 1 / (1 + np.exp(-x @ fit_logistic(x, a)))
    e = rng.standard_normal(n) * np.sqrt(0.2 + 2.0 * a + np.exp(x1))
    basis = np.column_stack([x, a, pi_hat, pi_hat * a])
    e = e - basis @ np.linalg.lstsq(basis, e, rcond=None)[0]
    m = 1 + 1.5 * a + x1 + e
    y = 1 + a + 2 * m + zeta * a * m
    return Dataset(y, a, m, x, ("const", "x1", "x2"))


def noiseless_spec():
    return ModelSpec((0, 1, 2), (0, 1, 2), (0, 1, 2), (0, 1, 2), rho_link="identity")


def dgp_sample(n, seed=0, index=0, **kw):
    cfg = DgpConfig(n=n, **kw)
    data, latent = generate_dataset(cfg, replicate_rng(seed, index, "tests"))
    return cfg, data, latent


@pytest.fixture(scope="session")
def noiseless():
    return noiseless_data(), noiseless_spec()


@pytest.fixture(scope="session")
def noiseless_int():
    return noiseless_data(zeta=0.5), noiseless_spec()


@pytest.fixture(scope="session")
def big_draw():
    """10^6 rows of the default DGP with the latent record."""
    return dgp_sample(1_000_000, seed=7)


@pytest.fixture(scope="session")
def sample800():
    cfg, data, _ = dgp_sample(800, seed=3)
    return data, ModelSpec.default(data.p)


# acceptance results, printed one line per criterion at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
