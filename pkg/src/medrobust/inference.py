"""Variance estimation, Wald intervals and the Breusch-Pagan diagnostic."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .core import Dataset, EffectReport, ModelSpec, Theta, effect_gradients, effects_from_theta
from .errors import (
    ConvergenceError,
    InputError,
    MedRobustError,
    NegativeVarianceError,
    WeakIdentificationError,
)
from .estimators import SolveOptions, SolveResult, solve
from .nuisance import least_squares
from .rng import chunked, parallel_map, replicate_rng, resolve_threads
from .systems import MomentSystem

THETA_LABELS = ("theta1", "theta2", "theta3")
BOOT_MAX_DROP = 0.05


@dataclass(eq=False)
class CovMatrix:
    """Covariance of an estimator (already divided by n)."""

    matrix: np.ndarray
    labels: tuple
    n: int
    dropped: int = 0

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.labels = tuple(self.labels)
        k = len(self.labels)
        if self.matrix.shape != (k, k):
            raise InputError(f"covariance shape {self.matrix.shape} does not match {k} labels")

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def sub(self, labels) -> np.ndarray:
        idx = [self.index(lab) for lab in labels]
        return self.matrix[np.ix_(idx, idx)]

    def se(self, label: str) -> float:
        return float(np.sqrt(self.matrix[self.index(label), self.index(label)]))


@dataclass(frozen=True)
class BPResult:
    statistic: float
    df: int
    p_value: float
    studentized: bool = False


def _system_for(data: Dataset, result: SolveResult, spec: ModelSpec | None):
    if result.system is not None and result.system.data is data:
        return result.system
    use = result.spec if result.spec is not None else spec
    weights = None
    if result.estimator == "MR_INT" and result.system is not None:
        from .systems import InteractionWeights

        w = result.system.weights
        weights = InteractionWeights(builder=lambda _d, w=w: w)
    return MomentSystem(result.estimator, data, use, weights)


def _require_converged(result: SolveResult):
    if not result.converged:
        raise InputError("sandwich variance needs a converged fit")


def stacked_sandwich(system: MomentSystem, beta, jacobian: str = "analytic") -> np.ndarray:
    """Full (theta, eta) M-estimation sandwich J^-1 (G'G/n) J^-T / n."""
    G, J = system.evaluate(beta)
    if jacobian != "analytic":
        J = system.jacobian(beta, jacobian)
    n = G.shape[0]
    meat = G.T @ G / n
    try:
        left = np.linalg.solve(J, meat)
        cov = np.linalg.solve(J, left.T).T / n
    except np.linalg.LinAlgError as exc:
        raise WeakIdentificationError("singular bread in sandwich variance") from exc
    return 0.5 * (cov + cov.T)


def sandwich_cov(data: Dataset, result: SolveResult, spec: ModelSpec | None = None,
                 jacobian: str = "analytic", full: bool = False) -> CovMatrix:
    """Theta-block of the stacked sandwich (or the whole matrix with ``full``)."""
    _require_converged(result)
    system = _system_for(data, result, spec)
    cov = stacked_sandwich(system, result.params, jacobian)
    names = system.param_names
    if full:
        return CovMatrix(cov, names, data.n)
    t = system.theta_slice
    return CovMatrix(cov[t, t], names[t], data.n)


def lemma_cov(data: Dataset, result: SolveResult, spec: ModelSpec | None = None,
              jacobian: str = "analytic") -> CovMatrix:
    """Theta covariance assembled from the nuisance-corrected moments.

    Phi = phi~ - E[dphi~/deta] E[dgamma/deta]^-1 gamma, with bread
    E[dPhi/dtheta]; independent of the block-inverse route in ``sandwich_cov``.
    """
    _require_converged(result)
    system = _system_for(data, result, spec)
    G, J = system.evaluate(result.params)
    if jacobian != "analytic":
        J = system.jacobian(result.params, jacobian)
    k = system.theta_dim
    phi, gam = G[:, :k], G[:, k:]
    J_te, J_ee = J[:k, k:], J[k:, k:]
    proj = np.linalg.solve(J_ee.T, J_te.T).T  # E[dphi/deta] E[dgamma/deta]^-1
    big_phi = phi - gam @ proj.T
    bread = J[:k, :k] - proj @ J[k:, :k]
    n = G.shape[0]
    inv = np.linalg.inv(bread)
    sigma = inv @ (big_phi.T @ big_phi / n) @ inv.T
    cov = sigma / n
    return CovMatrix(0.5 * (cov + cov.T), system.param_names[:k], n)


def delta_nie(theta: Theta, cov: CovMatrix) -> float:
    """Delta-method standard error of theta1 * theta3."""
    grad = np.array([theta.theta3, 0.0, theta.theta1])
    var = float(grad @ cov.sub(THETA_LABELS) @ grad)
    if var < 0:
        raise NegativeVarianceError(f"negative delta-method variance {var:.3g}")
    return float(np.sqrt(var))


def wald_ci(estimate: float, se: float, level: float = 0.95):
    if not 0 < level < 1:
        raise InputError("level must lie in (0, 1)")
    if se < 0:
        raise InputError("standard error must be non-negative")
    half = stats.norm.ppf(0.5 + level / 2.0) * se
    return (estimate - half, estimate + half)


def _boot_params(result: SolveResult):
    params = list(result.theta.as_array())
    if "mean_h_star" in result.extras:
        params.append(result.extras["mean_h_star"])
    return params


def _boot_labels(tag):
    if tag == "MR_INT":
        return THETA_LABELS + ("zeta", "mean_h_star")
    return THETA_LABELS


def _boot_chunk(args):
    data, tag, spec, seed, indices, opts, d_choice = args
    out = []
    for r in indices:
        rng = replicate_rng(seed, r, "bootstrap")
        idx = rng.integers(0, data.n, size=data.n)
        try:
            res = solve(tag, data.take(idx), spec, opts, d_choice=d_choice)
        except (MedRobustError, np.linalg.LinAlgError):
            out.append(None)
            continue
        out.append(_boot_params(res))
    return out


def bootstrap_draws(data: Dataset, estimator: str, spec: ModelSpec, B: int = 1000, seed: int = 0,
                    threads: int = 1, opts: SolveOptions = SolveOptions(), d_choice=None):
    """Re-estimates on B resamples; returns (draws, labels, dropped).

    Resample r uses ``replicate_rng(seed, r, "bootstrap")`` so the draws do not
    depend on ``threads``. Failed fits are dropped and counted; more than 5%
    dropped is an error.
    """
    if B < 100:
        raise InputError("bootstrap needs B >= 100")
    workers = resolve_threads(threads)
    parts = chunked(range(B), workers * 4 if workers > 1 else 1)
    jobs = [(data, estimator, spec, seed, part, opts, d_choice) for part in parts]
    rows = [row for chunk in parallel_map(_boot_chunk, jobs, workers) for row in chunk]
    kept = np.array([row for row in rows if row is not None], dtype=np.float64)
    dropped = B - len(kept)
    if dropped > BOOT_MAX_DROP * B:
        raise ConvergenceError(f"{dropped} of {B} bootstrap replicates failed")
    return kept, _boot_labels(estimator), dropped


def bootstrap_cov(data: Dataset, estimator: str, spec: ModelSpec, B: int = 1000, seed: int = 0,
                  threads: int = 1, opts: SolveOptions = SolveOptions(), d_choice=None) -> CovMatrix:
    """Covariance of B nonparametric bootstrap re-estimates (see ``bootstrap_draws``)."""
    kept, labels, dropped = bootstrap_draws(data, estimator, spec, B, seed, threads, opts, d_choice)
    cov = np.cov(kept, rowvar=False, ddof=1)
    return CovMatrix(np.atleast_2d(cov), labels, data.n, dropped)


def chi2_sf(statistic: float, df: int) -> float:
    return float(stats.chi2.sf(statistic, df))


def breusch_pagan(data: Dataset, spec: ModelSpec, studentize: bool = False) -> BPResult:
    """Breusch-Pagan test of var(M | A, X) against the mediator mean regressors.

    The mediator is regressed on (A, h-design); the squared residuals are
    regressed on the same columns. The classic statistic is half the explained
    sum of squares of u^2 / mean(u^2); ``studentize`` gives Koenker's n R^2.
    """
    spec.check(data)
    xh = data.x[:, list(spec.h_cols)]
    z = np.column_stack([data.a, xh])
    coef = least_squares(z, data.m, "mediator mean regression")
    u2 = (data.m - z @ coef) ** 2
    n = data.n
    df = int(sum(np.ptp(z[:, j]) > 0 for j in range(z.shape[1])))
    if df < 1:
        raise InputError("Breusch-Pagan test needs at least one non-constant regressor")
    sigma2 = u2.mean()
    if sigma2 == 0:
        return BPResult(0.0, df, 1.0, studentize)
    w = u2 / sigma2
    fitted = z @ least_squares(z, w, "auxiliary regression")
    ess = float(np.sum((fitted - w.mean()) ** 2))
    tss = float(np.sum((w - w.mean()) ** 2))
    if studentize:
        stat = n * ess / tss if tss > 0 else 0.0
    else:
        stat = 0.5 * ess
    stat = max(stat, 0.0)
    return BPResult(stat, df, chi2_sf(stat, df), studentize)


@dataclass
class VarianceConfig:
    kind: str = "sandwich"
    B: int = 1000
    seed: int = 0
    threads: int = 1
    jacobian: str = "analytic"
    opts: SolveOptions = field(default_factory=SolveOptions)

    def __post_init__(self):
        if self.kind not in ("sandwich", "bootstrap"):
            raise InputError("variance kind must be 'sandwich' or 'bootstrap'")


def effect_report(data: Dataset, result: SolveResult, contrast=(0.0, 1.0), ci_level: float = 0.95,
                  variance: VarianceConfig | None = None, d_choice=None) -> EffectReport:
    """NDE/NIE with standard errors and Wald intervals for one fitted estimator."""
    variance = variance or VarianceConfig()
    theta = result.theta
    mean_h = result.extras.get("mean_h_star")
    nde, nie = effects_from_theta(theta, contrast, mean_h)
    g_nde, g_nie = effect_gradients(theta, contrast, mean_h)
    if theta.zeta is None:
        labels = THETA_LABELS
    else:
        labels = THETA_LABELS + ("zeta", "mean_h_star")
    if variance.kind == "sandwich":
        cov = sandwich_cov(data, result, jacobian=variance.jacobian, full=theta.zeta is not None)
    else:
        cov = bootstrap_cov(data, result.estimator, result.spec, variance.B, variance.seed,
                            variance.threads, variance.opts, d_choice)
    V = cov.sub(labels)
    var_nde = float(g_nde @ V @ g_nde)
    var_nie = float(g_nie @ V @ g_nie)
    if var_nde < 0 or var_nie < 0:
        raise NegativeVarianceError("negative effect variance")
    se_nde, se_nie = float(np.sqrt(var_nde)), float(np.sqrt(var_nie))
    diagnostics = {
        "converged": result.converged,
        "iterations": result.iterations,
        "final_residual": result.final_residual,
        "condition_estimate": result.condition_estimate,
        "rho_link": result.spec.rho_link if result.spec is not None else None,
    }
    if variance.kind == "bootstrap":
        diagnostics["bootstrap_B"] = variance.B
        diagnostics["bootstrap_dropped"] = cov.dropped
    if mean_h is not None:
        diagnostics["mean_h_star"] = mean_h
    return EffectReport(
        estimator=result.estimator,
        contrast=tuple(float(c) for c in contrast),
        nde=float(nde),
        nie=float(nie),
        se_nde=se_nde,
        se_nie=se_nie,
        ci_level=ci_level,
        ci_nde=wald_ci(nde, se_nde, ci_level),
        ci_nie=wald_ci(nie, se_nie, ci_level),
        variance_source=variance.kind,
        theta=theta,
        diagnostics=diagnostics,
    )
