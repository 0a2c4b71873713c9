"""Working nuisance models and the theta-profiled nuisance fit."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.special import expit

from .core import Dataset, EtaParams, ModelSpec, NuisanceValues, Theta, _outcome_core
from .errors import ConvergenceError, RankDeficiencyError

EXP_CLAMP = 700.0
RHO_FLOOR = 1e-6
NUISANCE_TOL = 1e-10
MAX_ITER = 100
MAX_HALVINGS = 20
SEPARATION_LOGIT = 35.0  # |logit| beyond this puts pi within 1e-15 of 0 or 1


def _linear(x, coef):
    return x @ np.asarray(coef, dtype=np.float64)


def _exp_clamped(lin):
    over = np.abs(lin) > EXP_CLAMP
    if over.any():
        warnings.warn("linear predictor clamped before exp()", RuntimeWarning, stacklevel=3)
        lin = np.clip(lin, -EXP_CLAMP, EXP_CLAMP)
    return np.exp(lin), bool(over.any())


def eval_nuisances(eta: EtaParams, data: Dataset, spec: ModelSpec) -> NuisanceValues:
    xp, xg, xr, xh = spec.designs(data.x)
    lin_pi = _linear(xp, eta.eta1)
    pi = expit(lin_pi) if spec.pi_link == "logistic" else lin_pi
    overflow = False
    lin_rho = _linear(xr, eta.eta3)
    if eta.rho_link == "log":
        rho, overflow = _exp_clamped(lin_rho)
    else:
        rho = lin_rho
    return NuisanceValues(pi, _linear(xg, eta.eta2), rho, _linear(xh, eta.eta4), overflow)


def least_squares(x, target, what="design"):
    coef, _, rank, _ = np.linalg.lstsq(x, target, rcond=None)
    if rank < x.shape[1]:
        raise RankDeficiencyError(f"{what} is rank deficient (rank {rank} < {x.shape[1]})")
    return coef


def fit_logistic(x, a, init=None, tol=NUISANCE_TOL, max_iter=MAX_ITER):
    """Damped Newton for the logistic MLE; stops on mean-score max-norm <= tol.

    Under (quasi-)separation the score vanishes only as the coefficients
    diverge; a fitted |logit| above ``SEPARATION_LOGIT`` is reported as
    non-convergence because pi(X) then violates positivity.
    """
    n, k = x.shape
    if np.linalg.matrix_rank(x) < k:
        raise RankDeficiencyError("propensity design is rank deficient")
    coef = np.zeros(k) if init is None else np.array(init, dtype=np.float64)

    def loglik(c):
        lin = x @ c
        return np.sum(a * lin - np.logaddexp(0.0, lin))

    for _ in range(max_iter):
        p = expit(x @ coef)
        score = x.T @ (a - p) / n
        if np.max(np.abs(score)) <= tol:
            if np.max(np.abs(x @ coef)) > SEPARATION_LOGIT:
                raise ConvergenceError("propensity fit diverges: exposure is separated by covariates")
            return coef
        info = (x * (p * (1.0 - p))[:, None]).T @ x / n
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError("singular logistic information matrix") from exc
        ll0 = loglik(coef)
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = coef + t * step
            if loglik(cand) >= ll0:
                break
            t *= 0.5
        coef = cand
    raise ConvergenceError(f"logistic fit did not converge in {max_iter} iterations")


def _rho_objective(x, prod, c):
    lin = np.clip(x @ c, -EXP_CLAMP, EXP_CLAMP)
    return 0.5 * np.sum((prod - np.exp(lin)) ** 2)


def fit_rho_log(x, prod, init, tol=NUISANCE_TOL, max_iter=MAX_ITER):
    """Solve mean(rho * x * (prod - rho)) = 0 for rho = exp(x'c).

    The roots are stationary points of the least-squares criterion
    sum (prod - exp(x'c))^2; Newton is used when its Hessian is positive
    definite, Gauss-Newton otherwise, with step halving on the criterion.
    """
    n, k = x.shape
    coef = np.array(init, dtype=np.float64)
    for _ in range(max_iter):
        rho = np.exp(np.clip(x @ coef, -EXP_CLAMP, EXP_CLAMP))
        score = x.T @ (rho * (prod - rho)) / n
        if np.max(np.abs(score)) <= tol:
            return coef
        hess = (x * (rho * (2.0 * rho - prod))[:, None]).T @ x / n
        try:
            np.linalg.cholesky(hess)
        except np.linalg.LinAlgError:
            hess = (x * (rho * rho)[:, None]).T @ x / n
        try:
            step = np.linalg.solve(hess, score)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError("singular information in the rho fit") from exc
        q0 = _rho_objective(x, prod, coef)
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = coef + t * step
            if _rho_objective(x, prod, cand) <= q0:
                break
            t *= 0.5
        coef = cand
    raise ConvergenceError(f"rho fit did not converge in {max_iter} iterations")


def _intercept_index(x):
    hits = np.flatnonzero(np.all(x == 1.0, axis=0))
    return int(hits[0]) if hits.size else None


def rho_start(x, prod):
    """Starting value for the log-link rho fit, or None when the mean product is not positive."""
    mean_prod = float(np.mean(prod))
    if mean_prod <= 0.0:
        return None
    coef = np.zeros(x.shape[1])
    j = _intercept_index(x)
    if j is not None:
        coef[j] = np.log(max(RHO_FLOOR, mean_prod))
    return coef


def outcome_residual_base(data: Dataset, theta: Theta):
    return _outcome_core(data.y, data.a, data.m, theta) - theta.theta2 * data.a


def fit_eta_profile(data: Dataset, theta: Theta, spec: ModelSpec, init: EtaParams | None = None):
    """Nuisance coefficients solving the empirical gamma equations at fixed theta.

    Blocks are fitted in the order eta1, eta2, eta4, eta3. If the log link is
    requested for rho but the mean residual product is not positive, the fit
    falls back to the identity link and records it in ``rho_link``.
    """
    spec.check(data)
    xp, xg, xr, xh = spec.designs(data.x)
    a = data.a
    if spec.pi_link == "logistic":
        eta1 = fit_logistic(xp, a, init=None if init is None else init.eta1)
    else:
        eta1 = least_squares(xp, a, "propensity design")
    base_y = outcome_residual_base(data, theta)
    eta2 = least_squares(xg, base_y, "outcome design")
    base_m = data.m - theta.theta3 * a
    eta4 = least_squares(xh, base_m, "mediator design")
    prod = (base_m - xh @ eta4) * (base_y - xg @ eta2)
    rho_link = spec.rho_link
    if rho_link == "log":
        start = None
        if init is not None and init.rho_link == "log":
            start = init.eta3
        if start is None:
            start = rho_start(xr, prod)
        if start is None:
            warnings.warn(
                "mean residual product is not positive; using the identity link for rho",
                RuntimeWarning,
                stacklevel=2,
            )
            rho_link = "identity"
        else:
            eta3 = fit_rho_log(xr, prod, start)
    if rho_link == "identity":
        eta3 = least_squares(xr, prod, "rho design")
    return EtaParams(eta1, eta2, eta3, eta4, profiled_at=theta, rho_link=rho_link)
