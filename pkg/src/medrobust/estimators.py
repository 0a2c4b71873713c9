"""Root-finding estimators for (theta1, theta2, theta3[, zeta]).

All estimators solve an exactly identified stacked system in (theta, eta) by
damped Newton. ``solve_bk`` is closed form and only uses the system for
its certificate and sandwich.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Dataset, EtaParams, ModelSpec, Theta
from .errors import (
    ConvergenceError,
    InputError,
    SingularJacobianError,
    WeakIdentificationError,
)
from .nuisance import fit_eta_profile, fit_logistic, least_squares, outcome_residual_base
from .systems import InteractionWeights, MomentSystem

WEAK_ID_RCOND = 1e-10
MAX_HALVINGS = 30


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-8
    max_iter: int = 100
    jacobian: str = "analytic"
    init: str = "bk"
    theta0: Optional[Theta] = None
    raise_on_failure: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise InputError("tol must be positive")
        if self.max_iter < 1:
            raise InputError("max_iter must be at least 1")
        if self.jacobian not in ("analytic", "central"):
            raise InputError("jacobian must be 'analytic' or 'central'")
        if self.init not in ("bk", "zeros", "user"):
            raise InputError("init must be 'bk', 'zeros' or 'user'")
        if self.init == "user" and self.theta0 is None:
            raise InputError("init='user' requires theta0")


@dataclass(eq=False)
class SolveResult:
    theta: Theta
    eta: EtaParams
    converged: bool
    iterations: int
    final_residual: float
    condition_estimate: float
    estimator: str = "MR"
    params: np.ndarray = field(default=None, repr=False)
    param_names: list = field(default_factory=list, repr=False)
    spec: Optional[ModelSpec] = None
    extras: dict = field(default_factory=dict)
    system: Optional[MomentSystem] = field(default=None, repr=False)


def bread_condition(J, theta_dim):
    """Reciprocal 2-norm condition number of the theta bread.

    The bread is the Schur complement of the nuisance block, i.e. the Jacobian
    of the nuisance-corrected moments with respect to theta.
    """
    t = slice(0, theta_dim)
    e = slice(theta_dim, J.shape[0])
    if J.shape[0] > theta_dim:
        try:
            corr = J[t, e] @ np.linalg.solve(J[e, e], J[e, t])
        except np.linalg.LinAlgError:
            return 0.0
        bread = J[t, t] - corr
    else:
        bread = J
    s = np.linalg.svd(bread, compute_uv=False)
    if s[0] == 0 or not np.all(np.isfinite(s)):
        return 0.0
    return float(s[-1] / s[0])


def newton_solve(system: MomentSystem, beta0, opts: SolveOptions):
    """Damped Newton on the mean moments; returns (beta, converged, iterations, residual)."""
    beta = np.array(beta0, dtype=np.float64)
    G, J = system.evaluate(beta)
    f = G.mean(axis=0)
    norm = float(np.max(np.abs(f)))
    it = 0
    while norm > opts.tol and it < opts.max_iter:
        it += 1
        if opts.jacobian == "central":
            J = system.jacobian(beta, "central")
        try:
            step = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobianError(f"{system.kind}: singular stacked Jacobian") from exc
        if not np.all(np.isfinite(step)):
            raise SingularJacobianError(f"{system.kind}: non-finite Newton step")
        with np.errstate(over="ignore"):
            l2 = float(f @ f)
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = beta + t * step
            with np.errstate(over="ignore", invalid="ignore"):
                G_c, J_c = system.evaluate(cand)
                f_c = G_c.mean(axis=0)
            if np.all(np.isfinite(f_c)) and np.all(np.isfinite(J_c)):
                n_c = float(np.max(np.abs(f_c)))
                with np.errstate(over="ignore"):
                    l2_c = float(np.sum(f_c * f_c))
                if n_c < norm or l2_c < l2:
                    break
            t *= 0.5
        else:
            break
        beta, G, J, f, norm = cand, G_c, J_c, f_c, n_c
    return beta, norm <= opts.tol, it, norm


def _finish(system, beta, converged, it, norm, opts, J=None):
    theta, eta, extras = system.unpack(beta)
    if J is None:
        J = system.jacobian(beta, opts.jacobian)
    rcond = bread_condition(J, system.theta_dim)
    result = SolveResult(
        theta=theta,
        eta=eta,
        converged=bool(converged),
        iterations=it,
        final_residual=float(norm),
        condition_estimate=rcond,
        estimator=system.kind,
        params=beta,
        param_names=system.param_names,
        spec=system.spec,
        extras=extras,
        system=system,
    )
    if not converged and opts.raise_on_failure:
        raise ConvergenceError(
            f"{system.kind} did not converge: max-norm {norm:.3g} after {it} iterations",
            result,
        )
    if converged and rcond < WEAK_ID_RCOND:
        raise WeakIdentificationError(
            f"{system.kind}: bread matrix is near-singular (rcond={rcond:.2e}); "
            "var(M | A, X) may not depend on the exposure",
            rcond,
        )
    return result


def _bk_theta(data: Dataset, spec: ModelSpec):
    xg = data.x[:, list(spec.g_cols)]
    xh = data.x[:, list(spec.h_cols)]
    coef_y = least_squares(np.column_stack([data.m, data.a, xg]), data.y, "outcome regression")
    coef_m = least_squares(np.column_stack([data.a, xh]), data.m, "mediator regression")
    return Theta(coef_y[0], coef_y[1], coef_m[0]), coef_y[2:], coef_m[1:]


def _start_theta(data, spec, opts, interaction=False):
    if opts.init == "user":
        t = opts.theta0
    elif opts.init == "zeros":
        t = Theta(0.0, 0.0, 0.0)
    else:
        t = _bk_theta(data, spec)[0]
    if interaction and t.zeta is None:
        t = Theta(t.theta1, t.theta2, t.theta3, 0.0)
    if not interaction and t.zeta is not None:
        t = Theta(t.theta1, t.theta2, t.theta3)
    return t


def _profiled_start(data, spec, theta):
    # a log-link fallback is recorded on the returned spec
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        eta = fit_eta_profile(data, theta, spec)
    if eta.rho_link != spec.rho_link:
        spec = spec.replace(rho_link=eta.rho_link)
    return spec, eta


def _augmented_solve(kind, data, spec, opts, weights=None):
    """Solve an augmented system, staging through an identity-link rho.

    Least-squares warm starts leave the mean residual product at zero, which
    gives no usable starting value for a log-link rho. The identity-link
    system is solved first; the log-link fit then starts from that theta.
    """
    theta0 = _start_theta(data, spec, opts, interaction=kind == "MR_INT")
    if spec.rho_link == "log":
        lin_spec = spec.replace(rho_link="identity")
        _, eta0 = _profiled_start(data, lin_spec, theta0)
        system = MomentSystem(kind, data, lin_spec, weights)
        beta, ok, _, _ = newton_solve(system, system.pack(theta0, eta0), opts)
        if ok:
            theta0 = system.unpack(beta)[0]
    spec, eta0 = _profiled_start(data, spec, theta0)
    system = MomentSystem(kind, data, spec, weights)
    beta, ok, it, norm = newton_solve(system, system.pack(theta0, eta0), opts)
    return _finish(system, beta, ok, it, norm, opts)


def solve_mr(data: Dataset, spec: ModelSpec, opts: SolveOptions = SolveOptions()) -> SolveResult:
    """Multiply robust augmented G-estimator."""
    return _augmented_solve("MR", data, spec, opts)


def solve_ps(data: Dataset, spec: ModelSpec, opts: SolveOptions = SolveOptions()) -> SolveResult:
    """Propensity-score estimator: unaugmented {A - pi} psi moments, all three components."""
    theta0 = _start_theta(data, spec, opts)
    system = MomentSystem("PS", data, spec)
    xp, _, _, xh = spec.designs(data.x)
    if spec.pi_link == "logistic":
        eta1 = fit_logistic(xp, data.a)
    else:
        eta1 = least_squares(xp, data.a, "propensity design")
    eta4 = least_squares(xh, data.m - theta0.theta3 * data.a, "mediator design")
    empty = np.empty(0)
    beta0 = system.pack(theta0, EtaParams(eta1, empty, empty, eta4))
    beta, ok, it, norm = newton_solve(system, beta0, opts)
    return _finish(system, beta, ok, it, norm, opts)


def solve_hines(data: Dataset, spec: ModelSpec, opts: SolveOptions = SolveOptions()) -> SolveResult:
    """Augmented G-estimator valid only without unmeasured M-Y confounding."""
    theta0 = _start_theta(data, spec, opts)
    system = MomentSystem("HINES", data, spec)
    xp, xg, _, xh = spec.designs(data.x)
    if spec.pi_link == "logistic":
        eta1 = fit_logistic(xp, data.a)
    else:
        eta1 = least_squares(xp, data.a, "propensity design")
    eta2 = least_squares(xg, outcome_residual_base(data, theta0), "outcome design")
    eta4 = least_squares(xh, data.m - theta0.theta3 * data.a, "mediator design")
    beta0 = system.pack(theta0, EtaParams(eta1, eta2, np.empty(0), eta4))
    beta, ok, it, norm = newton_solve(system, beta0, opts)
    return _finish(system, beta, ok, it, norm, opts)


def solve_bk(data: Dataset, spec: ModelSpec, opts: SolveOptions = SolveOptions()) -> SolveResult:
    """Product-of-coefficients estimator from two least-squares fits."""
    spec.check(data)
    theta, eta2, eta4 = _bk_theta(data, spec)
    system = MomentSystem("BK", data, spec)
    empty = np.empty(0)
    beta = system.pack(theta, EtaParams(empty, eta2, empty, eta4))
    G, J = system.evaluate(beta)
    norm = float(np.max(np.abs(G.mean(axis=0))))
    return _finish(system, beta, True, 0, norm, SolveOptions(tol=opts.tol, raise_on_failure=False), J)


def solve_mr_interaction(
    data: Dataset,
    spec: ModelSpec,
    d_choice: InteractionWeights | None = None,
    opts: SolveOptions = SolveOptions(),
) -> SolveResult:
    """Multiply robust estimator with an exposure-mediator interaction.

    Solves mean d(X) phi~ = 0 together with the nuisance scores; the last
    stacked parameter is the sample mean of h*(X), needed for the NDE.
    """
    return _augmented_solve("MR_INT", data, spec, opts, d_choice)


SOLVERS = {
    "MR": solve_mr,
    "PS": solve_ps,
    "BK": solve_bk,
    "HINES": solve_hines,
    "MR_INT": solve_mr_interaction,
}


def solve(tag: str, data: Dataset, spec: ModelSpec, opts: SolveOptions = SolveOptions(), **kw):
    try:
        fn = SOLVERS[tag]
    except KeyError:
        raise InputError(f"unknown estimator {tag!r}; choose from {sorted(SOLVERS)}") from None
    if tag == "MR_INT":
        return fn(data, spec, kw.get("d_choice"), opts)
    return fn(data, spec, opts)


def certificate(result: SolveResult) -> float:
    """Max-norm of the defining empirical moments, re-evaluated from scratch."""
    return float(np.max(np.abs(result.system.mean_moments(result.params))))
