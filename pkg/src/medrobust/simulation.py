"""Data-generating process with latent M-Y confounding and the Monte Carlo engine.

Structural model (defaults)::

    X1, X2 ~ N(0, 1)
    U | X  ~ N(1 + X1 - 0.3 X2, exp(-1.2 + 0.8 X1 - 0.2 X2))
    A | X  ~ Bernoulli(expit(-1 + 1.5 X1 - 0.3 X2))
    M = 1 + (1.5 + eps) A + 0.5 U,   eps ~ N(0, 1)
    Y = 1 + A + 2 M + zeta A M + U

so theta = (2, 1, 1.5), NDE = 1 and NIE = 3 for a unit increase in A when zeta = 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import expit, ndtri

from .core import Dataset, ModelSpec, NuisanceValues, Theta, effects_from_theta
from .errors import ConvergenceError, InputError, MedRobustError
from .estimators import SolveOptions, solve
from .inference import effect_report
from .rng import chunked, open_uniform, parallel_map, replicate_rng, resolve_threads

RAW_COLS = (0, 1, 2)
MISSPECIFIED_COLS = (0, 3, 4)
SCENARIOS = {
    # which of (pi, g, rho, h) receive the misspecified design
    "i": (),
    "ii": ("rho", "h"),
    "iii": ("g", "rho"),
    "iv": ("pi",),
}
ESTIMANDS = ("NDE", "NIE")
MC_MAX_FAIL = 0.02


@dataclass(frozen=True)
class DgpConfig:
    n: int = 800
    seed: int = 0
    confounding_on: bool = True
    interaction_zeta: float = 0.0
    u_mean: tuple = (1.0, 1.0, -0.3)
    u_logvar: tuple = (-1.2, 0.8, -0.2)
    a_logit: tuple = (-1.0, 1.5, -0.3)
    m_intercept: float = 1.0
    m_exposure: float = 1.5
    m_eps_sd: float = 1.0
    m_u: float = 0.5
    y_intercept: float = 1.0
    y_exposure: float = 1.0
    y_mediator: float = 2.0
    y_u: float = 1.0

    def __post_init__(self):
        if self.n < 50:
            raise InputError("DgpConfig.n must be at least 50")

    @property
    def theta(self) -> Theta:
        if self.interaction_zeta:
            return Theta(self.y_mediator, self.y_exposure, self.m_exposure, self.interaction_zeta)
        return Theta(self.y_mediator, self.y_exposure, self.m_exposure)

    def true_effects(self, contrast=(0.0, 1.0)):
        """True (NDE, NIE); the mean of h*(X) is E[m_intercept + m_u U]."""
        mean_h = self.m_intercept + (self.m_u * self.u_mean[0] if self.confounding_on else 0.0)
        return effects_from_theta(self.theta, contrast, mean_h)


@dataclass(frozen=True, eq=False)
class LatentRecord:
    """Unobserved draws, kept apart from the estimation data."""

    u: np.ndarray
    eps: np.ndarray


def _lin3(coef, x1, x2):
    return coef[0] + coef[1] * x1 + coef[2] * x2


def generate_dataset(cfg: DgpConfig, rng: np.random.Generator | None = None):
    """Draw one sample; returns ``(Dataset, LatentRecord)``.

    The Dataset exposes (Y, A, M) and x = (1, X1, X2) only.
    """
    if rng is None:
        rng = replicate_rng(cfg.seed, 0, "dgp")
    n = cfg.n
    u01 = open_uniform(rng, (5, n))
    x1, x2, z_u, z_eps = ndtri(u01[0]), ndtri(u01[1]), ndtri(u01[2]), ndtri(u01[3])
    if cfg.confounding_on:
        u = _lin3(cfg.u_mean, x1, x2) + np.exp(0.5 * _lin3(cfg.u_logvar, x1, x2)) * z_u
    else:
        u = np.zeros(n)
    a = (u01[4] < expit(_lin3(cfg.a_logit, x1, x2))).astype(np.float64)
    eps = cfg.m_eps_sd * z_eps
    m = cfg.m_intercept + (cfg.m_exposure + eps) * a + cfg.m_u * u
    y = (cfg.y_intercept + cfg.y_exposure * a + cfg.y_mediator * m
         + cfg.interaction_zeta * a * m + cfg.y_u * u)
    x = np.column_stack([np.ones(n), x1, x2])
    return Dataset(y, a, m, x, ("const", "x1", "x2")), LatentRecord(u, eps)


def oracle_nuisances(cfg: DgpConfig, x: np.ndarray) -> NuisanceValues:
    """True pi, g*, rho, h* at the rows of x = (1, X1, X2, ...)."""
    x1, x2 = x[:, 1], x[:, 2]
    pi = expit(_lin3(cfg.a_logit, x1, x2))
    if cfg.confounding_on:
        mu_u = _lin3(cfg.u_mean, x1, x2)
        var_u = np.exp(_lin3(cfg.u_logvar, x1, x2))
    else:
        mu_u = var_u = np.zeros(len(x1))
    g_star = cfg.y_intercept + cfg.y_u * mu_u
    h_star = cfg.m_intercept + cfg.m_u * mu_u
    rho = cfg.y_u * cfg.m_u * var_u
    return NuisanceValues(pi, g_star, rho, h_star)


def oracle_eta(cfg: DgpConfig) -> dict:
    """Coefficients of the true nuisances on (1, X1, X2); rho on the log scale."""
    mu = np.asarray(cfg.u_mean)
    lv = np.asarray(cfg.u_logvar).copy()
    lv[0] += math.log(cfg.y_u * cfg.m_u)
    g = cfg.y_u * mu
    g[0] += cfg.y_intercept
    h = cfg.m_u * mu
    h[0] += cfg.m_intercept
    return {"eta1": np.asarray(cfg.a_logit, dtype=float), "eta2": g, "eta3": lv, "eta4": h}


def misspecify_covariates(x: np.ndarray) -> np.ndarray:
    """Replace (X1, X2) by standardised exp(X1/2) and 10 + X2 / (1 + exp(X1))."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] < 3:
        raise InputError("misspecify_covariates needs columns (1, X1, X2)")
    out = x.copy()
    x1, x2 = x[:, 1], x[:, 2]
    for j, col in ((1, np.exp(0.5 * x1)), (2, 10.0 + x2 / (1.0 + np.exp(x1)))):
        sd = col.std(ddof=1)
        if not sd > 0:
            raise InputError("transformed covariate has zero sample SD")
        out[:, j] = (col - col.mean()) / sd
    return out


def scenario_data(data: Dataset) -> Dataset:
    """Append the misspecified columns: x becomes (1, X1, X2, Z1, Z2)."""
    z = misspecify_covariates(data.x)[:, 1:3]
    names = ("const", "x1", "x2", "z1", "z2")
    return Dataset(data.y, data.a, data.m, np.column_stack([data.x[:, :3], z]), names)


def scenario_spec(tag: str, **kw) -> ModelSpec:
    """Design columns for scenario ``tag`` over the layout of ``scenario_data``."""
    try:
        wrong = SCENARIOS[tag]
    except KeyError:
        raise InputError(f"scenario must be one of {sorted(SCENARIOS)}, got {tag!r}") from None
    cols = {k: MISSPECIFIED_COLS if k in wrong else RAW_COLS for k in ("pi", "g", "rho", "h")}
    return ModelSpec(cols["pi"], cols["g"], cols["rho"], cols["h"], **kw)


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass
class EstimandSummary:
    bias: float
    sd: float
    sqrt_evar: float
    cov90: float
    cov95: float
    mean: float
    replicates: int


@dataclass
class McSummary:
    scenario: str
    n: int
    master_seed: int
    requested: int
    truth: dict
    rows: dict = field(default_factory=dict)  # estimator -> estimand -> EstimandSummary
    failures: dict = field(default_factory=dict)

    def get(self, estimator: str, estimand: str) -> EstimandSummary:
        return self.rows[estimator][estimand]

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "n": self.n,
            "master_seed": self.master_seed,
            "requested": self.requested,
            "truth": dict(self.truth),
            "failures": dict(self.failures),
            "rows": {
                est: {k: asdict(v) for k, v in by.items()} for est, by in self.rows.items()
            },
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def format_table(self) -> str:
        ests = list(self.rows)
        lines = [f"Scenario ({self.scenario}), n={self.n}, {self.requested} replicates"]
        lines.append(f"{'':>10}" + "".join(f"{e:>10}" for e in ests))
        stats_ = (("Bias", "bias"), ("sqrt Var", "sd"), ("sqrt EVar", "sqrt_evar"),
                  ("Cov90", "cov90"), ("Cov95", "cov95"))
        for estimand in ESTIMANDS:
            lines.append(f"{estimand:^{10 + 10 * len(ests)}}")
            for label, attr in stats_:
                cells = "".join(f"{getattr(self.rows[e][estimand], attr):>10.3f}" for e in ests)
                lines.append(f"{label:>10}{cells}")
        return "\n".join(lines)


def _one_replicate(cfg, scenario, estimators, master_seed, r, opts):
    rng = replicate_rng(master_seed, r, "dgp")
    data, _ = generate_dataset(cfg, rng)
    data = scenario_data(data)
    spec = scenario_spec(scenario)
    out = {}
    for tag in estimators:
        try:
            res = solve(tag, data, spec, opts)
            rep = effect_report(data, res, (0.0, 1.0), 0.95)
        except (MedRobustError, np.linalg.LinAlgError):
            out[tag] = None
            continue
        out[tag] = (rep.nde, rep.nie, rep.se_nde, rep.se_nie)
    return out


def _mc_chunk(args):
    cfg, scenario, estimators, master_seed, indices, opts = args
    return [_one_replicate(cfg, scenario, estimators, master_seed, r, opts) for r in indices]


def _summarise(est, se, truth):
    z90, z95 = 1.6448536269514722, 1.959963984540054
    err = est - truth
    return EstimandSummary(
        bias=float(np.mean(err)),
        sd=float(np.std(est, ddof=1)),
        sqrt_evar=float(np.sqrt(np.mean(se**2))),
        cov90=float(np.mean(np.abs(err) <= z90 * se)),
        cov95=float(np.mean(np.abs(err) <= z95 * se)),
        mean=float(np.mean(est)),
        replicates=int(len(est)),
    )


def run_monte_carlo(dgp: DgpConfig, scenario: str, estimators=("MR", "PS", "BK"),
                    replications: int = 1000, master_seed: int = 0, threads: int = 1,
                    opts: SolveOptions = SolveOptions(), allow_failures: bool = False) -> McSummary:
    """Repeat generate / estimate / sandwich for ``replications`` samples.

    Replicate r draws from ``replicate_rng(master_seed, r)``, so the summary is
    the same for any ``threads``.
    """
    if replications < 2:
        raise InputError("replications must be at least 2")
    if dgp.interaction_zeta:
        raise InputError("the Monte Carlo engine covers the no-interaction estimators only")
    scenario_spec(scenario)
    estimators = tuple(estimators)
    workers = resolve_threads(threads)
    parts = chunked(range(replications), workers * 4 if workers > 1 else 1)
    jobs = [(dgp, scenario, estimators, master_seed, part, opts) for part in parts]
    reps = [row for chunk in parallel_map(_mc_chunk, jobs, workers) for row in chunk]

    nde0, nie0 = dgp.true_effects((0.0, 1.0))
    summary = McSummary(scenario, dgp.n, master_seed, replications, {"NDE": nde0, "NIE": nie0})
    for tag in estimators:
        vals = np.array([rep[tag] for rep in reps if rep[tag] is not None], dtype=np.float64)
        failed = replications - len(vals)
        summary.failures[tag] = failed
        if len(vals) < 2:
            raise ConvergenceError(f"{tag}: fewer than two replicates succeeded")
        summary.rows[tag] = {
            "NDE": _summarise(vals[:, 0], vals[:, 2], nde0),
            "NIE": _summarise(vals[:, 1], vals[:, 3], nie0),
        }
    worst = max(summary.failures.values())
    if worst > MC_MAX_FAIL * replications and not allow_failures:
        err = ConvergenceError(f"{worst} of {replications} replicates failed to converge")
        err.result = summary
        raise err
    return summary


def replace_config(cfg: DgpConfig, **changes) -> DgpConfig:
    return replace(cfg, **changes)


__all__ = [
    "DgpConfig",
    "LatentRecord",
    "McSummary",
    "EstimandSummary",
    "SCENARIOS",
    "generate_dataset",
    "misspecify_covariates",
    "oracle_eta",
    "oracle_nuisances",
    "run_monte_carlo",
    "scenario_data",
    "scenario_spec",
]
