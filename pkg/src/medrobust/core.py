"""Domain types and pointwise estimating functions.

Everything here is a pure function of its arguments. The estimating functions
are vectorised over rows: pass scalars for a single observation or equal-length
arrays for a sample, and the last axis of the result indexes the components.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InputError

PI_LINKS = ("logistic", "identity")
RHO_LINKS = ("log", "identity")
EXPOSURE_KINDS = ("binary", "continuous")
ESTIMATOR_TAGS = ("MR", "PS", "BK", "HINES", "MR_INT")


def _as_vector(name, values):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise InputError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed data (Y, A, M, X) with a leading constant column in ``x``."""

    y: np.ndarray
    a: np.ndarray
    m: np.ndarray
    x: np.ndarray
    x_names: Optional[tuple] = None

    def __post_init__(self):
        y = _as_vector("y", self.y)
        a = _as_vector("a", self.a)
        m = _as_vector("m", self.m)
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 2:
            raise InputError(f"x must be a 2-d matrix, got shape {x.shape}")
        n, p = x.shape
        if not (len(y) == len(a) == len(m) == n):
            raise InputError(
                f"column lengths disagree: y={len(y)}, a={len(a)}, m={len(m)}, x={n}"
            )
        for name, arr in (("y", y), ("a", a), ("m", m), ("x", x)):
            if not np.all(np.isfinite(arr)):
                raise InputError(f"{name} contains missing or non-finite values")
        if n <= p + 4:
            raise InputError(f"need n > p + 4 rows, got n={n}, p={p}")
        if not np.all(x[:, 0] == 1.0):
            raise InputError("first column of x must be the constant 1")
        if np.linalg.matrix_rank(x) < p:
            raise InputError("covariate matrix x is not of full column rank")
        if self.x_names is not None and len(self.x_names) != p:
            raise InputError("x_names length does not match the columns of x")
        for arr in (y, a, m, x):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "x", x)
        if self.x_names is not None:
            object.__setattr__(self, "x_names", tuple(self.x_names))

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def take(self, index) -> "Dataset":
        """Row subset (used by the bootstrap)."""
        return Dataset(self.y[index], self.a[index], self.m[index], self.x[index], self.x_names)

    def with_outcome(self, y) -> "Dataset":
        return Dataset(y, self.a, self.m, self.x, self.x_names)


@dataclass(frozen=True)
class Theta:
    theta1: float
    theta2: float
    theta3: float
    zeta: Optional[float] = None

    def __post_init__(self):
        vals = [self.theta1, self.theta2, self.theta3]
        if self.zeta is not None:
            vals.append(self.zeta)
        if not np.all(np.isfinite(vals)):
            raise InputError(f"non-finite parameter in {self}")

    @property
    def has_interaction(self) -> bool:
        return self.zeta is not None

    def as_array(self) -> np.ndarray:
        vals = [self.theta1, self.theta2, self.theta3]
        if self.zeta is not None:
            vals.append(self.zeta)
        return np.array(vals, dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "Theta":
        v = [float(t) for t in values]
        if len(v) == 3:
            return cls(*v)
        if len(v) == 4:
            return cls(v[0], v[1], v[2], v[3])
        raise InputError(f"theta must have 3 or 4 entries, got {len(v)}")


@dataclass(frozen=True)
class ModelSpec:
    """Working models for the four nuisance functions.

    Designs are tuples of column indices into ``Dataset.x``. The outcome and
    mediator regressions (g*, h*) always use the identity link.
    """

    pi_cols: tuple
    g_cols: tuple
    rho_cols: tuple
    h_cols: tuple
    pi_link: str = "logistic"
    rho_link: str = "log"
    exposure_kind: str = "binary"

    def __post_init__(self):
        for name in ("pi_cols", "g_cols", "rho_cols", "h_cols"):
            cols = tuple(int(c) for c in getattr(self, name))
            if not cols:
                raise InputError(f"{name} must reference at least one column")
            if len(set(cols)) != len(cols):
                raise InputError(f"{name} has duplicate columns: {cols}")
            object.__setattr__(self, name, cols)
        if self.pi_link not in PI_LINKS:
            raise InputError(f"pi_link must be one of {PI_LINKS}, got {self.pi_link!r}")
        if self.rho_link not in RHO_LINKS:
            raise InputError(f"rho_link must be one of {RHO_LINKS}, got {self.rho_link!r}")
        if self.exposure_kind not in EXPOSURE_KINDS:
            raise InputError(f"exposure_kind must be one of {EXPOSURE_KINDS}")
        if self.pi_link == "logistic" and self.exposure_kind != "binary":
            raise InputError("logistic propensity link requires a binary exposure")

    @classmethod
    def default(cls, p: int, exposure_kind: str = "binary", **kw) -> "ModelSpec":
        """All covariate columns in every design."""
        cols = tuple(range(p))
        pi_link = kw.pop("pi_link", "logistic" if exposure_kind == "binary" else "identity")
        return cls(cols, cols, cols, cols, pi_link=pi_link, exposure_kind=exposure_kind, **kw)

    @property
    def widths(self) -> tuple:
        return (len(self.pi_cols), len(self.g_cols), len(self.rho_cols), len(self.h_cols))

    def check(self, data: Dataset) -> None:
        for name in ("pi_cols", "g_cols", "rho_cols", "h_cols"):
            bad = [c for c in getattr(self, name) if c < 0 or c >= data.p]
            if bad:
                raise InputError(f"{name} references missing columns {bad} (x has {data.p})")
        if self.exposure_kind == "binary" and not np.all((data.a == 0) | (data.a == 1)):
            raise InputError("exposure_kind='binary' but exposure is not 0/1")

    def designs(self, x: np.ndarray):
        """Return the (pi, g, rho, h) design matrices as contiguous arrays."""
        return tuple(
            np.ascontiguousarray(x[:, list(cols)])
            for cols in (self.pi_cols, self.g_cols, self.rho_cols, self.h_cols)
        )

    def replace(self, **changes) -> "ModelSpec":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class EtaParams:
    eta1: np.ndarray
    eta2: np.ndarray
    eta3: np.ndarray
    eta4: np.ndarray
    profiled_at: Optional[Theta] = None
    rho_link: str = "log"

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.eta1, self.eta2, self.eta3, self.eta4])

    @classmethod
    def from_array(cls, values, widths, profiled_at=None, rho_link="log") -> "EtaParams":
        values = np.asarray(values, dtype=np.float64)
        cuts = np.cumsum(widths)[:-1]
        parts = np.split(values, cuts)
        return cls(*[p.copy() for p in parts], profiled_at=profiled_at, rho_link=rho_link)


@dataclass(frozen=True, eq=False)
class NuisanceValues:
    pi: np.ndarray
    g_star: np.ndarray
    rho: np.ndarray
    h_star: np.ndarray
    overflow: bool = False


@dataclass
class EffectReport:
    estimator: str
    contrast: tuple
    nde: float
    nie: float
    se_nde: float
    se_nie: float
    ci_level: float
    ci_nde: tuple
    ci_nie: tuple
    variance_source: str = "sandwich"
    theta: Optional[Theta] = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "estimator": self.estimator,
            "contrast": list(self.contrast),
            "nde": self.nde,
            "nie": self.nie,
            "se_nde": self.se_nde,
            "se_nie": self.se_nie,
            "ci_level": self.ci_level,
            "ci_nde": list(self.ci_nde),
            "ci_nie": list(self.ci_nie),
            "variance_source": self.variance_source,
        }
        if self.theta is not None:
            out["theta"] = {
                "theta1": self.theta.theta1,
                "theta2": self.theta.theta2,
                "theta3": self.theta.theta3,
                "zeta": self.theta.zeta,
            }
        out["diagnostics"] = dict(self.diagnostics)
        return out


# ---------------------------------------------------------------------------
# estimating functions


def _outcome_core(y, a, m, theta: Theta):
    """Y - theta1*M (- zeta*A*M when the interaction is present)."""
    core = y - theta.theta1 * m
    if theta.zeta is not None:
        core = core - theta.zeta * a * m
    return core


def psi(y, a, m, theta: Theta, h_star):
    """Conditional-mean-independent vector (psi1, psi2, psi3).

    psi1 = Y - th1 M - th2 A, psi2 = (M - th3 A - h*)(Y - th1 M), psi3 = M - th3 A.
    """
    y, a, m, h_star = np.broadcast_arrays(*map(np.asarray, (y, a, m, h_star)))
    core = _outcome_core(y, a, m, theta)
    return np.stack(
        [core - theta.theta2 * a, (m - theta.theta3 * a - h_star) * core, m - theta.theta3 * a],
        axis=-1,
    )


def phi_tilde(y, a, m, theta: Theta, nv: NuisanceValues):
    """Orthogonalised moment contribution.

    The second component is {A - pi}[{M - th3 A - h*}{Y - th1 M - th2 A - g*} - rho];
    it has conditional mean zero given (A, X) whenever g*, h*, rho are correct.
    """
    e_a = np.asarray(a) - nv.pi
    r_y = _outcome_core(y, a, m, theta) - theta.theta2 * np.asarray(a) - nv.g_star
    r_m = np.asarray(m) - theta.theta3 * np.asarray(a) - nv.h_star
    return np.stack([e_a * r_y, e_a * (r_m * r_y - nv.rho), e_a * r_m], axis=-1)


def gamma(data: Dataset, theta: Theta, eta: EtaParams, spec: ModelSpec):
    """Per-row nuisance score blocks (gamma1, gamma2, gamma3, gamma4), shape (n, q).

    gamma1 is the canonical score of the propensity model, x_pi (A - pi), which
    is the maximum-likelihood score under the logistic link and the normal
    equations under the identity link.
    """
    from .nuisance import eval_nuisances

    nv = eval_nuisances(eta, data, spec)
    xp, xg, xr, xh = spec.designs(data.x)
    a, m = data.a, data.m
    r_y = _outcome_core(data.y, a, m, theta) - theta.theta2 * a - nv.g_star
    r_m = m - theta.theta3 * a - nv.h_star
    drho = nv.rho if eta.rho_link == "log" else np.ones_like(nv.rho)
    return np.hstack(
        [
            xp * (a - nv.pi)[:, None],
            xg * r_y[:, None],
            xr * (drho * (r_m * r_y - nv.rho))[:, None],
            xh * r_m[:, None],
        ]
    )


def effects_from_theta(theta: Theta, contrast=(0.0, 1.0), mean_h_star=None):
    """NDE and NIE for moving the exposure from ``contrast[0]`` to ``contrast[1]``.

    With reference level a' and target a: NDE = th2 (a - a'), NIE = th1 th3 (a - a').
    With interaction the NDE needs the sample mean of the fitted h*.
    """
    a_lo, a_hi = (float(c) for c in contrast)
    d = a_hi - a_lo
    if theta.zeta is None:
        return theta.theta2 * d, theta.theta1 * theta.theta3 * d
    if mean_h_star is None:
        raise InputError("mean_h_star is required when theta has an interaction term")
    nde = (theta.theta2 + theta.zeta * (theta.theta3 * a_lo + mean_h_star)) * d
    nie = theta.theta3 * (theta.theta1 + theta.zeta * a_hi) * d
    return nde, nie


def effect_gradients(theta: Theta, contrast=(0.0, 1.0), mean_h_star=None):
    """Gradients of (NDE, NIE).

    Ordered as (th1, th2, th3) without interaction and as
    (th1, th2, th3, zeta, mean_h*) with it.
    """
    a_lo, a_hi = (float(c) for c in contrast)
    d = a_hi - a_lo
    if theta.zeta is None:
        g_nde = np.array([0.0, d, 0.0])
        g_nie = np.array([theta.theta3 * d, 0.0, theta.theta1 * d])
        return g_nde, g_nie
    if mean_h_star is None:
        raise InputError("mean_h_star is required when theta has an interaction term")
    z = theta.zeta
    g_nde = np.array([0.0, d, z * a_lo * d, (theta.theta3 * a_lo + mean_h_star) * d, z * d])
    g_nie = np.array(
        [theta.theta3 * d, 0.0, (theta.theta1 + z * a_hi) * d, theta.theta3 * a_hi * d, 0.0]
    )
    return g_nde, g_nie
