"""Stacked (theta, eta) moment systems for each estimator.

A system is exactly identified: the number of moment rows equals the length
of the parameter vector ``beta``. The first ``theta_dim`` entries of ``beta``
are the target parameters; the remainder are nuisance coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .core import Dataset, EtaParams, ModelSpec, Theta
from .errors import InputError

# nuisance blocks present in each system, in layout order
LAYOUTS = {
    "MR": ("eta1", "eta2", "eta3", "eta4"),
    "PS": ("eta1", "eta4"),
    "HINES": ("eta1", "eta2", "eta4"),
    "BK": ("eta2", "eta4"),
    "MR_INT": ("eta1", "eta2", "eta3", "eta4", "mean_h"),
}
_BLOCK_PREFIX = {"eta1": "pi", "eta2": "g", "eta3": "rho", "eta4": "h"}


@dataclass(frozen=True)
class InteractionWeights:
    """Row-wise 4 x 3 weight matrix d(X) for the interaction moments.

    The default stacks the identity over a fourth row that weights moment
    component ``component`` by x_j - mean(x_j), where ``column`` is the first
    non-constant column of x unless given. Component 0 (the outcome moment)
    identifies zeta far more sharply than component 1 (the bilinear moment)
    under the built-in DGP; both are valid. A callable ``builder`` mapping a
    Dataset to an (n, 4, 3) array overrides everything else.
    """

    column: Optional[int] = None
    component: int = 0
    builder: Optional[object] = None

    def __post_init__(self):
        if self.component not in (0, 1, 2):
            raise InputError("interaction weight component must be 0, 1 or 2")

    def matrix(self, data: Dataset) -> np.ndarray:
        if self.builder is not None:
            w = np.asarray(self.builder(data), dtype=np.float64)
            if w.shape != (data.n, 4, 3):
                raise InputError(f"interaction weights must have shape (n, 4, 3), got {w.shape}")
            return w
        col = self.column
        if col is None:
            varying = [j for j in range(data.p) if np.ptp(data.x[:, j]) > 0]
            if not varying:
                raise InputError("interaction weights need a non-constant covariate")
            col = varying[0]
        elif not 0 <= col < data.p:
            raise InputError(f"interaction weight column {col} outside x (p={data.p})")
        dev = data.x[:, col] - data.x[:, col].mean()
        w = np.zeros((data.n, 4, 3))
        w[:, 0, 0] = w[:, 1, 1] = w[:, 2, 2] = 1.0
        w[:, 3, self.component] = dev
        return w
        col = self.column
        if col is None:
            varying = [j for j in range(data.p) if np.ptp(data.x[:, j]) > 0]
            if not varying:
                raise InputError("interaction weights need a non-constant covariate")
            col = varying[0]
        dev = data.x[:, col] - data.x[:, col].mean()
        w = np.zeros((data.n, 4, 3))
        w[:, 0, 0] = w[:, 1, 1] = w[:, 2, 2] = 1.0
        w[:, 3, 1] = dev
        return w


class MomentSystem:
    def __init__(self, kind: str, data: Dataset, spec: ModelSpec, weights: InteractionWeights | None = None):
        if kind not in LAYOUTS:
            raise InputError(f"unknown estimator {kind!r}")
        spec.check(data)
        self.kind = kind
        self.data = data
        self.spec = spec
        self.xp, self.xg, self.xr, self.xh = spec.designs(data.x)
        self.theta_dim = 4 if kind == "MR_INT" else 3
        widths = {"eta1": self.xp.shape[1], "eta2": self.xg.shape[1],
                  "eta3": self.xr.shape[1], "eta4": self.xh.shape[1], "mean_h": 1}
        self.slices = {}
        off = self.theta_dim
        for block in LAYOUTS[kind]:
            self.slices[block] = slice(off, off + widths[block])
            off += widths[block]
        self.size = off
        self.weights = None
        if kind == "MR_INT":
            self.weights = (weights or InteractionWeights()).matrix(data)
        self._pi_logistic = spec.pi_link == "logistic"
        self._rho_log = spec.rho_link == "log"

    @property
    def theta_slice(self) -> slice:
        return slice(0, self.theta_dim)

    @property
    def param_names(self) -> list:
        names = ["theta1", "theta2", "theta3"] + (["zeta"] if self.theta_dim == 4 else [])
        for block in LAYOUTS[self.kind]:
            if block == "mean_h":
                names.append("mean_h_star")
                continue
            cols = getattr(self.spec, _BLOCK_PREFIX[block] + "_cols")
            label = self.data.x_names
            names += [
                f"{_BLOCK_PREFIX[block]}:{label[c] if label else c}" for c in cols
            ]
        return names

    def evaluate(self, beta):
        """Per-row moments (n x K) and mean analytic Jacobian (K x K)."""
        d = self.data
        beta = np.ascontiguousarray(beta, dtype=np.float64)
        if self.kind == "MR":
            return kernels.mr_system(d.y, d.a, d.m, self.xp, self.xg, self.xr, self.xh,
                                     beta, self._pi_logistic, self._rho_log)
        if self.kind == "PS":
            return kernels.ps_system(d.y, d.a, d.m, self.xp, self.xh, beta, self._pi_logistic)
        if self.kind == "HINES":
            return kernels.hines_system(d.y, d.a, d.m, self.xp, self.xg, self.xh, beta,
                                        self._pi_logistic)
        if self.kind == "BK":
            return kernels.bk_system(d.y, d.a, d.m, self.xg, self.xh, beta)
        return kernels.mr_int_system(d.y, d.a, d.m, self.xp, self.xg, self.xr, self.xh,
                                     self.weights, beta, self._pi_logistic, self._rho_log)

    def moments(self, beta):
        return self.evaluate(beta)[0]

    def mean_moments(self, beta):
        return self.moments(beta).mean(axis=0)

    def jacobian(self, beta, method="analytic"):
        if method == "analytic":
            return self.evaluate(beta)[1]
        if method != "central":
            raise InputError(f"jacobian must be 'analytic' or 'central', got {method!r}")
        beta = np.asarray(beta, dtype=np.float64)
        J = np.empty((self.size, self.size))
        for j in range(self.size):
            step = 1e-6 * (1.0 + abs(beta[j]))
            hi = beta.copy()
            lo = beta.copy()
            hi[j] += step
            lo[j] -= step
            J[:, j] = (self.mean_moments(hi) - self.mean_moments(lo)) / (2.0 * step)
        return J

    # -- packing -----------------------------------------------------------

    def pack(self, theta: Theta, eta: EtaParams, mean_h: float | None = None) -> np.ndarray:
        beta = np.empty(self.size)
        t = theta.as_array()
        if len(t) == 3 and self.theta_dim == 4:
            t = np.append(t, 0.0)
        beta[self.theta_slice] = t[: self.theta_dim]
        for block, sl in self.slices.items():
            if block == "mean_h":
                beta[sl] = self.xh.dot(eta.eta4).mean() if mean_h is None else mean_h
            else:
                beta[sl] = getattr(eta, block)
        return beta

    def unpack(self, beta):
        """Return (Theta, EtaParams, extras) from a parameter vector."""
        beta = np.asarray(beta, dtype=np.float64)
        theta = Theta.from_array(beta[self.theta_slice])
        blocks = {}
        for name in ("eta1", "eta2", "eta3", "eta4"):
            sl = self.slices.get(name)
            blocks[name] = beta[sl].copy() if sl is not None else np.empty(0)
        eta = EtaParams(**blocks, profiled_at=theta, rho_link=self.spec.rho_link)
        extras = {}
        if "mean_h" in self.slices:
            extras["mean_h_star"] = float(beta[self.slices["mean_h"]][0])
        return theta, eta, extras
