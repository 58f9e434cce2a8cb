"""Load uncertainty model and estimators of the robust compliance
``mean + lam * std`` over the uncertain input."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

from .fem import compliance_many
from .grid import ProblemSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class UncertainScalar:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"need lo < hi, got [{self.lo}, {self.hi}]")

    def scale(self, u):
        return self.lo + np.asarray(u) * (self.hi - self.lo)


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes on [0, 1] with weights summing to one."""

    nodes: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.nodes)


@dataclass(frozen=True)
class Quadrature:
    m: int = 7


@dataclass(frozen=True)
class MonteCarlo:
    n: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("Monte Carlo needs n >= 2")


Estimator = Union[Quadrature, MonteCarlo]


@dataclass(frozen=True)
class RobustConfig:
    lam: float = 1.0
    estimator: Estimator = Quadrature(7)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")


@dataclass(frozen=True)
class RobustResult:
    q_rob: float
    mean: float
    std: float
    variance_clamped: bool = False

    def __iter__(self):
        return iter((self.q_rob, self.mean, self.std))


def gauss_legendre(m: int) -> QuadratureRule:
    """m-point Gauss-Legendre rule mapped to [0, 1]."""
    if not 1 <= m <= 64:
        raise ValueError("m must lie in [1, 64]")
    x, w = np.polynomial.legendre.leggauss(m)
    nodes = 0.5 * (x + 1.0)
    weights = w / w.sum()
    # leggauss returns nodes ascending; symmetrize to kill roundoff drift
    nodes = 0.5 * (nodes + (1.0 - nodes[::-1]))
    weights = 0.5 * (weights + weights[::-1])
    return QuadratureRule(nodes, weights)


def sample_xi(u: UncertainScalar, n: int, seed) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    return u.scale(rng.uniform(0.0, 1.0, n))


def weighted_moments(values, weights, lam: float) -> RobustResult:
    """Robust statistic from values and weights (weights sum to one)."""
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    mean = float(np.dot(weights, values))
    var = float(np.dot(weights, values ** 2)) - mean ** 2
    clamped = var < 0
    if clamped:
        if var < -1e-10 * max(mean ** 2, 1e-300):
            log.warning("negative variance %.3e clamped to zero", var)
        var = 0.0
    std = float(np.sqrt(var))
    return RobustResult(mean + lam * std, mean, std, clamped)


def sample_moments(values, lam: float) -> RobustResult:
    """Sample mean and biased (1/n) standard deviation."""
    values = np.asarray(values, dtype=np.float64)
    mean = float(values.mean())
    std = float(np.sqrt(np.mean((values - mean) ** 2)))
    return RobustResult(mean + lam * std, mean, std, False)


def robust_compliance(theta, spec: ProblemSpec, cfg: RobustConfig | None = None) -> RobustResult:
    cfg = cfg or RobustConfig()
    u = UncertainScalar(*spec.xi_range)
    est = cfg.estimator
    if isinstance(est, Quadrature):
        rule = gauss_legendre(est.m)
        q = compliance_many(theta, spec, u.scale(rule.nodes))
        return weighted_moments(q, rule.weights, cfg.lam)
    q = compliance_many(theta, spec, sample_xi(u, est.n, est.seed))
    return sample_moments(q, cfg.lam)
