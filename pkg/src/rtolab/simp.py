"""Deterministic SIMP compliance minimization with an OC update."""
from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import load_vector, mesh_for, solve
from .grid import GridSpec, ProblemSpec, check_density

log = logging.getLogger(__name__)


class BisectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimpConfig:
    penalty: float = 3.0
    filter_radius: float = 1.5
    move_limit: float = 0.2
    oc_exponent: float = 0.5
    max_iters: int = 200
    change_tol: float = 0.01

    def __post_init__(self):
        for name in ("penalty", "move_limit", "oc_exponent", "max_iters", "change_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.filter_radius < 0:
            raise ValueError("filter_radius must be >= 0")
        if self.move_limit >= 1:
            raise ValueError("move_limit must be < 1")

    @classmethod
    def for_resolution(cls, n: int, **kw) -> "SimpConfig":
        """Filter radius 1.5 at n=100, growing linearly with n but never
        below 1.5 elements (smaller radii disable the filter)."""
        kw.setdefault("filter_radius", max(1.5, 1.5 * n / 100))
        return cls(**kw)


@dataclass
class SimpResult:
    theta_star: np.ndarray
    compliance_history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def sensitivities(theta, spec: ProblemSpec, xi: float, penalty: float | None = None):
    """Compliance and its gradient with respect to each element density.

    Returns ``(compliance, grads)`` with ``grads`` shaped like the grid.
    """
    theta = check_density(theta, spec)
    p = spec.penalty if penalty is None else penalty
    mesh = mesh_for(spec)
    props = spec.prop_min + theta.ravel() ** p * (spec.prop0 - spec.prop_min)
    vals = (props[:, None, None] * mesh.ke[None]).ravel()
    k_full = sp.coo_matrix((vals, (mesh.rows, mesh.cols)), shape=(mesh.n_dofs, mesh.n_dofs)).tocsr()
    f = load_vector(spec, xi)
    res = solve(mesh.reduce(k_full), f[mesh.free])
    u = np.zeros(mesh.n_dofs)
    u[mesh.free] = res.field
    ue = u[mesh.edof]
    energy = np.einsum("ei,ij,ej->e", ue, mesh.ke, ue)
    grads = -p * theta.ravel() ** (p - 1) * (spec.prop0 - spec.prop_min) * energy
    return res.compliance, grads.reshape(spec.grid.shape)


@functools.lru_cache(maxsize=32)
def filter_matrix(grid: GridSpec, rmin: float):
    """Weights ``max(0, rmin - dist)`` between element centres, plus row sums."""
    ny, nx = grid.shape
    reach = int(np.ceil(rmin)) - 1 if rmin > 0 else 0
    rows, cols, vals = [], [], []
    r, c = np.divmod(np.arange(grid.n_elements), nx)
    for dr in range(-reach, reach + 1):
        for dc in range(-reach, reach + 1):
            w = rmin - np.hypot(dr, dc)
            if w <= 0:
                continue
            rr, cc = r + dr, c + dc
            ok = (rr >= 0) & (rr < ny) & (cc >= 0) & (cc < nx)
            rows.append(np.flatnonzero(ok))
            cols.append(rr[ok] * nx + cc[ok])
            vals.append(np.full(ok.sum(), w))
    h = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(grid.n_elements, grid.n_elements))
    return h, np.asarray(h.sum(axis=1)).ravel()


def filter_sensitivities(theta, grads, rmin: float, grid: GridSpec | None = None) -> np.ndarray:
    """Mesh-independency filter on sensitivities (classic density-weighted form)."""
    if rmin < 0:
        raise ValueError("rmin must be >= 0")
    theta = np.asarray(theta, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if rmin <= 1.0:
        return grads.copy()
    if grid is None:
        grid = GridSpec(theta.shape[1], theta.shape[0])
    h, hs = filter_matrix(grid, float(rmin))
    t = theta.ravel()
    out = (h @ (t * grads.ravel())) / (t * hs)
    return out.reshape(grads.shape)


def oc_update(theta, grads, spec: ProblemSpec, config: SimpConfig, vol_tol: float = 1e-6):
    """Optimality-criteria update with move limits; the Lagrange multiplier is
    bisected (in log space) until the designable volume matches the target."""
    theta = np.asarray(theta, dtype=np.float64).reshape(spec.grid.shape)
    grads = np.asarray(grads, dtype=np.float64).reshape(spec.grid.shape)
    des = spec.designable
    t = theta[des]
    g = np.minimum(grads[des], 0.0)
    lower = np.maximum(spec.theta_min, t - config.move_limit)
    upper = np.minimum(1.0, t + config.move_limit)
    target = spec.volume_fraction

    def trial(lam):
        return np.clip(t * (-g / lam) ** config.oc_exponent, lower, upper)

    if lower.mean() > target + vol_tol or upper.mean() < target - vol_tol:
        raise BisectionError(f"target volume {target} unreachable within move limits "
                             f"[{lower.mean():.4f}, {upper.mean():.4f}]")
    # bracket: the trial volume decreases monotonically in lam
    lo, hi = -60.0, 60.0
    new = None
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        new = trial(np.exp(mid))
        vol = new.mean()
        if abs(vol - target) <= vol_tol:
            break
        if vol > target:
            lo = mid
        else:
            hi = mid
    else:
        raise BisectionError(f"volume bisection failed; log-multiplier bracket [{lo:.6g}, {hi:.6g}], "
                             f"volume {vol:.6f} vs target {target}")
    out = np.full(spec.grid.shape, spec.theta_min)
    out[des] = new
    return out


def run_simp(spec: ProblemSpec, xi: float, config: SimpConfig | None = None) -> SimpResult:
    """Minimize compliance at one fixed realization ``xi``."""
    config = config or SimpConfig()
    theta = spec.uniform_design()
    history = []
    result = SimpResult(theta, history)
    for it in range(1, config.max_iters + 1):
        c, dc = sensitivities(theta, spec, xi, config.penalty)
        history.append(c)
        dc = filter_sensitivities(theta, dc, config.filter_radius, spec.grid)
        new = oc_update(theta, dc, spec, config)
        change = float(np.abs(new - theta).max())
        theta = new
        result.iterations = it
        if change < config.change_tol:
            result.converged = True
            break
    c, _ = sensitivities(theta, spec, xi, config.penalty)
    history.append(c)
    result.theta_star = theta
    log.debug("simp xi=%.4f: %d iterations, compliance %.5g -> %.5g", xi, result.iterations,
              history[0], history[-1])
    return result
