"""Bilinear quadrilateral finite elements on regular grids.

Plane-stress elasticity (2 DOF/node) and steady conduction (1 DOF/node) share
one assembly path.  Element nodes are ordered counter-clockwise from the
lower-left corner; element ``(r, c)`` therefore touches nodes
``(r+1, c), (r+1, c+1), (r, c+1), (r, c)``.
"""
from __future__ import annotations

import functools
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import FieldLoadRandomPhase, Physics, ProblemSpec, check_density

log = logging.getLogger(__name__)

DIRECT_SOLVER_MAX_DOFS = 20_000


class SolverError(RuntimeError):
    pass


@dataclass
class SolveResult:
    field: np.ndarray
    compliance: float
    iterations: int
    residual: float


def element_stiffness(physics, prop0: float = 1.0, nu: float = 0.3) -> np.ndarray:
    """Closed-form stiffness of a unit square element with unit property."""
    physics = Physics(physics)
    if physics is Physics.HEAT:
        ke = np.array([
            [4.0, -1.0, -2.0, -1.0],
            [-1.0, 4.0, -1.0, -2.0],
            [-2.0, -1.0, 4.0, -1.0],
            [-1.0, -2.0, -1.0, 4.0],
        ]) / 6.0
        return prop0 * ke
    if not 0.0 <= nu < 0.5:
        raise ValueError(f"Poisson ratio must lie in [0, 0.5), got {nu}")
    k = np.array([
        1 / 2 - nu / 6, 1 / 8 + nu / 8, -1 / 4 - nu / 12, -1 / 8 + 3 * nu / 8,
        -1 / 4 + nu / 12, -1 / 8 - nu / 8, nu / 6, 1 / 8 - 3 * nu / 8,
    ])
    idx = np.array([
        [0, 1, 2, 3, 4, 5, 6, 7],
        [1, 0, 7, 6, 5, 4, 3, 2],
        [2, 7, 0, 5, 6, 3, 4, 1],
        [3, 6, 5, 0, 7, 2, 1, 4],
        [4, 5, 6, 7, 0, 1, 2, 3],
        [5, 4, 3, 2, 1, 0, 7, 6],
        [6, 3, 4, 1, 2, 7, 0, 5],
        [7, 2, 1, 4, 3, 6, 5, 0],
    ])
    return prop0 / (1 - nu ** 2) * k[idx]


def material_interpolation(theta, p: float, prop0: float, prop_min: float):
    """Modified SIMP: ``prop_min + theta**p * (prop0 - prop_min)``."""
    return prop_min + np.power(theta, p) * (prop0 - prop_min)


class Mesh:
    """Connectivity and scatter indices shared by every solve on one spec."""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        grid = spec.grid
        r, c = np.divmod(np.arange(grid.n_elements), grid.nx)
        nodes = np.stack([
            grid.node(r + 1, c), grid.node(r + 1, c + 1), grid.node(r, c + 1), grid.node(r, c),
        ], axis=1)
        if spec.physics is Physics.ELASTICITY:
            edof = np.empty((grid.n_elements, 8), dtype=np.int64)
            edof[:, 0::2] = 2 * nodes
            edof[:, 1::2] = 2 * nodes + 1
        else:
            edof = nodes.astype(np.int64)
        self.edof = edof
        self.ke = element_stiffness(spec.physics, 1.0, spec.nu)
        nd = edof.shape[1]
        self.rows = np.repeat(edof, nd, axis=1).ravel()
        self.cols = np.tile(edof, (1, nd)).ravel()
        self.free = spec.free_dofs()
        self.n_dofs = spec.n_dofs

    def element_props(self, theta) -> np.ndarray:
        s = self.spec
        return material_interpolation(theta.ravel(), s.penalty, s.prop0, s.prop_min)

    def assemble_full(self, theta) -> sp.csr_matrix:
        props = self.element_props(theta)
        vals = (props[:, None, None] * self.ke[None]).ravel()
        k = sp.coo_matrix((vals, (self.rows, self.cols)), shape=(self.n_dofs, self.n_dofs)).tocsr()
        k.sum_duplicates()
        return k

    def reduce(self, k_full) -> sp.csc_matrix:
        k = k_full[self.free][:, self.free]
        # exact symmetry; summation order in coo->csr is already deterministic
        return ((k + k.T) * 0.5).tocsc()


@functools.lru_cache(maxsize=16)
def mesh_for(spec: ProblemSpec) -> Mesh:
    return Mesh(spec)


def assemble(theta, spec: ProblemSpec) -> sp.csc_matrix:
    """Global stiffness/conductivity restricted to the free DOFs."""
    theta = check_density(theta, spec)
    mesh = mesh_for(spec)
    return mesh.reduce(mesh.assemble_full(theta))


def _pcg(k, f, tol, maxiter):
    diag = k.diagonal()
    if np.any(diag <= 0):
        raise SolverError("non-positive diagonal entry; matrix is not SPD")
    inv_d = 1.0 / diag
    x = np.zeros_like(f)
    r = f.copy()
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    fnorm = np.linalg.norm(f)
    for it in range(1, maxiter + 1):
        kp = k @ p
        alpha = rz / (p @ kp)
        x += alpha * p
        r -= alpha * kp
        res = np.linalg.norm(r) / fnorm
        if res <= tol:
            return x, it
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"PCG did not converge in {maxiter} iterations (relative residual {res:.3e})")


def solve(k, f, tol: float = 1e-8, maxiter: int | None = None) -> SolveResult:
    """Solve ``k x = f`` for SPD ``k``.

    Sparse LU for systems up to ``DIRECT_SOLVER_MAX_DOFS`` unknowns, Jacobi
    preconditioned CG above that.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    f = np.asarray(f, dtype=np.float64)
    n = f.shape[0]
    if not np.any(f):
        return SolveResult(np.zeros(n), 0.0, 0, 0.0)
    k = sp.csc_matrix(k)
    if n <= DIRECT_SOLVER_MAX_DOFS:
        try:
            x = spla.splu(k).solve(f)
        except RuntimeError as exc:
            raise SolverError(f"singular system: {exc}") from exc
        iterations = 1
    else:
        x, iterations = _pcg(k, f, tol, maxiter or 10 * n)
    residual = float(np.linalg.norm(k @ x - f) / np.linalg.norm(f))
    if not np.isfinite(residual) or residual > tol:
        raise SolverError(f"solve residual {residual:.3e} exceeds tolerance {tol:.1e}")
    return SolveResult(x, float(f @ x), iterations, residual)


def load_vector(spec: ProblemSpec, xi: float) -> np.ndarray:
    """Full nodal load vector for one realization of the uncertain input."""
    lo, hi = spec.xi_range
    if not lo - 1e-12 <= xi <= hi + 1e-12:
        raise ValueError(f"xi={xi} outside the load range [{lo}, {hi}]")
    return load_vectors(spec, np.array([xi]))[:, 0]


def load_vectors(spec: ProblemSpec, xis) -> np.ndarray:
    """Load vectors as columns, shape ``(n_dofs, len(xis))``."""
    xis = np.atleast_1d(np.asarray(xis, dtype=np.float64))
    load = spec.load
    if isinstance(load, FieldLoadRandomPhase):
        return np.outer(load.fx, np.cos(xis)) + np.outer(load.fy, np.sin(xis))
    f = np.zeros((spec.n_dofs, xis.size))
    f[2 * load.node] = load.magnitude * np.sin(xis)
    f[2 * load.node + 1] = -load.magnitude * np.cos(xis)
    return f


def solve_state(theta, spec: ProblemSpec, xi: float, tol: float = 1e-8) -> SolveResult:
    """Solve for one realization; ``field`` is the full nodal vector."""
    theta = check_density(theta, spec)
    mesh = mesh_for(spec)
    k = mesh.reduce(mesh.assemble_full(theta))
    f = load_vector(spec, xi)
    res = solve(k, f[mesh.free], tol)
    u = np.zeros(spec.n_dofs)
    u[mesh.free] = res.field
    return SolveResult(u, res.compliance, res.iterations, res.residual)


def compliance(theta, spec: ProblemSpec, xi: float) -> float:
    return solve_state(theta, spec, xi).compliance


def compliance_many(theta, spec: ProblemSpec, xis, tol: float = 1e-8, chunk: int = 2048) -> np.ndarray:
    """Compliance at many realizations sharing one factorization of ``K``."""
    theta = check_density(theta, spec)
    xis = np.atleast_1d(np.asarray(xis, dtype=np.float64))
    lo, hi = spec.xi_range
    if xis.size and (xis.min() < lo - 1e-12 or xis.max() > hi + 1e-12):
        raise ValueError("realization outside the load range")
    mesh = mesh_for(spec)
    k = mesh.reduce(mesh.assemble_full(theta))
    out = np.empty(xis.size)
    if k.shape[0] <= DIRECT_SOLVER_MAX_DOFS:
        try:
            lu = spla.splu(k)
        except RuntimeError as exc:
            raise SolverError(f"singular system: {exc}") from exc
        for start in range(0, xis.size, chunk):
            f = load_vectors(spec, xis[start:start + chunk])[mesh.free]
            u = lu.solve(f)
            out[start:start + chunk] = np.einsum("ij,ij->j", f, u)
        return out
    for i, xi in enumerate(xis):
        f = load_vector(spec, xi)[mesh.free]
        out[i] = solve(k, f, tol).compliance
    return out
