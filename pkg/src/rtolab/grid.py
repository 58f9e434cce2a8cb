"""Rectangular design domains, boundary conditions and problem presets.

All flattened fields use row-major ordering with the origin at the top-left
pixel.  Nodes are numbered the same way on the ``(ny + 1) x (nx + 1)`` node
lattice, so node ``(row, col)`` has index ``row * (nx + 1) + col``.  For
elasticity, node ``i`` owns DOFs ``2 i`` (x, positive right) and ``2 i + 1``
(y, positive up).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Union

import numpy as np


class Physics(str, enum.Enum):
    ELASTICITY = "elasticity"
    HEAT = "heat"

    @property
    def dofs_per_node(self) -> int:
        return 2 if self is Physics.ELASTICITY else 1


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    element_size: float = 1.0

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid needs at least 2x2 elements, got {self.nx}x{self.ny}")
        if self.element_size <= 0:
            raise ValueError("element_size must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    def node(self, row, col):
        return row * (self.nx + 1) + col


@dataclass(frozen=True, eq=False)
class PointLoadRandomAngle:
    """Point load of fixed magnitude; the angle is measured counter-clockwise
    from the downward vertical."""

    node: int
    magnitude: float
    angle_range: tuple[float, float] = (0.0, np.pi)


@dataclass(frozen=True, eq=False)
class FieldLoadRandomPhase:
    """Nodal load ``F = fx cos(xi) + fy sin(xi)``."""

    fx: np.ndarray
    fy: np.ndarray
    phase_range: tuple[float, float] = (0.0, np.pi / 2)


LoadModel = Union[PointLoadRandomAngle, FieldLoadRandomPhase]


def load_range(load: LoadModel) -> tuple[float, float]:
    if isinstance(load, PointLoadRandomAngle):
        return load.angle_range
    return load.phase_range


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """A complete compliance problem on a regular grid.

    ``params`` records the preset name and builder arguments so the spec can
    be rebuilt from a flat config; it is what gets hashed for provenance.
    """

    physics: Physics
    grid: GridSpec
    dirichlet: np.ndarray
    load: LoadModel
    passive: np.ndarray
    volume_fraction: float = 0.4
    penalty: float = 3.0
    theta_min: float = 1e-3
    prop0: float = 1.0
    nu: float = 0.3
    prop_min_ratio: float = 1e-9
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        dirichlet = np.unique(np.asarray(self.dirichlet, dtype=np.int64))
        passive = np.asarray(self.passive, dtype=bool).reshape(self.grid.shape)
        if dirichlet.size == 0:
            raise ValueError("at least one Dirichlet DOF is required")
        if dirichlet[0] < 0 or dirichlet[-1] >= self.n_dofs:
            raise ValueError("Dirichlet DOF index out of range")
        if not 0.0 < self.volume_fraction <= 1.0:
            raise ValueError(f"volume_fraction must lie in (0, 1], got {self.volume_fraction}")
        if self.penalty < 1.0:
            raise ValueError("penalty must be >= 1")
        if not 0.0 < self.theta_min < 1.0:
            raise ValueError("theta_min must lie in (0, 1)")
        if passive.all():
            raise ValueError("no designable elements")
        lo, hi = load_range(self.load)
        if not lo < hi:
            raise ValueError("uncertain range must satisfy lo < hi")
        if isinstance(self.load, FieldLoadRandomPhase):
            if len(self.load.fx) != self.grid.n_nodes or len(self.load.fy) != self.grid.n_nodes:
                raise ValueError("field load vectors must have one entry per node")
        dirichlet.flags.writeable = False
        passive.flags.writeable = False
        object.__setattr__(self, "dirichlet", dirichlet)
        object.__setattr__(self, "passive", passive)

    @property
    def dofs_per_node(self) -> int:
        return self.physics.dofs_per_node

    @property
    def n_dofs(self) -> int:
        return self.grid.n_nodes * self.dofs_per_node

    @property
    def prop_min(self) -> float:
        return self.prop_min_ratio * self.prop0

    @property
    def designable(self) -> np.ndarray:
        return ~self.passive

    @property
    def n_designable(self) -> int:
        return int(self.designable.sum())

    @property
    def xi_range(self) -> tuple[float, float]:
        return load_range(self.load)

    def free_dofs(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n_dofs), self.dirichlet)

    def uniform_design(self, value=None) -> np.ndarray:
        theta = np.full(self.grid.shape, self.volume_fraction if value is None else value)
        theta[self.passive] = self.theta_min
        return theta

    def volume(self, theta) -> float:
        """Volume fraction over the designable elements."""
        theta = np.asarray(theta).reshape(self.grid.shape)
        return float(theta[self.designable].mean())


def check_density(theta, spec: ProblemSpec) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.size != spec.grid.n_elements:
        raise ValueError(f"density field has {theta.size} entries, grid has {spec.grid.n_elements}")
    theta = theta.reshape(spec.grid.shape)
    if not np.all(np.isfinite(theta)):
        raise ValueError("density field has non-finite entries")
    # small slack for float32 round-trips of theta_min
    if theta.min() < spec.theta_min * (1 - 1e-6) or theta.max() > 1.0 + 1e-12:
        raise ValueError("densities must lie in [theta_min, 1]")
    return theta


def apply_passive(theta, mask, theta_min: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if theta.shape != mask.shape:
        if theta.size != mask.size:
            raise ValueError(f"shape mismatch: {theta.shape} vs {mask.shape}")
        mask = mask.reshape(theta.shape)
    out = theta.copy()
    out[mask] = theta_min
    return out


def _material_kwargs(kw):
    allowed = {"volume_fraction", "penalty", "theta_min", "prop0", "nu", "prop_min_ratio"}
    unknown = set(kw) - allowed
    if unknown:
        raise TypeError(f"unexpected arguments: {sorted(unknown)}")
    return kw


def make_l_bracket(n: int = 100, arm_fraction: float = 0.4, magnitude: float = 1.0,
                   **material) -> ProblemSpec:
    """Square ``n x n`` grid with the top-right block passive.

    The vertical arm (columns ``< arm``) is clamped along its top edge and a
    point load of random angle acts at the mid-height node of the right edge
    of the horizontal arm (rows ``>= n - arm``).
    """
    if n < 10:
        raise ValueError("L-bracket needs n >= 10")
    if not 0.0 < arm_fraction < 1.0:
        raise ValueError("arm_fraction must lie in (0, 1)")
    arm = int(round(arm_fraction * n))
    if arm >= n:
        raise ValueError("empty passive region is not an L")
    if arm <= 0:
        raise ValueError("arm_fraction leaves no designable region")
    grid = GridSpec(n, n)
    rows, cols = np.indices(grid.shape)
    passive = (cols >= arm) & (rows < n - arm)

    top_nodes = grid.node(0, np.arange(arm + 1))
    dirichlet = np.concatenate([2 * top_nodes, 2 * top_nodes + 1])
    load_node = int(grid.node(n - arm // 2, n))
    load = PointLoadRandomAngle(node=load_node, magnitude=float(magnitude), angle_range=(0.0, np.pi))
    params = {"problem": "l-bracket", "n": n, "arm_fraction": arm_fraction, "magnitude": magnitude}
    material = _material_kwargs(material)
    params.update(material)
    return ProblemSpec(Physics.ELASTICITY, grid, dirichlet, load, passive, params=params, **material)


def make_heat_sink(n: int = 128, sink_fraction: float = 0.1, field_seed: int = 0,
                   **material) -> ProblemSpec:
    """Square conduction domain with a fixed-temperature sink centred on the
    left edge and random nodal heat-source fields ``fx``, ``fy`` ~ U[0, 1]."""
    if n < 10:
        raise ValueError("heat sink needs n >= 10")
    if not 0.0 < sink_fraction <= 1.0:
        raise ValueError("sink_fraction must lie in (0, 1]")
    grid = GridSpec(n, n)
    n_sink = max(1, int(round(sink_fraction * (n + 1))))
    start = (n + 1 - n_sink) // 2
    dirichlet = grid.node(np.arange(start, start + n_sink), 0)
    rng = np.random.default_rng(field_seed)
    fx = rng.uniform(0.0, 1.0, grid.n_nodes)
    fy = rng.uniform(0.0, 1.0, grid.n_nodes)
    fx.flags.writeable = False
    fy.flags.writeable = False
    load = FieldLoadRandomPhase(fx=fx, fy=fy, phase_range=(0.0, np.pi / 2))
    passive = np.zeros(grid.shape, dtype=bool)
    material = _material_kwargs(material)
    material.setdefault("prop_min_ratio", 1e-2)
    params = {"problem": "heat-sink", "n": n, "sink_fraction": sink_fraction, "field_seed": field_seed}
    params.update(material)
    return ProblemSpec(Physics.HEAT, grid, dirichlet, load, passive, params=params, **material)


def make_cantilever(nx: int = 60, ny: int = 20, magnitude: float = 1.0, **material) -> ProblemSpec:
    """Left edge clamped, point load at the mid-height node of the right edge.

    At ``xi = 0`` the load points straight down.
    """
    grid = GridSpec(nx, ny)
    left = grid.node(np.arange(ny + 1), 0)
    dirichlet = np.concatenate([2 * left, 2 * left + 1])
    load = PointLoadRandomAngle(node=int(grid.node(ny // 2, nx)), magnitude=float(magnitude))
    passive = np.zeros(grid.shape, dtype=bool)
    material = _material_kwargs(material)
    params = {"problem": "cantilever", "nx": nx, "ny": ny, "magnitude": magnitude}
    params.update(material)
    return ProblemSpec(Physics.ELASTICITY, grid, dirichlet, load, passive, params=params, **material)


_BUILDERS = {
    "l-bracket": make_l_bracket,
    "heat-sink": make_heat_sink,
    "cantilever": make_cantilever,
}


def build_problem(params: dict) -> ProblemSpec:
    """Rebuild a spec from its ``params`` record."""
    params = dict(params)
    kind = params.pop("problem")
    try:
        builder = _BUILDERS[kind]
    except KeyError:
        raise ValueError(f"unknown problem {kind!r}") from None
    return builder(**params)
