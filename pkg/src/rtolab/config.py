"""Flat run configuration shared by every CLI stage.

A config file is ``key = value`` lines; ``preset = <name>`` pulls in one of
the built-in presets first, then the remaining keys override it.  Unknown keys
are an error.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from . import kvfile
from .descent import DescentConfig
from .grid import ProblemSpec, build_problem
from .robust import Quadrature, RobustConfig
from .simp import SimpConfig
from .surrogate import SurrogateConfig
from .vae import VaeArchitecture, VaeTrainConfig, pool_window_for


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    preset: str | None = None
    # problem
    problem: str = "l-bracket"
    n: int = 30
    nx: int = 60
    ny: int = 20
    arm_fraction: float = 0.4
    magnitude: float = 1.0
    sink_fraction: float = 0.1
    field_seed: int = 0
    volume_fraction: float = 0.4
    penalty: float = 3.0
    theta_min: float = 1e-3
    prop0: float = 1.0
    nu: float = 0.3
    prop_min_ratio: float | None = None
    # deterministic optimizer
    filter_radius: float | None = None
    move_limit: float = 0.2
    oc_exponent: float = 0.5
    simp_max_iters: int = 200
    change_tol: float = 0.01
    # robust objective
    lam: float = 1.0
    quadrature_m: int = 7
    # corpus
    n_samples: int = 160
    seed: int = 1
    workers: int = 1
    k_exclude: int = 10
    n_test: int = 30
    split_seed: int = 0
    # VAE
    latent_dim: int = 2
    pool_window: int | None = None
    extra_layers: bool = False
    vae_epochs: int = 300
    vae_batch_size: int = 32
    vae_lr: float = 1e-3
    vae_seed: int = 0
    n_generate: int = 1000
    # surrogate
    sur_epochs: int = 400
    sur_batch_size: int = 32
    sur_lr: float = 1e-4
    sur_seed: int = 0
    # latent descent
    eta: float = 0.01
    max_iters: int = 500
    stall_tol: float = 1e-6
    stall_window: int = 10
    n_init: int = 100
    n_restarts: int = 3
    descent_seed: int = 0
    checkpoint_every: int = 10
    standardize: bool = False

    # ---- builders -------------------------------------------------------
    def problem_params(self) -> dict:
        material = {"volume_fraction": self.volume_fraction, "penalty": self.penalty,
                    "theta_min": self.theta_min, "prop0": self.prop0, "nu": self.nu}
        if self.prop_min_ratio is not None:
            material["prop_min_ratio"] = self.prop_min_ratio
        if self.problem == "l-bracket":
            geo = {"n": self.n, "arm_fraction": self.arm_fraction, "magnitude": self.magnitude}
        elif self.problem == "heat-sink":
            geo = {"n": self.n, "sink_fraction": self.sink_fraction, "field_seed": self.field_seed}
        elif self.problem == "cantilever":
            geo = {"nx": self.nx, "ny": self.ny, "magnitude": self.magnitude}
        else:
            raise ConfigError(f"unknown problem {self.problem!r}")
        return {"problem": self.problem, **geo, **material}

    def problem_spec(self) -> ProblemSpec:
        return build_problem(self.problem_params())

    def resolution(self) -> int:
        return self.n if self.problem != "cantilever" else max(self.nx, self.ny)

    def simp_config(self) -> SimpConfig:
        kw = dict(penalty=self.penalty, move_limit=self.move_limit, oc_exponent=self.oc_exponent,
                  max_iters=self.simp_max_iters, change_tol=self.change_tol)
        if self.filter_radius is not None:
            kw["filter_radius"] = self.filter_radius
        return SimpConfig.for_resolution(self.resolution(), **kw)

    def robust_config(self) -> RobustConfig:
        return RobustConfig(self.lam, Quadrature(self.quadrature_m))

    def vae_architecture(self, shape) -> VaeArchitecture:
        window = self.pool_window or pool_window_for(max(shape))
        return VaeArchitecture.scaled(shape, self.latent_dim, window, self.extra_layers)

    def vae_train_config(self) -> VaeTrainConfig:
        return VaeTrainConfig(self.vae_epochs, self.vae_batch_size, self.vae_lr, self.vae_seed)

    def surrogate_config(self) -> SurrogateConfig:
        return SurrogateConfig(self.sur_epochs, self.sur_batch_size, self.sur_lr, self.sur_seed,
                               self.extra_layers)

    def descent_config(self) -> DescentConfig:
        return DescentConfig(self.eta, self.max_iters, self.stall_tol, self.stall_window, self.n_init,
                             self.n_restarts, self.descent_seed, self.checkpoint_every, self.standardize)

    # ---- I/O ------------------------------------------------------------
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path) -> None:
        kvfile.dump(self.to_dict(), path, header="resolved rtolab run configuration")

    def updated(self, values: dict) -> "RunConfig":
        values = dict(values)
        known = {f.name: f for f in dataclasses.fields(self)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if values.get("preset") not in (None, self.preset):
            base = preset(values["preset"])
            current = {k: v for k, v in self.to_dict().items() if v != getattr(RunConfig(), k)}
            self = base.updated({k: v for k, v in current.items() if k != "preset"})
        out = dataclasses.replace(self)
        for key, value in values.items():
            setattr(out, key, _coerce(known[key], value))
        return out


def _coerce(f: dataclasses.Field, value):
    kind = str(f.type)
    if value is None:
        if "None" in kind:
            return None
        raise ConfigError(f"{f.name} may not be empty")
    try:
        if kind.startswith("bool"):
            if isinstance(value, str):
                if value.lower() not in ("true", "false"):
                    raise ValueError(value)
                return value.lower() == "true"
            return bool(value)
        if kind.startswith("int"):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind.startswith("float"):
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {f.name}: {value!r}") from exc


PRESETS: dict[str, dict] = {
    "l-bracket-100": {
        "problem": "l-bracket", "n": 100, "n_samples": 1000, "k_exclude": 10, "n_test": 90,
        "vae_epochs": 200, "sur_epochs": 200,
    },
    "l-bracket-30": {
        "problem": "l-bracket", "n": 30, "n_samples": 160, "k_exclude": 10, "n_test": 30,
    },
    "heat-sink-128": {
        "problem": "heat-sink", "n": 128, "n_samples": 800, "k_exclude": 10, "n_test": 80,
        "extra_layers": True, "vae_epochs": 200, "sur_epochs": 200,
    },
    "heat-sink-32": {
        "problem": "heat-sink", "n": 32, "n_samples": 160, "k_exclude": 10, "n_test": 30,
    },
    "cantilever-60x20": {
        "problem": "cantilever", "nx": 60, "ny": 20, "volume_fraction": 0.5, "n_samples": 20,
        "k_exclude": 0, "n_test": 0,
    },
}


def preset(name: str) -> RunConfig:
    try:
        values = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    return RunConfig(preset=name).updated(values)


def load_config(source=None, overrides: dict | None = None) -> RunConfig:
    """``source`` is a preset name, a config file path, or None (defaults)."""
    cfg = RunConfig()
    if source is not None:
        source = str(source)
        if source in PRESETS and not Path(source).exists():
            cfg = preset(source)
        else:
            path = Path(source)
            if not path.is_file():
                raise ConfigError(f"config {source!r} is neither a file nor a preset")
            try:
                values = kvfile.load(path)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            if values.get("preset"):
                cfg = preset(values["preset"])
            cfg = cfg.updated(values)
    if overrides:
        cfg = cfg.updated(overrides)
    return cfg


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = kvfile.parse_value(value)
    return out
