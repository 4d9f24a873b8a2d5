"""Flat ``key = value`` run configuration with validation at load time."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .geometry import (ConstantWeight, Domain, GaussianBump, GaussianModulatedWeight, make_euclidean,
                       make_folded, make_perturbed)
from .transform import Grid

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config"]


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


def _floats(text: str) -> tuple:
    parts = [p for p in text.replace(",", " ").split() if p]
    return tuple(float(p) for p in parts)


@dataclass(frozen=True)
class RunConfig:
    """All run parameters; every field is a config key of the same name."""

    dimension: int = 2
    half_width: float = 1.0
    pad: float = 0.25
    inner: str = "box"
    grid: int = 128
    phi: str = "euclidean"
    bump_center: tuple = (0.1, 0.05)
    bump_width: float = 0.3
    epsilon: float = 0.01
    fold_period: float = 0.9375
    weight: str = "constant"
    weight_value: float = 1.0
    weight_amplitude: float = 0.3
    weight_center: tuple = (0.0, 0.0)
    weight_width: float = 0.5
    weight_tilt: float = 0.5
    n_theta: int = 180
    n_s: int = 0
    delta_factor: float = 2.0
    phantom: str = "disk"
    phantom_radius: float = 1.0
    phantom_sigma: float = 0.3
    supersample: int = 1
    cg_tol: float = 1e-6
    cg_max_iter: int = 200
    precondition: bool = True
    adjoint_mode: str = "transpose"
    lambdas: tuple = (8.0, 16.0, 32.0, 64.0)
    probe_grid: int = 256
    probe_n_theta: int = 360
    probe_x0: tuple = (0.0, 0.0)
    probe_xi: tuple = (1.0, 0.0)
    fbi_lambdas: tuple = (8.0, 12.0, 16.0, 24.0, 32.0, 48.0, 64.0)
    fbi_x0: tuple = (1.0, 0.0)
    fbi_directions: int = 8
    conormal_s0: float = 0.5
    conormal_theta: tuple = (1.0, 0.0)
    deltas: tuple = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1)
    small_grid: int = 16
    small_n_theta: int = 64
    couple_weight: bool = True
    bolker_n_x: int = 33
    bolker_n_theta: int = 64
    seed: int = 0
    threads: int = 1
    output_dir: str = "out"

    # -- construction ---------------------------------------------------------
    def __post_init__(self):
        self._validate()

    def _validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.dimension in (2, 3), "dimension must be 2 or 3")
        need(self.half_width > 0, "half_width must be positive")
        need(0 <= self.pad <= 2, "pad must lie in [0, 2]")
        need(self.inner in ("box", "ball"), "inner must be box or ball")
        need(self.grid >= 4, "grid must be >= 4")
        need(self.phi in ("euclidean", "perturbed", "folded"), "phi must be euclidean, perturbed or folded")
        need(len(self.bump_center) == self.dimension, "bump_center length must equal dimension")
        need(self.bump_width > 0, "bump_width must be positive")
        need(np.isfinite(self.epsilon), "epsilon must be finite")
        need(self.fold_period > 0, "fold_period must be positive")
        need(self.phi != "folded" or self.dimension == 2, "the folded family is planar")
        need(self.weight in ("constant", "gaussian-modulated"), "weight must be constant or gaussian-modulated")
        need(self.weight_value != 0, "weight_value must be nonzero")
        need(abs(self.weight_amplitude) * (1 + abs(self.weight_tilt)) < 1,
             "weight would vanish: need |weight_amplitude| * (1 + |weight_tilt|) < 1")
        need(len(self.weight_center) == self.dimension, "weight_center length must equal dimension")
        need(self.weight_width > 0, "weight_width must be positive")
        need(self.n_theta >= 1, "n_theta must be positive")
        need(self.n_s >= 0, "n_s must be >= 0 (0 selects automatic coverage)")
        need(self.delta_factor > 0, "delta_factor must be positive")
        need(self.phantom in ("disk", "gaussian", "shepp-logan", "ball"), "unknown phantom")
        need(self.phantom != "shepp-logan" or self.dimension == 2, "shepp-logan requires dimension 2")
        need(self.phantom != "ball" or self.dimension == 3, "ball requires dimension 3")
        need(self.phantom_radius > 0 and self.phantom_sigma > 0, "phantom radius and sigma must be positive")
        need(self.supersample >= 1, "supersample must be >= 1")
        need(self.cg_tol > 0, "cg_tol must be positive")
        need(self.cg_max_iter >= 1, "cg_max_iter must be positive")
        need(self.adjoint_mode in ("transpose", "continuous"), "adjoint_mode must be transpose or continuous")
        for name in ("lambdas", "fbi_lambdas"):
            lam = np.asarray(getattr(self, name))
            need(lam.size >= 2 and np.all(lam > 0) and np.all(np.diff(lam) > 0),
                 f"{name} must be a positive strictly increasing list")
        need(len(self.fbi_lambdas) >= 4, "fbi_lambdas needs at least 4 values")
        for name in ("probe_grid", "grid"):
            h = 2 * self.half_width * (1 + self.pad) / getattr(self, name)
            lam = self.lambdas if name == "probe_grid" else self.fbi_lambdas
            need(max(lam) * h <= np.pi / 2, f"Nyquist violation: max lambda * h > pi/2 for {name}")
        need(self.probe_n_theta >= 1, "probe_n_theta must be positive")
        for name in ("probe_x0", "probe_xi", "fbi_x0", "conormal_theta"):
            need(len(getattr(self, name)) == self.dimension, f"{name} length must equal dimension")
        need(np.linalg.norm(self.probe_xi) > 0 and np.linalg.norm(self.conormal_theta) > 0,
             "direction vectors must be nonzero")
        need(self.fbi_directions >= 1, "fbi_directions must be positive")
        d = np.asarray(self.deltas)
        need(d.size >= 2 and np.all(d >= 0) and np.all(np.diff(d) > 0),
             "deltas must be a nonnegative strictly increasing list")
        need(4 <= self.small_grid <= 24, "small_grid must lie in [4, 24]")
        need(self.small_n_theta >= 1, "small_n_theta must be positive")
        need(self.bolker_n_x >= 2 and self.bolker_n_theta >= 3, "bolker sample counts too small")
        need(self.threads >= 1, "threads must be positive")
        need(self.seed >= 0, "seed must be nonnegative")

    # -- factories ----------------------------------------------------------
    @property
    def domain(self) -> Domain:
        return Domain(n=self.dimension, half_width=self.half_width, pad=self.pad, inner=self.inner)

    def make_grid(self, size: int | None = None) -> Grid:
        return Grid(self.domain, size or self.grid)

    @property
    def bump(self) -> GaussianBump:
        return GaussianBump(center=tuple(self.bump_center), width=self.bump_width)

    def defining_function(self, epsilon: float | None = None):
        if self.phi == "euclidean":
            return make_euclidean(self.dimension)
        if self.phi == "perturbed":
            eps = self.epsilon if epsilon is None else epsilon
            return make_perturbed(self.bump, eps, self.domain)
        return make_folded(period=self.fold_period)

    def weight_function(self):
        if self.weight == "constant":
            return ConstantWeight(self.weight_value, n=self.dimension)
        return GaussianModulatedWeight(value=self.weight_value, amplitude=self.weight_amplitude,
                                       center=tuple(self.weight_center), width=self.weight_width,
                                       tilt=self.weight_tilt, n=self.dimension)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


_TYPES = {f.name: f for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    default = _TYPES[key].default
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return _floats(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def parse_config(text: str, **overrides) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw)
    values.update(overrides)
    return RunConfig(**values)


def load_config(path, **overrides) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(), **overrides)
