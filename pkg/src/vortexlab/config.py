"""Structured key=value experiment configuration with strict schema checks.

Files hold one `key = value` pair per line; `#` starts a comment.  Values
are typed per the schema below (ints, floats, booleans, strings, or
bracketed lists), unknown keys are rejected by name, and invariants are
enforced after defaults are applied.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .kernel import KernelConfig
from .particle import SimConfig

EXPERIMENTS = (
    "pde_validation",
    "chaos_rate",
    "regularity_suite",
    "large_deviation",
    "fluctuation",
    "simulate",
)

# key -> (type tag, default); required keys use the sentinel _REQUIRED.
_REQUIRED = object()
_SCHEMA: dict[str, tuple[str, object]] = {
    "experiment": ("str", _REQUIRED),
    "output_dir": ("str", "out"),
    "threads": ("int", 1),
    "N_list": ("int_list", []),
    "times": ("float_list", [0.5]),
    "ensemble.n_runs": ("int", 64),
    "ensemble.base_seed": ("int", 0),
    "sim.n_particles": ("int", 256),
    "sim.sigma": ("float", 1.0),
    "sim.dt": ("float", 1e-3),
    "sim.t_end": ("float", 1.0),
    "sim.kernel_epsilon": ("float", 0.0),
    "sim.drift_method": ("str", "direct"),
    "sim.treecode_theta": ("float", -1.0),
    "sim.snapshot_every": ("int", 1),
    "pde.n": ("int", 256),
    "pde.half_width": ("float", 12.0),
    "pde.dt": ("float", 1e-3),
    "pde.snapshot_dt": ("float", 0.05),
    "pde.t_end": ("float", 1.0),
    "pde.tolerance": ("float", 1e-3),
    "init.kind": ("str", "lamb_oseen"),
    "init.t0": ("float", 0.25),
    "chaos.estimator": ("str", "kde"),
    "chaos.bandwidth": ("float", -1.0),
    "chaos.slope_min": ("float", -0.65),
    "chaos.slope_max": ("float", -0.35),
    "chaos.r2_min": ("float", 0.95),
    "chaos.ckp_tolerance": ("float", 0.02),
    "fluct.n_grid": ("int", 128),
    "fluct.t0_runs": ("int", 3000),
    "fluct.max_discrepancy": ("float", 0.25),
    "ldp.p_max": ("int", 64),
    "ldp.cancellation_tol": ("float", 1e-5),
    "ldp.c1_stability_tol": ("float", 0.05),
}


@dataclass(frozen=True)
class PdeConfig:
    n: int = 256
    half_width: float = 12.0
    dt: float = 1e-3
    snapshot_dt: float = 0.05
    t_end: float = 1.0
    tolerance: float = 1e-3

    def __post_init__(self) -> None:
        if self.dt <= 0 or self.snapshot_dt <= 0:
            raise ConfigError("pde.dt and pde.snapshot_dt must be > 0")
        if self.t_end < 0:
            raise ConfigError("pde.t_end must be >= 0")
        ratio = self.snapshot_dt / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("pde.snapshot_dt must be a multiple of pde.dt")


@dataclass(frozen=True)
class EnsembleConfig:
    n_runs: int = 64
    base_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_runs < 1:
            raise ConfigError("ensemble.n_runs must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    sim: SimConfig
    pde: PdeConfig
    ensemble: EnsembleConfig
    N_list: tuple[int, ...]
    times: tuple[float, ...]
    output_dir: str
    threads: int = 1
    init_kind: str = "lamb_oseen"
    init_t0: float = 0.25
    options: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(
                f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}"
            )
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.experiment == "chaos_rate":
            if len(self.N_list) == 0:
                raise ConfigError("chaos_rate requires a nonempty N_list")
            if any(b <= a for a, b in zip(self.N_list, self.N_list[1:])):
                raise ConfigError("N_list must be strictly increasing")
        if self.init_kind not in ("lamb_oseen", "mixture3"):
            raise ConfigError(f"unknown init.kind {self.init_kind!r}")


def _parse_scalar(raw: str, kind: str, key: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "str":
            return raw.strip("\"'")
        if kind in ("int_list", "float_list"):
            if not (raw.startswith("[") and raw.endswith("]")):
                raise ValueError("expected [a, b, ...]")
            inner = raw[1:-1].strip()
            items = [s.strip() for s in inner.split(",")] if inner else []
            cast = int if kind == "int_list" else float
            return [cast(s) for s in items if s]
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: cannot parse {raw!r} as {kind}") from exc
    raise ConfigError(f"internal: unknown schema kind {kind}")


def parse_pairs(pairs: dict[str, str]) -> ExperimentConfig:
    """Validate raw key/value strings against the schema and build a config."""
    values: dict[str, object] = {}
    for key, raw in pairs.items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown configuration key {key!r}")
        kind, _ = _SCHEMA[key]
        values[key] = _parse_scalar(raw, kind, key)
    for key, (kind, default) in _SCHEMA.items():
        if key not in values:
            if default is _REQUIRED:
                raise ConfigError(f"missing required key {key!r}")
            values[key] = default

    theta = values["sim.treecode_theta"]
    try:
        sim = SimConfig(
            n_particles=values["sim.n_particles"],
            sigma=values["sim.sigma"],
            dt=values["sim.dt"],
            t_end=values["sim.t_end"],
            seed=values["ensemble.base_seed"],
            kernel=KernelConfig(epsilon=values["sim.kernel_epsilon"]),
            drift_method=values["sim.drift_method"],
            treecode_theta=None if theta < 0 else theta,
            snapshot_every=values["sim.snapshot_every"],
        )
        pde = PdeConfig(
            n=values["pde.n"],
            half_width=values["pde.half_width"],
            dt=values["pde.dt"],
            snapshot_dt=values["pde.snapshot_dt"],
            t_end=values["pde.t_end"],
            tolerance=values["pde.tolerance"],
        )
    except (ValueError, ConfigError) as exc:
        raise ConfigError(str(exc)) from exc
    options = {
        k.split(".", 1)[1]: v
        for k, v in values.items()
        if k.startswith(("chaos.", "fluct.", "ldp."))
    }
    options["chaos_estimator"] = values["chaos.estimator"]
    return ExperimentConfig(
        experiment=values["experiment"],
        sim=sim,
        pde=pde,
        ensemble=EnsembleConfig(
            n_runs=values["ensemble.n_runs"], base_seed=values["ensemble.base_seed"]
        ),
        N_list=tuple(values["N_list"]),
        times=tuple(values["times"]),
        output_dir=values["output_dir"],
        threads=values["threads"],
        init_kind=values["init.kind"],
        init_t0=values["init.t0"],
        options=options,
    )


def parse_config(path: str | Path) -> ExperimentConfig:
    """Parse a key = value file; unknown keys and bad values are errors."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key in pairs:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        pairs[key] = raw
    try:
        return parse_pairs(pairs)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def config_echo(cfg: ExperimentConfig) -> dict:
    """Flat JSON-able echo of every effective parameter."""
    return {
        "experiment": cfg.experiment,
        "output_dir": cfg.output_dir,
        "threads": cfg.threads,
        "N_list": list(cfg.N_list),
        "times": list(cfg.times),
        "ensemble.n_runs": cfg.ensemble.n_runs,
        "ensemble.base_seed": cfg.ensemble.base_seed,
        "sim.n_particles": cfg.sim.n_particles,
        "sim.sigma": cfg.sim.sigma,
        "sim.dt": cfg.sim.dt,
        "sim.t_end": cfg.sim.t_end,
        "sim.kernel_epsilon": cfg.sim.kernel.epsilon,
        "sim.drift_method": cfg.sim.drift_method,
        "sim.treecode_theta": cfg.sim.treecode_theta,
        "sim.snapshot_every": cfg.sim.snapshot_every,
        "pde.n": cfg.pde.n,
        "pde.half_width": cfg.pde.half_width,
        "pde.dt": cfg.pde.dt,
        "pde.snapshot_dt": cfg.pde.snapshot_dt,
        "pde.t_end": cfg.pde.t_end,
        "pde.tolerance": cfg.pde.tolerance,
        "init.kind": cfg.init_kind,
        "init.t0": cfg.init_t0,
        "options": cfg.options,
    }
