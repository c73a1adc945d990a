"""JSON experiment configuration.

Schema (every section optional except where noted; unknown keys are errors)::

    {
      "schedule":   {"T": 1000, "beta_start": 1e-4, "beta_end": 0.02, "variance_param": "beta"},
      "world":      {"N": 3, "M": 3, "seed": 0, "spectral_cap": 1.0, "sigma_y": 0.2, "identity": false},
      "world_file": "path/to/world.json",            # replaces "world"
      "estimators": {"denoiser": "gaussian", "restorer": "mmse", "fuser": "exact"},
      "sampler":    {"mode": "accelerated", "tau": 5, "stride": 1, "eta": 0.0,
                     "seed": 0, "num_samples": 1},
      "observations": {"count": 1, "seed": 0},
      "output_dir": "out",
      "tolerances": {"score_abs": 1e-8, "merged_rel": 1e-10, "mc_se": 3.0, "z_max": 4.0, "var_ratio": 0.03}
    }

``DPIR_SEED`` in the environment overrides ``sampler.seed``.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .oracle import LinearGaussianWorld, make_world
from .sampler import Mode, SamplerConfig
from .schedule import NoiseSchedule, VarianceParam, build_linear_schedule


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending key."""


@dataclass
class ScheduleSection:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    variance_param: str = "beta"


@dataclass
class WorldSection:
    N: int = 3
    M: int = 3
    seed: int = 0
    spectral_cap: float = 1.0
    sigma_y: float = 0.2
    identity: bool = False


@dataclass
class EstimatorSection:
    denoiser: str = "gaussian"
    restorer: str = "mmse"
    fuser: str = "exact"


@dataclass
class SamplerSection:
    mode: str = "accelerated"
    tau: int = 5
    stride: int = 1
    eta: float = 0.0
    seed: int = 0
    num_samples: int = 1


@dataclass
class ObservationSection:
    count: int = 1
    seed: int = 0


@dataclass
class ToleranceSection:
    score_abs: float = 1e-8
    merged_rel: float = 1e-10
    mc_se: float = 3.0
    z_max: float = 4.0
    var_ratio: float = 0.03


@dataclass
class ExperimentConfig:
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    world: WorldSection | None = field(default_factory=WorldSection)
    world_file: str | None = None
    estimators: EstimatorSection = field(default_factory=EstimatorSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    observations: ObservationSection = field(default_factory=ObservationSection)
    output_dir: str = "out"
    tolerances: ToleranceSection = field(default_factory=ToleranceSection)

    # -- resolution ---------------------------------------------------------
    def build_schedule(self) -> NoiseSchedule:
        sc = self.schedule
        try:
            return build_linear_schedule(sc.T, sc.beta_start, sc.beta_end, VarianceParam(sc.variance_param))
        except ValueError as exc:
            raise ConfigError(f"schedule: {exc}") from exc

    def build_world(self, base_dir: Path | None = None) -> LinearGaussianWorld:
        if self.world_file is not None:
            path = Path(self.world_file)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            try:
                return LinearGaussianWorld.load(path)
            except (OSError, KeyError, ValueError) as exc:
                raise ConfigError(f"world_file: {exc}") from exc
        w = self.world
        try:
            return make_world(w.N, w.M, w.seed, w.spectral_cap, w.sigma_y, identity=w.identity)
        except ValueError as exc:
            raise ConfigError(f"world: {exc}") from exc

    def sampler_config(self) -> SamplerConfig:
        sp = self.sampler
        try:
            return SamplerConfig(
                T=self.schedule.T, tau=sp.tau, mode=Mode(sp.mode), stride=sp.stride, eta=sp.eta,
                variance_param=VarianceParam(self.schedule.variance_param), seed=sp.seed,
                num_samples=sp.num_samples,
            )
        except ValueError as exc:
            raise ConfigError(f"sampler: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


_SECTIONS = {
    "schedule": ScheduleSection,
    "world": WorldSection,
    "estimators": EstimatorSection,
    "sampler": SamplerSection,
    "observations": ObservationSection,
    "tolerances": ToleranceSection,
}

_TYPES = {"int": int, "float": (int, float), "str": str, "bool": bool}


def _section(cls, raw, name: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected an object")
    known = {f.name: f for f in fields(cls)}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown key '{name}.{key}'")
        want = _TYPES[known[key].type]
        bad_bool = isinstance(value, bool) and known[key].type != "bool"
        if bad_bool or not isinstance(value, want):
            raise ConfigError(f"'{name}.{key}' must be of type {known[key].type}, got {value!r}")
    return cls(**raw)


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    top = {"schedule", "world", "world_file", "estimators", "sampler", "observations", "output_dir", "tolerances"}
    for key in raw:
        if key not in top:
            raise ConfigError(f"unknown key '{key}'")
    kw = {}
    for key, cls in _SECTIONS.items():
        if key in raw:
            kw[key] = _section(cls, raw[key], key)
    for key in ("world_file", "output_dir"):
        if key in raw:
            if not isinstance(raw[key], str):
                raise ConfigError(f"'{key}' must be a string")
            kw[key] = raw[key]
    if "world_file" in raw:
        if "world" in raw:
            raise ConfigError("'world' and 'world_file' are mutually exclusive")
        kw["world"] = None
    cfg = ExperimentConfig(**kw)
    env_seed = os.environ.get("DPIR_SEED")
    if env_seed is not None:
        try:
            cfg.sampler.seed = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"DPIR_SEED must be an integer, got {env_seed!r}") from exc
    cfg.sampler_config()  # validate eagerly
    try:
        VarianceParam(cfg.schedule.variance_param)
    except ValueError as exc:
        raise ConfigError(f"schedule.variance_param: {exc}") from exc
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return parse_config(raw)
