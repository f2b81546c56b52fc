"""Run configuration: packaged INI defaults, an optional user file, then overrides."""

from __future__ import annotations

import configparser
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

from .transformer import NoisePredictorConfig, ReconstructorConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    resolution: int = 64
    fov_deg: float = 50.0
    radius: float = 2.7
    scenes: int = 128
    appearances: int = 2
    ring_views: int = 6
    random_views: int = 8
    lighting: str = "ambient"
    elevation_min: float = -30.0
    elevation_max: float = 45.0
    seed: int = 0


@dataclass(frozen=True)
class DiffusionConfig:
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    variance: str = "beta"
    drop_rate: float = 0.05
    sampler_steps: int = 50
    guidance: float = 3.0


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "finetune"
    manifest: str = ""
    init_ckpt: str = ""
    steps: int = 1000
    batch_size: int = 1
    lr: float = 3e-4
    warmup: int = 50
    mse_w: float = 1.0
    perc_w: float = 0.5
    n_input: int = 4
    n_novel: int = 4
    input_split: str = "random"
    n_views: int = 6
    input_view_recon: bool = True
    two_stage: bool = True
    lighting_mode: str = "any"
    log_every: int = 10
    ckpt_every: int = 0
    seed: int = 0


# INI section name -> (attribute on RunConfig, dataclass)
SECTIONS = {
    "data": ("data", DataConfig),
    "reconstructor": ("reconstructor", ReconstructorConfig),
    "noise_predictor": ("noise_predictor", NoisePredictorConfig),
    "diffusion": ("diffusion", DiffusionConfig),
    "train": ("train", TrainConfig),
}
# model fields owned by other sections or derived at run time
_DERIVED = {"seed", "n_view_ids", "timesteps", "time_dim"}


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    reconstructor: ReconstructorConfig = field(default_factory=ReconstructorConfig)
    noise_predictor: NoisePredictorConfig = field(default_factory=NoisePredictorConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        validate(self)

    # model configs carry the run seed and the schedule length
    def reconstructor_config(self) -> ReconstructorConfig:
        return replace(self.reconstructor, seed=self.train.seed)

    def noise_predictor_config(self) -> NoisePredictorConfig:
        return replace(self.noise_predictor, seed=self.train.seed,
                       timesteps=self.diffusion.timesteps)

    def to_dict(self) -> dict:
        out = {}
        for section, (attr, _) in SECTIONS.items():
            values = asdict(getattr(self, attr))
            out[section] = {k: v for k, v in values.items()
                            if not (section in ("reconstructor", "noise_predictor")
                                    and k in _DERIVED)}
        return out

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        for section, values in self.to_dict().items():
            parser[section] = {k: _format(v) for k, v in values.items()}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def with_overrides(self, overrides: dict[str, dict[str, object]]) -> "RunConfig":
        parts = {}
        for section, (attr, cls) in SECTIONS.items():
            current = getattr(self, attr)
            updates = {k: _coerce(cls, k, v) for k, v in overrides.get(section, {}).items()
                       if v is not None}
            unknown = set(updates) - {f.name for f in fields(cls)}
            if unknown:
                raise ConfigError(f"unknown key(s) in [{section}]: {sorted(unknown)}")
            parts[attr] = replace(current, **updates)
        bad = set(overrides) - set(SECTIONS)
        if bad:
            raise ConfigError(f"unknown section(s): {sorted(bad)}")
        return RunConfig(**parts)


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(cls, key: str, value):
    types = {f.name: f.type for f in fields(cls)}
    if key not in types:
        raise ConfigError(f"unknown key {key!r} for {cls.__name__}")
    kind = types[key]
    if not isinstance(value, str):
        return value
    try:
        if kind in ("bool", bool):
            low = value.strip().lower()
            if low not in configparser.ConfigParser.BOOLEAN_STATES:
                raise ValueError(value)
            return configparser.ConfigParser.BOOLEAN_STATES[low]
        if kind in ("int", int):
            return int(value)
        if kind in ("float", float):
            return float(value)
    except ValueError:
        raise ConfigError(f"{cls.__name__}.{key}: cannot parse {value!r} as {kind}") from None
    return value.strip()


def validate(cfg: RunConfig) -> None:
    d, t, df = cfg.data, cfg.train, cfg.diffusion
    checks = [
        (0 < d.fov_deg < 180, "data.fov_deg must lie in (0, 180)"),
        (d.resolution >= 1, "data.resolution must be positive"),
        (d.radius > 0, "data.radius must be positive"),
        (d.ring_views in (0, 4, 6, 8), "data.ring_views must be 0, 4, 6 or 8"),
        (d.random_views >= 0, "data.random_views must be non-negative"),
        (d.lighting in ("ambient", "random_env"), "data.lighting must be ambient or random_env"),
        (d.elevation_min <= d.elevation_max, "data elevation range is empty"),
        (t.stage in ("pretrain", "finetune", "diffusion"), "train.stage is invalid"),
        (t.steps > 0, "train.steps must be positive"),
        (t.batch_size > 0, "train.batch_size must be positive"),
        (t.lr > 0, "train.lr must be positive"),
        (t.mse_w >= 0 and t.perc_w >= 0, "loss weights must be non-negative"),
        (t.n_views in (4, 6, 8), "train.n_views must be 4, 6 or 8"),
        (t.n_input >= 1 and t.n_novel >= 0, "train.n_input/n_novel are invalid"),
        (t.input_split in ("random", "ring"), "train.input_split must be random or ring"),
        (t.lighting_mode in ("any", "ambient", "random_env"), "train.lighting_mode is invalid"),
        (t.log_every >= 1, "train.log_every must be positive"),
        (0 < df.beta_start < df.beta_end < 1, "need 0 < beta_start < beta_end < 1"),
        (1 <= df.sampler_steps <= df.timesteps, "sampler_steps must lie in [1, timesteps]"),
        (df.guidance >= 0, "guidance must be non-negative"),
        (0 <= df.drop_rate <= 1, "drop_rate must lie in [0, 1]"),
        (df.variance in ("beta", "posterior"), "diffusion.variance must be beta or posterior"),
        (d.resolution % cfg.reconstructor.patch == 0, "resolution must be divisible by the "
                                                      "reconstructor patch size"),
        (cfg.noise_predictor.image_size % cfg.noise_predictor.patch == 0,
         "noise predictor image size must be divisible by its patch size"),
        (d.resolution % cfg.noise_predictor.image_size == 0,
         "resolution must be a multiple of the noise predictor image size"),
        (cfg.reconstructor.dim % cfg.reconstructor.heads == 0, "reconstructor dim % heads != 0"),
        (cfg.noise_predictor.dim % cfg.noise_predictor.heads == 0,
         "noise predictor dim % heads != 0"),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(message)


def defaults_text() -> str:
    return resources.files("headsplat").joinpath("defaults.ini").read_text()


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Packaged defaults, then ``path`` (if given), then ``overrides`` ({section: {key: value}})."""
    parser = configparser.ConfigParser()
    parser.read_string(defaults_text())
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            parser.read_string(path.read_text())
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
    merged: dict[str, dict] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        merged[section] = dict(parser[section])
    for section, values in (overrides or {}).items():
        merged.setdefault(section, {}).update({k: v for k, v in values.items() if v is not None})
    return RunConfig().with_overrides(merged)
