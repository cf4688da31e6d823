"""Experiment configuration: file loading, defaults, and provenance.

Config files are TOML or JSON with sections codec / grid / channel / link /
learning / run; every field has a default, so an empty file is a valid
experiment (the reference parameter set: 1200 subcarriers, 25 devices,
20 dB SNR, 3-sample receiver offset).  ``resolved()`` returns the fully
expanded dictionary in the same schema, so any emitted summary can be fed
back in as a config file to reproduce a run exactly.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .channel import (
    DEFAULT_FFT_SIZE,
    DEFAULT_SAMPLE_RATE,
    DEFAULT_SPACING,
    ChannelConfig,
    default_t_sync,
)
from .codec import BalancedConfig
from .errors import ConfigError
from .feel import LearnConfig
from .link import LinkConfig

__all__ = [
    "DataConfig",
    "ExperimentConfig",
    "load_config",
    "config_from_dict",
    "config_hash",
]


@dataclass(frozen=True)
class DataConfig:
    """Task and dataset selection for the training subcommand."""

    task: str = "synthetic"  # "synthetic" | "mnist"
    partition: str = "homogeneous"  # "homogeneous" | "heterogeneous_concentric"
    classes: int = 10
    features: int = 20
    train_size: int = 5000
    test_size: int = 2000
    separation: float = 3.0
    hidden: int = 0  # 0 = softmax regression, > 0 = one-hidden-layer net
    mnist_dir: str | None = None

    def __post_init__(self):
        if self.task not in ("synthetic", "mnist"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.partition not in ("homogeneous", "heterogeneous_concentric"):
            raise ConfigError(f"unknown partition {self.partition!r}")
        if self.hidden < 0:
            raise ConfigError("hidden layer width must be >= 0")


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved parameters for one experiment."""

    codec: BalancedConfig = field(default_factory=lambda: BalancedConfig(5, 2, 0.1))
    channel: ChannelConfig = field(
        default_factory=lambda: ChannelConfig(
            num_devices=25,
            num_antennas=25,
            noise_var=0.01,
            sync_error_samples=3.0,
            t_sync=default_t_sync(1200),
        )
    )
    learn: LearnConfig = field(default_factory=LearnConfig)
    data: DataConfig = field(default_factory=DataConfig)
    subcarriers: int = 1200
    link_mode: str = "oac"
    detector: str = "relaxed"
    clamp_votes: bool = False
    noise_scale: float = 1.0
    seed: int = 0
    trials: int = 100_000
    output_dir: str | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.subcarriers < (self.codec.base - 1) * self.codec.digits:
            raise ConfigError(
                f"subcarriers={self.subcarriers} cannot fit one gradient of "
                f"{(self.codec.base - 1) * self.codec.digits} cells"
            )

    def link(self) -> LinkConfig:
        return LinkConfig(
            codec=self.codec,
            channel=self.channel,
            subcarriers=self.subcarriers,
            mode=self.link_mode,
            detector=self.detector,
            clamp_votes=self.clamp_votes,
            noise_scale=self.noise_scale,
        )

    def derived(self) -> dict:
        """Quantities computed from the raw fields, echoed for provenance."""
        cells = (self.codec.base - 1) * self.codec.digits
        return {
            "bias_xi": self.codec.bias,
            "step_delta": self.codec.step,
            "energy_scale": self.codec.energy_scale,
            "cells_per_gradient": cells,
            "gradients_per_symbol": self.subcarriers // cells,
            "snr_db": -10.0 * math.log10(self.channel.noise_var)
            if self.channel.noise_var > 0
            else None,
            "delay_spread_samples": self.channel.delay_spread_samples,
        }

    def resolved(self) -> dict:
        """Full config in file schema; loading it back reproduces this object."""
        return {
            "codec": {
                "base": self.codec.base,
                "digits": self.codec.digits,
                "v_max": self.codec.v_max,
            },
            "grid": {
                "subcarriers": self.subcarriers,
                "spacing": self.channel.subcarrier_spacing,
                "fft_size": self.channel.fft_size,
                "sample_rate": self.channel.sample_rate,
            },
            "channel": {
                "fading": self.channel.fading,
                "devices": self.channel.num_devices,
                "antennas": self.channel.num_antennas,
                "noise_var": self.channel.noise_var,
                "sync_error_samples": self.channel.sync_error_samples,
                "t_sync": self.channel.t_sync,
            },
            "link": {
                "mode": self.link_mode,
                "detector": self.detector,
                "clamp_votes": self.clamp_votes,
                "noise_scale": self.noise_scale,
            },
            "learning": {
                "task": self.data.task,
                "partition": self.data.partition,
                "learning_rate": self.learn.learning_rate,
                "batch_size": self.learn.batch_size,
                "momentum": self.learn.momentum,
                "rounds": self.learn.rounds,
                "v_max_policy": self.learn.v_max_policy,
                "classes": self.data.classes,
                "features": self.data.features,
                "train_size": self.data.train_size,
                "test_size": self.data.test_size,
                "separation": self.data.separation,
                "hidden": self.data.hidden,
                "mnist_dir": self.data.mnist_dir,
            },
            "run": {
                "seed": self.seed,
                "trials": self.trials,
                "output_dir": self.output_dir,
            },
            "derived": self.derived(),
        }


def _take(section: dict, key: str, default):
    return section.pop(key) if key in section else default


def _check_empty(section: dict, name: str):
    if section:
        raise ConfigError(f"unknown field(s) in [{name}]: {', '.join(sorted(section))}")


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build a validated config from a parsed file dictionary.

    Accepts plain config files and emitted summary files (whose config
    lives under a ``config`` key); the ``derived`` echo is recomputed.
    """
    if "config" in raw and isinstance(raw["config"], dict):
        raw = raw["config"]
    raw = dict(raw)
    raw.pop("derived", None)  # echo section from a previous run; recomputed
    sections = {}
    for name in ("codec", "grid", "channel", "link", "learning", "run"):
        section = raw.pop(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"section [{name}] must be a table")
        sections[name] = dict(section)
    if raw:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(raw))}")

    codec_s, grid_s = sections["codec"], sections["grid"]
    chan_s, link_s = sections["channel"], sections["link"]
    learn_s, run_s = sections["learning"], sections["run"]

    codec = BalancedConfig(
        base=int(_take(codec_s, "base", 5)),
        digits=int(_take(codec_s, "digits", 2)),
        v_max=float(_take(codec_s, "v_max", 0.1)),
    )
    _check_empty(codec_s, "codec")

    subcarriers = int(_take(grid_s, "subcarriers", 1200))
    spacing = float(_take(grid_s, "spacing", DEFAULT_SPACING))
    fft_size = int(_take(grid_s, "fft_size", DEFAULT_FFT_SIZE))
    sample_rate = float(_take(grid_s, "sample_rate", DEFAULT_SAMPLE_RATE))
    _check_empty(grid_s, "grid")

    noise_var = _take(chan_s, "noise_var", None)
    snr_db = _take(chan_s, "snr_db", None)
    if noise_var is not None and snr_db is not None:
        raise ConfigError("give either channel.noise_var or channel.snr_db, not both")
    if noise_var is None:
        noise_var = 10.0 ** (-float(snr_db) / 10.0) if snr_db is not None else 0.01
    t_sync = _take(chan_s, "t_sync", "auto")
    if t_sync == "auto":
        t_sync = default_t_sync(subcarriers, spacing)
    channel = ChannelConfig(
        num_devices=int(_take(chan_s, "devices", 25)),
        num_antennas=int(_take(chan_s, "antennas", 25)),
        noise_var=float(noise_var),
        fading=str(_take(chan_s, "fading", "iid_flat")),
        sync_error_samples=float(_take(chan_s, "sync_error_samples", 3.0)),
        t_sync=float(t_sync),
        fft_size=fft_size,
        sample_rate=sample_rate,
        subcarrier_spacing=spacing,
    )
    _check_empty(chan_s, "channel")

    learn = LearnConfig(
        learning_rate=float(_take(learn_s, "learning_rate", 0.001)),
        batch_size=int(_take(learn_s, "batch_size", 64)),
        momentum=float(_take(learn_s, "momentum", 0.9)),
        rounds=int(_take(learn_s, "rounds", 100)),
        v_max_policy=str(_take(learn_s, "v_max_policy", "fixed")),
    )
    mnist_dir = _take(learn_s, "mnist_dir", None)
    data = DataConfig(
        task=str(_take(learn_s, "task", "synthetic")),
        partition=str(_take(learn_s, "partition", "homogeneous")),
        classes=int(_take(learn_s, "classes", 10)),
        features=int(_take(learn_s, "features", 20)),
        train_size=int(_take(learn_s, "train_size", 5000)),
        test_size=int(_take(learn_s, "test_size", 2000)),
        separation=float(_take(learn_s, "separation", 3.0)),
        hidden=int(_take(learn_s, "hidden", 0)),
        mnist_dir=str(mnist_dir) if mnist_dir is not None else None,
    )
    _check_empty(learn_s, "learning")

    output_dir = _take(run_s, "output_dir", None)
    cfg = ExperimentConfig(
        codec=codec,
        channel=channel,
        learn=learn,
        data=data,
        subcarriers=subcarriers,
        link_mode=str(_take(link_s, "mode", "oac")),
        detector=str(_take(link_s, "detector", "relaxed")),
        clamp_votes=bool(_take(link_s, "clamp_votes", False)),
        noise_scale=float(_take(link_s, "noise_scale", 1.0)),
        seed=int(_take(run_s, "seed", 0)),
        trials=int(_take(run_s, "trials", 100_000)),
        output_dir=str(output_dir) if output_dir is not None else None,
    )
    _check_empty(link_s, "link")
    _check_empty(run_s, "run")
    return cfg


def load_config(path) -> ExperimentConfig:
    """Load and validate a TOML or JSON experiment file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    text = path.read_bytes()
    if path.suffix == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e
    else:
        try:
            raw = tomllib.loads(text.decode("utf-8"))
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a table")
    return config_from_dict(raw)


def config_hash(cfg: ExperimentConfig) -> str:
    """Content hash of the resolved config, for provenance stamping."""
    canonical = json.dumps(cfg.resolved(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
