"""One-shot aggregation rounds through the full transmit/receive chain.

This is the glue the training loop and the CLI use: gradients in, estimated
average out.  Three link modes exist: ``ideal`` returns the exact average
(no quantization, no channel), ``quantized`` aggregates exact vote counts
(codec only, channel bypassed), and ``oac`` runs encode, map, activate,
fade, superpose, detect and aggregate end to end.
"""

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .analysis import votes_from_numerals
from .channel import ChannelConfig, draw_channel, superpose
from .codec import BalancedConfig, encode
from .detector import aggregate, estimate_votes, ml_votes_exact
from .errors import CapacityError, ConfigError
from .resources import GridConfig, activate, map_gradients, symbols_needed

__all__ = ["LinkConfig", "oac_round"]


@dataclass(frozen=True)
class LinkConfig:
    """Everything needed to carry one round's gradients over the air."""

    codec: BalancedConfig
    channel: ChannelConfig
    subcarriers: int = 1200  # M, active subcarriers per OFDM symbol
    mode: str = "oac"  # "oac" | "quantized" | "ideal"
    detector: str = "relaxed"  # "relaxed" | "exact"
    clamp_votes: bool = False  # clip relaxed votes into [0, K]
    noise_scale: float = 1.0  # multiplicative error on the assumed noise power
    max_symbols: int | None = None  # optional cap on S per round

    def __post_init__(self):
        if self.mode not in ("oac", "quantized", "ideal"):
            raise ConfigError(f"unknown link mode {self.mode!r}")
        if self.detector not in ("relaxed", "exact"):
            raise ConfigError(f"unknown detector {self.detector!r}")
        if not (self.noise_scale > 0):
            raise ConfigError(f"noise scale must be positive, got {self.noise_scale}")


def oac_round(
    gradients, link: LinkConfig, seed: int, round_index: int = 0
) -> np.ndarray:
    """Estimate the device-average of ``gradients`` over the configured link.

    ``gradients`` has shape (K, Q); the result has shape (Q,).  The OFDM
    symbol count is ceil(Q / M_par) for this round.  Deterministic given
    (seed, round_index); different rounds see independent channel, noise,
    delay and phase realizations.
    """
    g = np.asarray(gradients, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError(f"gradients must have shape (K, Q), got {g.shape}")
    num_devices, num_gradients = g.shape
    if num_devices != link.channel.num_devices:
        raise ConfigError(
            f"channel is configured for {link.channel.num_devices} devices, "
            f"gradients provide {num_devices}"
        )
    if link.mode == "ideal":
        return g.mean(axis=0)

    cfg = link.codec
    numerals = encode(cfg, g)
    if link.mode == "quantized":
        votes = votes_from_numerals(cfg, numerals)
        return aggregate(votes, cfg, num_devices).gradients

    symbols = symbols_needed(link.subcarriers, cfg, num_gradients)
    if link.max_symbols is not None and symbols > link.max_symbols:
        raise CapacityError(
            f"{num_gradients} gradients need {symbols} OFDM symbols, "
            f"cap is {link.max_symbols}"
        )
    grid = GridConfig(subcarriers=link.subcarriers, symbols=symbols, codec=cfg)
    cells = map_gradients(grid, num_gradients)
    frames = activate(grid, cells, numerals, seed, round_index)
    chan = draw_channel(
        link.channel,
        link.subcarriers,
        rngmod.stream(seed, rngmod.ROLE_CHANNEL, round_index),
        rngmod.stream(seed, rngmod.ROLE_DELAY, round_index),
    )
    received = superpose(
        frames, chan, link.channel, rngmod.stream(seed, rngmod.ROLE_NOISE, round_index)
    )
    y_cells = received[cells[..., 0], cells[..., 1]]  # (Q, D, beta-1, R)
    assumed_noise = link.channel.noise_var * link.noise_scale
    if link.detector == "relaxed":
        votes = estimate_votes(
            y_cells,
            cfg.energy_scale,
            assumed_noise,
            link.channel.num_antennas,
            clamp_max=num_devices if link.clamp_votes else None,
        )
    else:
        flat = y_cells.reshape(-1, cfg.base - 1, link.channel.num_antennas)
        votes = ml_votes_exact(
            flat,
            cfg.energy_scale,
            assumed_noise,
            link.channel.num_antennas,
            num_devices,
        ).reshape(y_cells.shape[:-1])
    return aggregate(votes, cfg, num_devices).gradients
