"""Frequency-domain multi-antenna fading channel with sync impairments.

The received grid is y_{l,m} = sum_k h_{k,l} x_{k,l,m} + n_{l,m}, with the
channel constant across the OFDM symbols of one round and redrawn each
round.  Timing offsets (per-device arrival delays plus the receiver's DFT
window error) stay within the cyclic prefix and therefore appear as
subcarrier-dependent phase rotations on h; no time-domain waveform is
synthesized.
"""

from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import ConfigError

__all__ = [
    "ChannelConfig",
    "ChannelRealization",
    "draw_channel",
    "superpose",
    "EPA_DELAYS_NS",
    "EPA_POWERS_DB",
]

# ITU Extended Pedestrian A power-delay profile.
EPA_DELAYS_NS = np.array([0.0, 30.0, 70.0, 90.0, 110.0, 190.0, 410.0])
EPA_POWERS_DB = np.array([0.0, -1.0, -2.0, -3.0, -8.0, -17.2, -20.8])

DEFAULT_FFT_SIZE = 2048
DEFAULT_SAMPLE_RATE = 30.72e6
DEFAULT_SPACING = 15e3


@dataclass(frozen=True)
class ChannelConfig:
    """Link parameters between the devices and the multi-antenna server."""

    num_devices: int  # K
    num_antennas: int  # R
    noise_var: float  # sigma_n^2; SNR = 1 / sigma_n^2
    fading: str = "iid_flat"  # or "epa_tdl"
    sync_error_samples: float = 0.0  # N_err, receiver DFT window offset
    t_sync: float = 0.0  # max arrival spread in seconds
    fft_size: int = DEFAULT_FFT_SIZE
    sample_rate: float = DEFAULT_SAMPLE_RATE
    subcarrier_spacing: float = DEFAULT_SPACING

    def __post_init__(self):
        if self.num_devices < 1 or self.num_antennas < 1:
            raise ConfigError("need at least one device and one antenna")
        if self.noise_var < 0:
            raise ConfigError(f"noise variance must be >= 0, got {self.noise_var}")
        if self.fading not in ("iid_flat", "epa_tdl"):
            raise ConfigError(f"unknown fading model {self.fading!r}")
        if self.t_sync < 0 or self.sync_error_samples < 0:
            raise ConfigError("sync parameters must be >= 0")

    @property
    def delay_spread_samples(self) -> float:
        """Maximum arrival spread expressed in samples."""
        return self.t_sync * self.sample_rate


def default_t_sync(subcarriers: int, spacing: float = DEFAULT_SPACING) -> float:
    """Arrival spread bound: the reciprocal of the signal bandwidth."""
    return 1.0 / (subcarriers * spacing)


@dataclass(frozen=True)
class ChannelRealization:
    """One round's channel: per-device gains with sync phases folded in."""

    gains: np.ndarray  # (K, M, R) complex
    delays: np.ndarray = field(default_factory=lambda: np.zeros(0))  # samples, (K,)


def epa_taps(rng: np.random.Generator, shape) -> np.ndarray:
    """Draw Rayleigh tap gains for the EPA profile, unit total power.

    Returns an array of shape ``shape + (num_taps,)``.
    """
    powers = 10.0 ** (EPA_POWERS_DB / 10.0)
    powers /= powers.sum()
    taps = rngmod.complex_normal(rng, tuple(shape) + (len(powers),))
    return taps * np.sqrt(powers)


def epa_frequency_response(
    rng: np.random.Generator, shape, subcarrier_idx, spacing: float
) -> np.ndarray:
    """Frequency response of independent EPA realizations on given subcarriers.

    Returns shape ``shape + (len(subcarrier_idx),)``; entries have unit
    average power and are correlated across nearby subcarriers.
    """
    taps = epa_taps(rng, shape)
    freqs = np.asarray(subcarrier_idx, dtype=np.float64) * spacing
    steering = np.exp(-2j * np.pi * np.outer(freqs, EPA_DELAYS_NS * 1e-9))
    return taps @ steering.T


def sync_phases(
    cfg: ChannelConfig, delays: np.ndarray, subcarrier_idx: np.ndarray
) -> np.ndarray:
    """Per-(device, subcarrier) rotations exp(-j 2 pi l (d_k + N_err) / N)."""
    total = np.asarray(delays, dtype=np.float64) + cfg.sync_error_samples
    return np.exp(
        -2j * np.pi * np.outer(total, np.asarray(subcarrier_idx)) / cfg.fft_size
    )


def draw_delays(cfg: ChannelConfig, rng: np.random.Generator) -> np.ndarray:
    """Per-device arrival delays, uniform on [0, t_sync] in samples."""
    spread = cfg.delay_spread_samples
    if spread == 0:
        return np.zeros(cfg.num_devices)
    return rng.uniform(0.0, spread, size=cfg.num_devices)


def draw_channel(
    cfg: ChannelConfig,
    subcarriers: int,
    channel_rng: np.random.Generator,
    delay_rng: np.random.Generator | None = None,
    subcarrier_idx: np.ndarray | None = None,
) -> ChannelRealization:
    """Draw one round's channel realization for all devices.

    ``iid_flat`` draws every (device, subcarrier) gain vector independently
    as CN(0, I_R); ``epa_tdl`` draws a tapped-delay-line realization per
    (device, antenna) and evaluates it on the given subcarriers, which makes
    gains correlated in frequency.  Sync impairments (random per-device
    delays up to t_sync, plus the fixed receiver offset) are folded into the
    gains as subcarrier-dependent phase rotations.
    """
    if subcarrier_idx is None:
        subcarrier_idx = np.arange(subcarriers)
    k, r = cfg.num_devices, cfg.num_antennas
    if cfg.fading == "iid_flat":
        gains = rngmod.complex_normal(channel_rng, (k, subcarriers, r))
    else:
        resp = epa_frequency_response(
            channel_rng, (k, r), subcarrier_idx, cfg.subcarrier_spacing
        )
        gains = resp.transpose(0, 2, 1)
    delays = draw_delays(cfg, delay_rng if delay_rng is not None else channel_rng)
    if cfg.sync_error_samples != 0 or np.any(delays != 0):
        gains = gains * sync_phases(cfg, delays, subcarrier_idx)[:, :, None]
    return ChannelRealization(gains=gains, delays=delays)


def superpose(
    frames: np.ndarray,
    chan: ChannelRealization,
    cfg: ChannelConfig,
    noise_rng: np.random.Generator,
) -> np.ndarray:
    """Superpose all devices' frames through the channel and add noise.

    Parameters:
        frames: (K, S, M) complex transmit grids.
        chan: realization whose gains have shape (K, M, R).

    Returns the received grid of shape (S, M, R).
    """
    frames = np.asarray(frames)
    if frames.ndim != 3 or frames.shape[0] != chan.gains.shape[0]:
        raise ValueError(
            f"frames shape {frames.shape} does not match channel {chan.gains.shape}"
        )
    if frames.shape[2] != chan.gains.shape[1]:
        raise ValueError(
            f"frames have {frames.shape[2]} subcarriers, channel has "
            f"{chan.gains.shape[1]}"
        )
    received = np.einsum("ksm,kmr->smr", frames, chan.gains, optimize=True)
    noise = rngmod.complex_normal(noise_rng, received.shape, scale=cfg.noise_var)
    return received + noise
