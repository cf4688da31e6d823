"""Closed-form error analysis of the aggregate estimator, with a Monte
Carlo harness that verifies it against the simulated chain.

For a fixed set of per-device gradients, the per-cell vote counts determine
the estimator's variance exactly; the quantizer determines its bias.  The
Monte Carlo engine runs the full transmit/receive chain (encode, map,
activate, fade, detect, aggregate) with those gradients held fixed across
trials and reports empirical moments with jackknife standard errors, so
closed form and simulation can be compared at principled tolerances.
"""

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .channel import ChannelConfig, epa_taps, EPA_DELAYS_NS
from .codec import BalancedConfig, decode, encode, index_of_symbol, symbol_table
from .detector import aggregate, estimate_votes, ml_votes_exact
from .errors import ConfigError
from .resources import GridConfig, map_gradients

__all__ = [
    "MseReport",
    "var_vote",
    "var_numeral_mean",
    "var_gradient_estimate",
    "votes_from_numerals",
    "quantization_bias",
    "mse_gradient_estimate",
    "monte_carlo_mse",
    "relaxed_exact_agreement",
]

#: Trials per jackknife segment.  Fixed so that standard errors do not
#: depend on how trials are batched in memory.
JACK_SEGMENT = 256

# Complex entries per working array in one Monte Carlo chunk.
_CHUNK_BUDGET = 4_000_000


def var_vote(count, noise_var: float, energy_scale: float, antennas: int):
    """Variance of the relaxed vote estimate, (1/R) (K_l + sigma_n^2/E_s)^2.

    ``count`` is the true number of devices occupying the cell; element-wise
    over arrays.
    """
    c = np.asarray(count, dtype=np.float64)
    return (c + noise_var / energy_scale) ** 2 / antennas


def votes_from_numerals(cfg: BalancedConfig, numerals) -> np.ndarray:
    """Count devices per (numeral position, symbol index).

    ``numerals`` has shape (K, ..., digits); the result has shape
    (..., digits, base-1).  Zero numerals occupy no cell and are not
    counted, so counts per position sum to at most K.
    """
    numerals = np.asarray(numerals)
    idx = np.where(numerals != 0, index_of_symbol(cfg.base, numerals), -1)
    counts = np.empty(numerals.shape[1:] + (cfg.base - 1,), dtype=np.int64)
    for ell in range(cfg.base - 1):
        counts[..., ell] = np.sum(idx == ell, axis=0)
    return counts


def var_numeral_mean(
    cfg: BalancedConfig, votes, noise_var: float, antennas: int, num_devices: int
) -> np.ndarray:
    """Variance of each recovered numeral average mu_i.

    ``votes`` has shape (..., digits, base-1); the result drops the symbol
    axis.  Cells are independent, so variances add with weights a_l^2/K^2.
    """
    v = np.asarray(votes, dtype=np.float64)
    a2 = symbol_table(cfg.base)[: cfg.base - 1].astype(np.float64) ** 2
    per_cell = var_vote(v, noise_var, cfg.energy_scale, antennas)
    return (per_cell @ a2) / num_devices**2


def var_gradient_estimate(
    cfg: BalancedConfig, votes, noise_var: float, antennas: int, num_devices: int
) -> np.ndarray:
    """Variance of the decoded gradient estimate for given vote counts.

    Sums the per-cell vote variances with weights
    (v_max/xi)^2 a_l^2 beta^{2i} / K^2, where i is the positional power of
    the numeral (most significant position first in ``votes``).
    """
    per_digit = var_numeral_mean(cfg, votes, noise_var, antennas, num_devices)
    weights = (
        np.asarray(cfg.base, dtype=np.float64)
        ** (2.0 * np.arange(cfg.digits - 1, -1, -1))
    )
    return (cfg.v_max / cfg.bias) ** 2 * (per_digit @ weights)


def quantization_bias(cfg: BalancedConfig, gradients) -> np.ndarray:
    """Signed bias of the quantized average, mean(decode(encode(g)) - g).

    ``gradients`` has shape (K, ...) with devices on the leading axis.
    """
    g = np.asarray(gradients, dtype=np.float64)
    return np.mean(decode(cfg, encode(cfg, g)) - g, axis=0)


def mse_gradient_estimate(
    cfg: BalancedConfig, gradients, noise_var: float, antennas: int
):
    """Closed-form (variance, squared_bias, mse) of the gradient estimate.

    ``gradients`` has shape (K,) or (K, Q); vote counts are derived from
    the encoded gradients.  mse = variance + squared bias.
    """
    g = np.asarray(gradients, dtype=np.float64)
    votes = votes_from_numerals(cfg, encode(cfg, g))
    variance = var_gradient_estimate(cfg, votes, noise_var, antennas, g.shape[0])
    bias2 = quantization_bias(cfg, g) ** 2
    return variance, bias2, variance + bias2


@dataclass(frozen=True)
class MseReport:
    """Closed-form and empirical error moments for fixed gradients.

    Gradient-level fields have shape (Q,), vote-level fields
    (Q, digits, base-1).  Empirical moments carry delete-one-segment
    jackknife standard errors (NaN when fewer than two segments ran).
    """

    trials: int
    true_average: np.ndarray
    quantized_average: np.ndarray
    vote_counts: np.ndarray
    theory_var: np.ndarray
    theory_bias2: np.ndarray
    theory_mse: np.ndarray
    theory_vote_var: np.ndarray
    emp_mean: np.ndarray
    emp_mean_se: np.ndarray
    emp_var: np.ndarray
    emp_var_se: np.ndarray
    emp_mse: np.ndarray
    emp_mse_se: np.ndarray
    emp_vote_mean: np.ndarray
    emp_vote_var: np.ndarray
    emp_vote_var_se: np.ndarray


def _mean_stat(n, s1, s2):
    return s1 / n


def _var_stat(n, s1, s2):
    m = s1 / n
    return s2 / n - m * m


def _mse_stat(ref):
    def stat(n, s1, s2):
        return s2 / n - 2.0 * ref * (s1 / n) + ref * ref

    return stat


def _jackknife(seg_n, seg_s1, seg_s2, stat):
    """Pooled statistic and its delete-one-segment jackknife SE."""
    total_n = seg_n.sum()
    total_s1 = seg_s1.sum(axis=0)
    total_s2 = seg_s2.sum(axis=0)
    value = stat(total_n, total_s1, total_s2)
    segments = len(seg_n)
    if segments < 2:
        return value, np.full(np.shape(value), np.nan)
    n_loo = (total_n - seg_n).reshape((segments,) + (1,) * (seg_s1.ndim - 1))
    loo = stat(n_loo, total_s1 - seg_s1, total_s2 - seg_s2)
    se = np.sqrt((segments - 1) / segments * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    return value, se


class _SegmentMoments:
    """First/second moment accumulators per jackknife segment."""

    def __init__(self, segments: int, shape):
        self.n = np.zeros(segments)
        self.s1 = np.zeros((segments,) + shape)
        self.s2 = np.zeros((segments,) + shape)

    def add(self, start_trial: int, values: np.ndarray):
        count = values.shape[0]
        seg = (start_trial + np.arange(count)) // JACK_SEGMENT
        starts = np.flatnonzero(np.r_[True, seg[1:] != seg[:-1]])
        gid = seg[starts]
        self.n[gid] += np.diff(np.r_[starts, count])
        self.s1[gid] += np.add.reduceat(values, starts, axis=0)
        self.s2[gid] += np.add.reduceat(values**2, starts, axis=0)

    def stats(self, stat):
        return _jackknife(self.n, self.s1, self.s2, stat)


def _simulate_blocks(
    cfg: BalancedConfig,
    channel: ChannelConfig,
    numerals: np.ndarray,
    trials: int,
    seed: int,
):
    """Yield (start_trial, received cells) chunks of the simulated chain.

    Received cells have shape (chunk, Q, digits, base-1, R).  Randomness is
    keyed by (seed, role, block) with a fixed block length, so results
    depend only on (seed, trials), not on chunking; trial t of a longer run
    reproduces trial t of a shorter one.
    """
    num_devices, num_gradients, digits = numerals.shape
    grid = GridConfig(
        subcarriers=num_gradients * (cfg.base - 1) * digits, symbols=1, codec=cfg
    )
    cells = map_gradients(grid, num_gradients)

    k_idx, q_idx, i_idx = np.nonzero(numerals != 0)
    ell = index_of_symbol(cfg.base, numerals[k_idx, q_idx, i_idx])
    subcarrier = cells[q_idx, i_idx, ell, 1]
    cell_flat = (q_idx * digits + i_idx) * (cfg.base - 1) + ell
    active = len(k_idx)
    num_cells = num_gradients * digits * (cfg.base - 1)
    onehot = np.zeros((active, num_cells))
    onehot[np.arange(active), cell_flat] = 1.0

    amplitude = np.sqrt(cfg.energy_scale)
    antennas = channel.num_antennas
    spread = channel.delay_spread_samples
    static_rot = None
    if spread == 0 and channel.sync_error_samples != 0:
        static_rot = np.exp(
            -2j * np.pi * subcarrier * channel.sync_error_samples / channel.fft_size
        )
    if channel.fading == "epa_tdl":
        freqs = subcarrier * channel.subcarrier_spacing
        steering = np.exp(-2j * np.pi * np.outer(freqs, EPA_DELAYS_NS * 1e-9))
        per_trial = max(active, 1) * antennas * len(EPA_DELAYS_NS)
    else:
        per_trial = max(active, 1) * antennas
    chunk_cap = max(1, _CHUNK_BUDGET // per_trial)

    blocks = -(-trials // rngmod.MC_BLOCK)
    for b in range(blocks):
        start = b * rngmod.MC_BLOCK
        block_n = min(rngmod.MC_BLOCK, trials - start)
        phase_rng = rngmod.stream(seed, rngmod.ROLE_PHASE, b)
        chan_rng = rngmod.stream(seed, rngmod.ROLE_CHANNEL, b)
        noise_rng = rngmod.stream(seed, rngmod.ROLE_NOISE, b)
        delay_rng = rngmod.stream(seed, rngmod.ROLE_DELAY, b) if spread > 0 else None
        done = 0
        while done < block_n:
            c = min(chunk_cap, block_n - done)
            phases = rngmod.unit_phases(
                phase_rng, (c, num_devices, num_gradients, digits)
            )
            if channel.fading == "epa_tdl":
                taps = epa_taps(chan_rng, (c, num_devices, antennas))
                h = np.einsum("cart,at->car", taps[:, k_idx], steering, optimize=True)
            else:
                h = rngmod.complex_normal(chan_rng, (c, active, antennas))
            weight = amplitude * phases[:, k_idx, q_idx, i_idx]
            if spread > 0:
                delays = delay_rng.uniform(0.0, spread, size=(c, num_devices))
                total = delays[:, k_idx] + channel.sync_error_samples
                weight = weight * np.exp(
                    -2j * np.pi * subcarrier * total / channel.fft_size
                )
            elif static_rot is not None:
                weight = weight * static_rot
            contrib = weight[:, :, None] * h
            received = np.tensordot(contrib, onehot, axes=([1], [0]))
            received = received.transpose(0, 2, 1)
            received += rngmod.complex_normal(
                noise_rng, (c, num_cells, antennas), scale=channel.noise_var
            )
            yield start + done, received.reshape(
                c, num_gradients, digits, cfg.base - 1, antennas
            )
            done += c


def _check_devices(channel: ChannelConfig, num_devices: int):
    if channel.num_devices != num_devices:
        raise ConfigError(
            f"channel is configured for {channel.num_devices} devices, "
            f"gradients provide {num_devices}"
        )


def monte_carlo_mse(
    cfg: BalancedConfig,
    gradients,
    channel: ChannelConfig,
    trials: int,
    seed: int,
    detector: str = "relaxed",
) -> MseReport:
    """Estimate the error moments of the full chain by simulation.

    ``gradients`` has shape (K,) or (K, Q) and stays fixed across trials;
    every trial redraws channel, noise, activation phases and (when
    configured) arrival delays.  ``detector`` selects the relaxed energy
    estimator or the exhaustive ML search.  Returns closed-form values next
    to empirical ones so callers can diff them directly.
    """
    g = np.asarray(gradients, dtype=np.float64)
    if g.ndim == 1:
        g = g[:, None]
    if g.ndim != 2:
        raise ValueError(f"gradients must have shape (K,) or (K, Q), got {g.shape}")
    if trials < 1:
        raise ValueError("need at least one trial")
    if detector not in ("relaxed", "exact"):
        raise ValueError(f"unknown detector {detector!r}")
    num_devices, num_gradients = g.shape
    _check_devices(channel, num_devices)

    numerals = encode(cfg, g)
    counts = votes_from_numerals(cfg, numerals)
    true_average = g.mean(axis=0)
    quantized_average = decode(cfg, numerals).mean(axis=0)
    theory_vote_var = var_vote(
        counts, channel.noise_var, cfg.energy_scale, channel.num_antennas
    )
    theory_var = var_gradient_estimate(
        cfg, counts, channel.noise_var, channel.num_antennas, num_devices
    )
    bias2 = (quantized_average - true_average) ** 2

    segments = -(-trials // JACK_SEGMENT)
    grad_acc = _SegmentMoments(segments, (num_gradients,))
    vote_acc = _SegmentMoments(segments, (counts.size,))
    for start, received in _simulate_blocks(cfg, channel, numerals, trials, seed):
        if detector == "relaxed":
            votes = estimate_votes(
                received, cfg.energy_scale, channel.noise_var, channel.num_antennas
            )
        else:
            flat = received.reshape(-1, cfg.base - 1, channel.num_antennas)
            votes = ml_votes_exact(
                flat,
                cfg.energy_scale,
                channel.noise_var,
                channel.num_antennas,
                num_devices,
            ).reshape(received.shape[:-1])
        est = aggregate(votes, cfg, num_devices).gradients
        grad_acc.add(start, est)
        vote_acc.add(start, votes.reshape(votes.shape[0], -1))

    emp_mean, emp_mean_se = grad_acc.stats(_mean_stat)
    emp_var, emp_var_se = grad_acc.stats(_var_stat)
    emp_mse, emp_mse_se = grad_acc.stats(_mse_stat(true_average))
    emp_vote_mean, _ = vote_acc.stats(_mean_stat)
    emp_vote_var, emp_vote_var_se = vote_acc.stats(_var_stat)
    return MseReport(
        trials=trials,
        true_average=true_average,
        quantized_average=quantized_average,
        vote_counts=counts,
        theory_var=theory_var,
        theory_bias2=bias2,
        theory_mse=theory_var + bias2,
        theory_vote_var=theory_vote_var,
        emp_mean=emp_mean,
        emp_mean_se=emp_mean_se,
        emp_var=emp_var,
        emp_var_se=emp_var_se,
        emp_mse=emp_mse,
        emp_mse_se=emp_mse_se,
        emp_vote_mean=emp_vote_mean.reshape(counts.shape),
        emp_vote_var=emp_vote_var.reshape(counts.shape),
        emp_vote_var_se=emp_vote_var_se.reshape(counts.shape),
    )


def relaxed_exact_agreement(
    cfg: BalancedConfig,
    gradients,
    channel: ChannelConfig,
    trials: int,
    seed: int,
) -> float:
    """Fraction of digit groups where rounded relaxed votes equal exact ML.

    Runs the same simulated chain as :func:`monte_carlo_mse`, applies both
    detectors to identical received cells, and compares per digit group
    (all base-1 cells must match).  The relaxed votes are rounded to the
    nearest integer and clamped to [0, K] before comparison.
    """
    g = np.asarray(gradients, dtype=np.float64)
    if g.ndim == 1:
        g = g[:, None]
    num_devices = g.shape[0]
    _check_devices(channel, num_devices)
    numerals = encode(cfg, g)
    matches = 0
    groups = 0
    for _, received in _simulate_blocks(cfg, channel, numerals, trials, seed):
        relaxed = estimate_votes(
            received, cfg.energy_scale, channel.noise_var, channel.num_antennas
        )
        rounded = np.clip(np.rint(relaxed), 0, num_devices).astype(np.int64)
        flat = received.reshape(-1, cfg.base - 1, channel.num_antennas)
        exact = ml_votes_exact(
            flat,
            cfg.energy_scale,
            channel.noise_var,
            channel.num_antennas,
            num_devices,
        ).reshape(received.shape[:-1])
        equal = np.all(rounded == exact, axis=-1)
        matches += int(np.sum(equal))
        groups += equal.size
    return matches / groups
