"""Non-coherent vote-count recovery and gradient-average estimation.

The server never learns the channel: within each gradient/digit group it
estimates, from received energy alone, how many devices transmitted each
symbol, converts those counts into a numeral average, and decodes that
average into the gradient estimate.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .codec import BalancedConfig, decode, symbol_table
from .errors import CapacityError

__all__ = [
    "AggregateEstimate",
    "estimate_votes",
    "cell_objective",
    "ml_votes_exact",
    "aggregate",
]

# Enumeration bound for the exact constrained search.
_ML_MAX_CANDIDATES = 2_000_000


@dataclass(frozen=True)
class AggregateEstimate:
    """Recovered numeral averages and the decoded gradient estimates."""

    numeral_means: np.ndarray  # (..., digits)
    gradients: np.ndarray  # (...,)


def estimate_votes(
    received,
    energy_scale: float,
    noise_var: float,
    antennas: int,
    clamp_max: int | None = None,
) -> np.ndarray:
    """Relaxed per-cell vote estimate ||y||^2 / (E_s R) - sigma_n^2 / E_s.

    ``received`` holds R-dimensional cell observations along its last axis;
    all leading axes are preserved.  Estimates are real-valued and may be
    negative.  ``clamp_max`` optionally clips into [0, K], which trades the
    estimator's unbiasedness for bounded output; leave it None to match the
    variance analysis.
    """
    y = np.asarray(received)
    energy = np.sum(np.abs(y) ** 2, axis=-1)
    votes = energy / (energy_scale * antennas) - noise_var / energy_scale
    if clamp_max is not None:
        votes = np.clip(votes, 0, clamp_max)
    return votes


def cell_objective(energy, count, energy_scale: float, noise_var: float, antennas: int):
    """Single-cell ML objective 2R ln((E_s k + sigma^2)/2) + 2||y||^2/(E_s k + sigma^2).

    ``count`` may be fractional; the unconstrained minimizer over it is the
    relaxed estimate returned by :func:`estimate_votes`.
    """
    scale = energy_scale * np.asarray(count, dtype=np.float64) + noise_var
    return 2.0 * antennas * np.log(scale / 2.0) + 2.0 * np.asarray(energy) / scale


def ml_votes_exact(
    received,
    energy_scale: float,
    noise_var: float,
    antennas: int,
    num_devices: int,
) -> np.ndarray:
    """Exhaustive constrained ML vote search over one gradient digit.

    ``received`` has shape (beta-1, R) (or (..., beta-1, R) for a batch).
    Minimizes sum_l [2R ln((E_s k_l + sigma^2)/2) + 2||y_l||^2/(E_s k_l +
    sigma^2)] over k_l in {0..K} with sum_l k_l <= K.  Ties go to the
    candidate with the smaller total count, then lexicographically.
    """
    y = np.asarray(received)
    energy = np.sum(np.abs(y) ** 2, axis=-1)
    batch_shape, num_cells = energy.shape[:-1], energy.shape[-1]
    if (num_devices + 1) ** num_cells > _ML_MAX_CANDIDATES:
        raise CapacityError(
            f"exact search over {(num_devices + 1) ** num_cells} candidates "
            "is not tractable; use estimate_votes"
        )
    candidates = [
        c
        for c in itertools.product(range(num_devices + 1), repeat=num_cells)
        if sum(c) <= num_devices
    ]
    # Sort so the first minimum found respects the tie-break order.
    candidates.sort(key=lambda c: (sum(c), c))
    cand = np.array(candidates)  # (C, cells)
    scale = energy_scale * cand + noise_var  # (C, cells)
    flat = energy.reshape(-1, num_cells)  # (B, cells)
    cost = 2 * antennas * np.sum(np.log(scale / 2.0), axis=1)[None, :] + 2.0 * (
        flat @ (1.0 / scale).T
    )  # (B, C)
    best = np.argmin(cost, axis=1)
    out = cand[best].reshape(batch_shape + (num_cells,))
    return out


def aggregate(votes, cfg: BalancedConfig, num_devices: int) -> AggregateEstimate:
    """Turn per-(digit, symbol) vote estimates into gradient estimates.

    ``votes`` has shape (..., digits, beta-1) with the symbol axis in index
    order (1, -1, 2, -2, ...).  The numeral mean is (1/K) sum_l a_l k_l and
    the gradient estimate is its decode.  Linear in the votes.
    """
    v = np.asarray(votes, dtype=np.float64)
    if v.shape[-2:] != (cfg.digits, cfg.base - 1):
        raise ValueError(
            f"votes must have shape (..., {cfg.digits}, {cfg.base - 1}), got {v.shape}"
        )
    symbols = symbol_table(cfg.base)[: cfg.base - 1].astype(np.float64)
    means = (v @ symbols) / num_devices
    return AggregateEstimate(numeral_means=means, gradients=decode(cfg, means))
