"""Time-frequency resource mapping and subcarrier activation.

Each gradient owns (beta-1)*digits cells of the S x M grid: beta-1 adjacent
subcarriers per numeral position, allocated contiguously subcarrier-first.
A device activates at most one of the beta-1 cells per numeral (none when
the numeral is the zero symbol), carrying sqrt(E_s) times a random
unit-circle phase.
"""

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .codec import BalancedConfig, index_of_symbol
from .errors import CapacityError, ConfigError

__all__ = ["GridConfig", "map_gradients", "activate"]


@dataclass(frozen=True)
class GridConfig:
    """Shape of the OFDM resource grid used for one communication round."""

    subcarriers: int  # M, active subcarriers per OFDM symbol
    symbols: int  # S, OFDM symbols per round
    codec: BalancedConfig

    def __post_init__(self):
        if self.symbols < 1:
            raise ConfigError(f"need at least one OFDM symbol, got {self.symbols}")
        if self.subcarriers < self.cells_per_gradient:
            raise ConfigError(
                f"M={self.subcarriers} cannot fit one gradient of "
                f"{self.cells_per_gradient} cells"
            )

    @property
    def cells_per_gradient(self) -> int:
        return (self.codec.base - 1) * self.codec.digits

    @property
    def gradients_per_symbol(self) -> int:
        """M_par = floor(M / ((beta-1) * D))."""
        return self.subcarriers // self.cells_per_gradient

    @property
    def capacity(self) -> int:
        return self.gradients_per_symbol * self.symbols


def symbols_needed(subcarriers: int, codec: BalancedConfig, num_gradients: int) -> int:
    """Smallest S able to carry ``num_gradients`` gradients."""
    per_symbol = subcarriers // ((codec.base - 1) * codec.digits)
    if per_symbol < 1:
        raise ConfigError(
            f"M={subcarriers} cannot fit one gradient of "
            f"{(codec.base - 1) * codec.digits} cells"
        )
    return -(-num_gradients // per_symbol)


def map_gradients(grid: GridConfig, num_gradients: int) -> np.ndarray:
    """Assign disjoint cell sets to gradients 0 .. Q-1.

    Returns an int array of shape (Q, digits, beta-1, 2) whose last axis is
    (OFDM symbol index, subcarrier index).  Gradient q occupies cells
    q*(beta-1)*D ... (q+1)*(beta-1)*D - 1 in subcarrier-first order, skipping
    the M mod ((beta-1)*D) leftover subcarriers at the top of each symbol.
    Within a gradient, cells are laid out digit-major: position i (most
    significant first) gets subcarriers i*(beta-1) ... i*(beta-1)+beta-2.
    """
    if num_gradients > grid.capacity:
        raise CapacityError(
            f"{num_gradients} gradients exceed capacity {grid.capacity}; "
            f"need S >= {symbols_needed(grid.subcarriers, grid.codec, num_gradients)}"
        )
    cells = grid.cells_per_gradient
    q = np.arange(num_gradients)
    sym = q // grid.gradients_per_symbol
    base_sc = (q % grid.gradients_per_symbol) * cells
    offset = np.arange(cells).reshape(grid.codec.digits, grid.codec.base - 1)
    out = np.empty((num_gradients, grid.codec.digits, grid.codec.base - 1, 2), dtype=np.int64)
    out[..., 0] = sym[:, None, None]
    out[..., 1] = base_sc[:, None, None] + offset[None, :, :]
    return out


def activate(
    grid: GridConfig,
    cells: np.ndarray,
    numerals: np.ndarray,
    seed: int,
    round_index: int = 0,
) -> np.ndarray:
    """Build each device's transmit grid from its numerals.

    Parameters:
        cells: output of :func:`map_gradients`, shape (Q, D, beta-1, 2).
        numerals: int array (K, Q, D), most significant position first.
        seed, round_index: key the per-device phase streams.

    Returns complex frames of shape (K, S, M).  For numeral value x at
    position i of gradient q, the cell for symbol index ell =
    index_of_symbol(x) carries sqrt(E_s) * r_{k,q,i}; a zero numeral
    activates nothing.
    """
    numerals = np.asarray(numerals)
    if numerals.ndim != 3:
        raise ValueError(f"numerals must have shape (K, Q, D), got {numerals.shape}")
    num_devices, num_gradients, digits = numerals.shape
    if num_gradients != cells.shape[0] or digits != grid.codec.digits:
        raise ValueError("numerals do not match the resource mapping")

    amplitude = np.sqrt(grid.codec.energy_scale)
    nonzero = numerals != 0
    ell = index_of_symbol(grid.codec.base, np.where(nonzero, numerals, 1))
    frames = np.zeros((num_devices, grid.symbols, grid.subcarriers), dtype=np.complex128)
    qi, ii = np.meshgrid(np.arange(num_gradients), np.arange(digits), indexing="ij")
    for k in range(num_devices):
        phases = rngmod.unit_phases(
            rngmod.stream(seed, rngmod.ROLE_PHASE, round_index, k),
            (num_gradients, digits),
        )
        mask = nonzero[k]
        sel = ell[k][mask]
        t = cells[qi[mask], ii[mask], sel, 0]
        f = cells[qi[mask], ii[mask], sel, 1]
        frames[k, t, f] = amplitude * phases[mask]
    return frames
