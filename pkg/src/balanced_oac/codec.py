"""Balanced number system codec.

A scalar in [-v_max, v_max] is quantized onto a uniform mid-tread grid and
written as a length-D sequence of numerals from the symmetric symbol set
S_beta = {-(beta-1)/2, ..., 0, ..., (beta-1)/2} (beta odd).  Decoding is the
linear map back to a real value; because it is linear, averaging numeral
sequences element-wise across devices and decoding the result equals the
average of the individually quantized values.

Numeral sequences are plain integer arrays of shape (..., digits), most
significant position first.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = [
    "BalancedConfig",
    "encode",
    "decode",
    "step_size",
    "symbol_of_index",
    "index_of_symbol",
    "symbol_table",
    "average_numerals",
]


@dataclass(frozen=True)
class BalancedConfig:
    """Parameters of the balanced numeral representation.

    Attributes:
        base: odd integer >= 3, size of the symbol set.
        digits: number of numeral positions per scalar.
        v_max: clip level; inputs are clipped to [-v_max, v_max].
    """

    base: int
    digits: int
    v_max: float

    def __post_init__(self):
        if self.base < 3 or self.base % 2 == 0:
            raise ConfigError(f"base must be an odd integer >= 3, got {self.base}")
        if self.digits < 1:
            raise ConfigError(f"digits must be >= 1, got {self.digits}")
        if not (self.v_max > 0):
            raise ConfigError(f"v_max must be positive, got {self.v_max}")

    @property
    def levels(self) -> int:
        """Number of quantization levels, base**digits."""
        return self.base**self.digits

    @property
    def bias(self) -> int:
        """Offset xi = (base**digits - 1) / 2; always an exact integer."""
        return (self.levels - 1) // 2

    @property
    def step(self) -> float:
        """Quantization step 2 * v_max / (base**digits - 1)."""
        return 2.0 * self.v_max / (self.levels - 1)

    @property
    def max_symbol(self) -> int:
        """Largest symbol magnitude, (base - 1) / 2."""
        return (self.base - 1) // 2

    @property
    def energy_scale(self) -> float:
        """Per-activated-subcarrier energy E_s = base - 1."""
        return float(self.base - 1)


def step_size(cfg: BalancedConfig) -> float:
    """Quantization step of the mid-tread grid."""
    return cfg.step


def encode(cfg: BalancedConfig, values) -> np.ndarray:
    """Encode real values into balanced numeral sequences.

    Values are clipped to [-v_max, v_max], mapped to the integer grid by
    floor(xi * v / v_max + xi + 1/2), and the base-beta digits of that
    integer are shifted down by (beta - 1) / 2.  Works element-wise; the
    output has one extra trailing axis of length ``digits`` (most
    significant first).
    """
    v = np.asarray(values, dtype=np.float64)
    v = np.clip(v, -cfg.v_max, cfg.v_max)
    n = np.floor(cfg.bias * v / cfg.v_max + cfg.bias + 0.5).astype(np.int64)
    # Guards the v = +v_max edge where rounding can land one past the top level.
    n = np.clip(n, 0, cfg.levels - 1)
    powers = cfg.base ** np.arange(cfg.digits - 1, -1, -1, dtype=np.int64)
    b = (n[..., np.newaxis] // powers) % cfg.base
    return b - cfg.max_symbol


def decode(cfg: BalancedConfig, numerals) -> np.ndarray:
    """Decode numeral sequences (possibly real-valued averages) to scalars.

    The last axis must have length ``digits``.  Elements may be non-integer,
    e.g. numeral averages across devices.
    """
    seq = np.asarray(numerals, dtype=np.float64)
    if seq.shape[-1] != cfg.digits:
        raise ValueError(
            f"expected sequences of length {cfg.digits}, got {seq.shape[-1]}"
        )
    powers = cfg.base ** np.arange(cfg.digits - 1, -1, -1, dtype=np.float64)
    return cfg.v_max * (seq @ powers) / cfg.bias


def symbol_of_index(base: int, index) -> np.ndarray:
    """Map subcarrier index j in Z_beta to its symbol value.

    Index order is 1, -1, 2, -2, ..., with the zero symbol last (j = beta-1).
    """
    j = np.asarray(index, dtype=np.int64)
    if np.any(j < 0) or np.any(j >= base):
        raise IndexError(f"index out of range for base {base}")
    odd = j % 2 == 1
    out = np.where(odd, -(j + 1) // 2, (j + 2) // 2)
    out = np.where(j == base - 1, 0, out)
    return out[()] if np.isscalar(index) or np.ndim(index) == 0 else out


def index_of_symbol(base: int, symbol) -> np.ndarray:
    """Inverse of :func:`symbol_of_index`; needed to pick the active subcarrier."""
    x = np.asarray(symbol, dtype=np.int64)
    if np.any(np.abs(x) > (base - 1) // 2):
        raise ValueError(f"symbol out of range for base {base}")
    out = np.where(x > 0, 2 * x - 2, -2 * x - 1)
    out = np.where(x == 0, base - 1, out)
    return out[()] if np.isscalar(symbol) or np.ndim(symbol) == 0 else out


def symbol_table(base: int) -> np.ndarray:
    """Symbols a_0 ... a_{beta-1} in index order; the zero symbol is last."""
    return symbol_of_index(base, np.arange(base))


def average_numerals(sequences) -> np.ndarray:
    """Element-wise mean of numeral sequences over the leading (device) axis.

    Decoding the result equals the mean of the per-device decoded values.
    """
    seqs = np.asarray(sequences, dtype=np.float64)
    if seqs.ndim < 2 or seqs.shape[0] == 0:
        raise ValueError("need at least one sequence to average")
    return seqs.mean(axis=0)
