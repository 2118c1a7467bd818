"""Superframe pilot geometry, Walsh-Hadamard multiplexing and pilot
correlation.

Only the pilot machinery needed by the synchronization loop is modeled:
pilot positions on a fixed arithmetic progression, orthogonal +-1 code
sequences, and matched correlation whose coherent gain links the raw
per-symbol SNR to the decimated-tick noise level used by the channel
module.  Payload symbols, FEC and frame headers are out of scope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import sigma_from_snr


@dataclass(frozen=True)
class SuperframeLayout:
    """Pilot numerology of the superframe format used for the loop."""

    baud_hz: float = 8e6
    pilot_len_used: int = 32       # first 32 of the 36 standard pilot symbols
    inter_pilot_period: int = 956
    superframe_len: int = 612540
    modulation: str = "QPSK"

    def __post_init__(self):
        if not 1 <= self.pilot_len_used <= 36:
            raise ValueError("pilot_len_used must be in 1..36")
        if self.inter_pilot_period <= self.pilot_len_used:
            raise ValueError("inter-pilot period must exceed the pilot length")
        if self.baud_hz <= 0 or self.superframe_len <= 0:
            raise ValueError("baud rate and superframe length must be positive")

    @property
    def decimated_rate_hz(self) -> float:
        return self.baud_hz / self.inter_pilot_period

    @property
    def superframe_duration_s(self) -> float:
        return self.superframe_len / self.baud_hz

    @property
    def compression_gain_db(self) -> float:
        return 10.0 * math.log10(self.pilot_len_used)


@dataclass(frozen=True)
class PilotSequence:
    """A +-1 pilot code (one Walsh-Hadamard row, optionally scrambled)."""

    code_index: int
    chips: tuple

    def __post_init__(self):
        chips = tuple(int(c) for c in self.chips)
        if any(c not in (-1, 1) for c in chips):
            raise ValueError("chips must be +-1")
        object.__setattr__(self, "chips", chips)

    def as_array(self) -> np.ndarray:
        return np.array(self.chips, dtype=float)


def wh_sequence(index: int, length: int = 32) -> PilotSequence:
    """Row ``index`` of the Sylvester-construction Hadamard matrix."""
    if length < 1 or length & (length - 1):
        raise ValueError("length must be a power of two")
    if not 0 <= index < length:
        raise ValueError(f"index must be in 0..{length - 1}")
    chips = tuple(1 - 2 * ((index & col).bit_count() & 1) for col in range(length))
    return PilotSequence(code_index=index, chips=chips)


def scramble(seq: PilotSequence, overlay: np.ndarray) -> PilotSequence:
    """Apply a fixed +-1 overlay; matched correlation is transparent to it."""
    chips = seq.as_array() * np.asarray(overlay, dtype=float)
    return PilotSequence(code_index=seq.code_index, chips=tuple(int(c) for c in chips))


def pilot_positions(layout: SuperframeLayout) -> list[int]:
    """Start indices of the full inter-pilot periods in one superframe.

    One pilot per full period: k*inter_pilot_period for
    k = 0 .. floor(superframe_len/period) - 1 (640 for the default
    numerology).
    """
    count = layout.superframe_len // layout.inter_pilot_period
    return [k * layout.inter_pilot_period for k in range(count)]


def pilot_correlate(rx_symbols, seq: PilotSequence) -> complex:
    """Matched correlation (1/N) * sum(rx * chips) over one pilot field.

    For a noiseless rotated pilot exp(1j*phi)*chips the result is exactly
    exp(1j*phi); orthogonal codes correlate to zero.
    """
    rx = np.asarray(rx_symbols, dtype=complex)
    chips = seq.as_array()
    if rx.shape != chips.shape:
        raise ValueError(f"expected {chips.size} symbols, got {rx.size}")
    return complex(np.mean(rx * chips))


def simulate_pilot_rx(tx_phase_rad: float, seq: PilotSequence, symbol_snr_db: float,
                      rng: np.random.Generator) -> complex:
    """Symbol-level pilot transmission, AWGN and matched correlation.

    Synthesizes the pilot field as unit-magnitude symbols carrying
    ``tx_phase_rad`` under the +-1 code, adds per-symbol complex AWGN at
    ``symbol_snr_db``, and correlates.  The phase-estimate statistics
    match the decimated-tick shortcut
    ``sigma_from_snr(symbol_snr_db, compression_gain_db)``.
    """
    chips = seq.as_array()
    n = chips.size
    symbols = chips * np.exp(1j * tx_phase_rad)
    sigma = sigma_from_snr(symbol_snr_db, 0.0)
    if sigma > 0:
        noise = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * (sigma / math.sqrt(2.0))
        symbols = symbols + noise
    return pilot_correlate(symbols, seq)


def decimated_phase_error_model(symbol_snr_db: float, layout: SuperframeLayout,
                                n: int, rng: np.random.Generator) -> np.ndarray:
    """Phase errors of the decimated-tick AWGN shortcut, for cross-checks."""
    sigma = sigma_from_snr(symbol_snr_db, layout.compression_gain_db)
    noise = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * (sigma / math.sqrt(2.0))
    return np.angle(1.0 + noise)
