"""Two-state oscillator phase-noise synthesis from dBc/Hz masks.

The clock model is white phase noise plus a single-integrated (phase
walk) and a double-integrated (frequency walk) white noise.  Per tick:

    freq_state += sigma2 * g2
    phase      += freq_state + sigma1 * g1
    sample      = phase + sigma0 * g0        (white term not accumulated)

Mask levels are interpreted as L(f) in dBc/Hz, i.e. half the one-sided
phase PSD; the spectral module reports the same convention.  For a
synthesis rate fs the low-frequency accumulator responses give

    L(f) = a0 + a2/f**2 + a4/f**4        (linear power units)
    sigma0**2 = a0 * fs
    sigma1**2 = 4*pi**2 * a2 / fs
    sigma2**2 = 16*pi**4 * a4 / fs**3

The (a0, a2, a4) coefficients are fitted to the mask points by
nonnegative least squares in linear power units, each point weighted by
its own power so the fit works in relative (dB) error across the many
decades a mask spans.  The mapping is validated against the averaged
periodogram of the spectral module (see the test suite).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import nnls


class MaskFitError(ValueError):
    """Raised when no nonnegative power-law combination fits the mask."""

    def __init__(self, message: str, worst_offset_hz: float, worst_error_db: float):
        super().__init__(message)
        self.worst_offset_hz = worst_offset_hz
        self.worst_error_db = worst_error_db


@dataclass(frozen=True)
class NoiseMask:
    """Phase-noise mask: (offset_hz, level_dbc_hz) points at a reference carrier."""

    reference_freq_hz: float
    points: tuple

    def __post_init__(self):
        pts = tuple((float(f), float(lv)) for f, lv in self.points)
        if not pts:
            raise ValueError("mask needs at least one point")
        offs = [p[0] for p in pts]
        if any(f <= 0 for f in offs) or any(b <= a for a, b in zip(offs, offs[1:])):
            raise ValueError("mask offsets must be positive and strictly increasing")
        if not all(math.isfinite(p[1]) for p in pts):
            raise ValueError("mask levels must be finite")
        if self.reference_freq_hz <= 0:
            raise ValueError("reference frequency must be positive")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class TwoStateParams:
    """Per-tick noise intensities of the two-state clock model."""

    sigma0: float   # white phase noise std per tick, rad
    sigma1: float   # phase-walk driving noise std per tick, rad
    sigma2: float   # frequency-walk driving noise std per tick, rad/tick
    tick_rate_hz: float

    def __post_init__(self):
        if min(self.sigma0, self.sigma1, self.sigma2) < 0:
            raise ValueError("sigmas must be nonnegative")
        if self.tick_rate_hz <= 0:
            raise ValueError("tick_rate_hz must be positive")

    def rescaled(self, decimation: int) -> "TwoStateParams":
        """Equivalent parameters at the rate tick_rate/decimation.

        Accumulator intensities scale so the low-frequency PSD is
        unchanged; sigma0 is kept as-is, which reproduces the noise-floor
        fold-up that plain decimation of the full-rate process produces.
        """
        if decimation < 1:
            raise ValueError("decimation must be >= 1")
        d = float(decimation)
        return TwoStateParams(
            sigma0=self.sigma0,
            sigma1=self.sigma1 * math.sqrt(d),
            sigma2=self.sigma2 * d**1.5,
            tick_rate_hz=self.tick_rate_hz / d,
        )


@dataclass(frozen=True)
class TwoStateClock:
    """Oscillator state: accumulated phase and frequency plus noise params."""

    params: TwoStateParams
    phase: float = 0.0
    freq_state: float = 0.0


def fit_two_state(mask: NoiseMask, tick_rate_hz: float, tol_db: float = 3.0) -> TwoStateParams:
    """Fit per-tick sigmas so the synthesized PSD passes through the mask.

    Nonnegative least squares on the mask points in linear power units,
    row-weighted by each point's power; coefficients whose contribution is
    below 1e-6 of the model everywhere are snapped to zero.  Raises
    MaskFitError when the best fit misses any point by more than tol_db.
    """
    if tick_rate_hz <= 0:
        raise ValueError("tick_rate_hz must be positive")
    f = np.array([p[0] for p in mask.points], dtype=float)
    power = 10.0 ** (np.array([p[1] for p in mask.points], dtype=float) / 10.0)
    basis = np.column_stack([np.ones_like(f), f**-2.0, f**-4.0])
    a, _ = nnls(basis / power[:, None], np.ones_like(power))
    model = basis @ a
    contrib = basis * a
    for j in range(3):
        if np.all(contrib[:, j] <= 1e-6 * model):
            a[j] = 0.0
    model = basis @ a
    err_db = 10.0 * np.log10(model / power)
    worst = int(np.argmax(np.abs(err_db)))
    if abs(err_db[worst]) > tol_db:
        raise MaskFitError(
            f"mask not representable by a0 + a2/f^2 + a4/f^4: worst point "
            f"{f[worst]:g} Hz off by {err_db[worst]:+.2f} dB",
            worst_offset_hz=float(f[worst]),
            worst_error_db=float(err_db[worst]),
        )
    fs = float(tick_rate_hz)
    return TwoStateParams(
        sigma0=math.sqrt(a[0] * fs),
        sigma1=math.sqrt(4.0 * math.pi**2 * a[1] / fs),
        sigma2=math.sqrt(16.0 * math.pi**4 * a[2] / fs**3),
        tick_rate_hz=fs,
    )


def model_psd_dbc_hz(params: TwoStateParams, freqs_hz) -> np.ndarray:
    """Analytic L(f) of the fitted model, for verification output."""
    f = np.asarray(freqs_hz, dtype=float)
    fs = params.tick_rate_hz
    a0 = params.sigma0**2 / fs
    a2 = params.sigma1**2 * fs / (4.0 * math.pi**2)
    a4 = params.sigma2**2 * fs**3 / (16.0 * math.pi**4)
    return 10.0 * np.log10(a0 + a2 / f**2 + a4 / f**4)


def clock_step(clock: TwoStateClock, gaussians) -> tuple[TwoStateClock, float]:
    """Advance the clock one tick using three unit-normal draws."""
    g0, g1, g2 = (float(g) for g in gaussians)
    p = clock.params
    freq_state = clock.freq_state + p.sigma2 * g2
    phase = clock.phase + freq_state + p.sigma1 * g1
    if not math.isfinite(phase):
        raise ValueError("clock phase diverged")
    sample = phase + p.sigma0 * g0
    return replace(clock, phase=phase, freq_state=freq_state), sample


def synthesize_phase(params: TwoStateParams, n: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Vectorized synthesis of n emitted phase samples from a zeroed clock.

    Identical sample-for-sample to iterating clock_step with the three
    gaussian streams drawn as rng.standard_normal((3, n)).
    """
    g = rng.standard_normal((3, n))
    freq = np.cumsum(params.sigma2 * g[2])
    phase = np.cumsum(freq + params.sigma1 * g[1])
    return phase + params.sigma0 * g[0]


def scale_to_rf(phase_series, ratio: float) -> np.ndarray:
    """Scale a phase series to a higher carrier; PSD shifts by 20*log10(ratio)."""
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    return np.asarray(phase_series, dtype=float) * float(ratio)


# default masks: a low-noise chip-scale atomic clock class reference for
# the master and a commercial-grade OCXO class reference for the follower,
# both specified at a 10 MHz carrier
DEFAULT_MASTER_MASK = NoiseMask(10e6, ((1.0, -85.0), (10.0, -125.0), (10e3, -160.0)))
DEFAULT_FOLLOWER_MASK = NoiseMask(10e6, ((1.0, -70.0), (10.0, -100.0), (10e3, -140.0)))
