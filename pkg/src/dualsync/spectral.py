"""Phase-noise PSD estimation: decimation, Dolph-Chebyshev windowing and
the averaged periodogram.

Reported levels are L(f) = S_phi(f)/2 in dBc/Hz, where S_phi is the
one-sided phase PSD of the input series (radians).  White phase samples
of variance sigma**2 at rate fs therefore estimate to a flat
10*log10(sigma**2/fs).  No overlap and no detrending are applied; an
optional mean-removal flag exists but defaults off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["PsdEstimate", "decimate", "cheb_window", "psd_estimate", "psd_level_at"]


def decimate(series, factor: int) -> np.ndarray:
    """Keep every factor-th sample starting at index 0 (no prefilter).

    The output rate is the input rate divided by ``factor``; any white
    phase-noise floor folds up by the same factor, which is part of the
    decimated-domain model.
    """
    if factor < 1 or int(factor) != factor:
        raise ValueError("factor must be a positive integer")
    x = np.asarray(series)
    return x[:: int(factor)]


def cheb_window(n: int, atten_db: float) -> np.ndarray:
    """Dolph-Chebyshev window with equiripple sidelobes at -atten_db.

    Built from the closed-form Chebyshev frequency response followed by an
    inverse transform, normalized to unit peak.  The frequency samples
    span ~atten_db of dynamic range, so the main-lobe samples (magnitude
    above the ripple) are inverse-transformed by a direct cosine sum with
    integer-exact phase reduction while the ripple samples go through the
    FFT; this keeps coefficient roundoff below the design sidelobe level
    for attenuations far beyond 120 dB.
    """
    if n < 16:
        raise ValueError("window length must be >= 16")
    if not 40.0 <= atten_db <= 320.0:
        raise ValueError("attenuation must lie in [40, 320] dB for double precision")
    order = n - 1
    big_a = np.arccosh(10.0 ** (atten_db / 20.0)) / order
    beta_m1 = 2.0 * np.sinh(0.5 * big_a) ** 2          # beta - 1, full relative precision
    k = np.arange(n)
    k_pole = np.minimum(k, n - k)                      # distance from nearest spectral peak
    one_m_cos = 2.0 * np.sin(np.pi * k_pole / (2.0 * n)) ** 2
    v = beta_m1 - one_m_cos - beta_m1 * one_m_cos      # beta*cos(pi*k/n) -+ 1
    neg_side = 2 * k > n
    p = np.empty(n)
    main = v > 0
    vm = v[main]
    p[main] = np.cosh(order * np.log1p(vm + np.sqrt(vm * (2.0 + vm))))
    theta = 2.0 * np.arcsin(np.sqrt(0.5 * np.maximum(-v[~main], 0.0)))
    p[~main] = np.cos(order * theta)
    # negative-frequency-side signs: cos(order*(pi - theta)) for ripple,
    # the standard parity factor for main-lobe samples
    if order % 2 == 1:
        flip = neg_side & ~main
        p[flip] = -p[flip]
    p[main & neg_side] *= float(2 * (n % 2) - 1)

    m = np.arange(n, dtype=np.int64)
    idx = np.nonzero(main)[0]
    if n % 2:
        w = np.real(np.fft.fft(np.where(main, 0.0, p)))
        for i in idx:
            r = (2 * int(i) * m) % (2 * n)             # exact phase mod 2*pi
            w += p[i] * np.cos(np.pi * r / n)
        half = (n + 1) // 2
        w = np.concatenate((w[half - 1:0:-1], w[:half]))
    else:
        phase = np.exp(1j * np.pi * k / n)
        w = np.real(np.fft.fft(np.where(main, 0.0 + 0.0j, p * phase)))
        for i in idx:
            r = (int(i) * (2 * m - 1)) % (2 * n)
            w += p[i] * np.cos(np.pi * r / n)
        half = n // 2 + 1
        w = np.concatenate((w[half - 1:0:-1], w[1:half]))
    return w / np.max(w)


@dataclass(frozen=True)
class PsdEstimate:
    """Averaged-periodogram estimate in dBc/Hz (L(f) convention)."""

    freqs_hz: np.ndarray
    levels_dbc_hz: np.ndarray
    block_len: int
    n_blocks: int
    window_atten_db: float
    fs_hz: float


def psd_estimate(
    phase_rad,
    fs_hz: float,
    block_len: int = 2**17,
    n_blocks: int = 32,
    window: np.ndarray | None = None,
    window_atten_db: float = 300.0,
    remove_mean: bool = False,
) -> PsdEstimate:
    """Averaged periodogram over non-overlapped windowed blocks.

    Needs at least block_len*n_blocks samples.  The estimate is one-sided
    (DC bin not doubled), scaled by the window power and bin width, and
    reported as L(f) = S_phi/2 in dBc/Hz.
    """
    x = np.asarray(phase_rad, dtype=float)
    needed = block_len * n_blocks
    if x.size < needed:
        raise ValueError(
            f"need at least {needed} samples ({n_blocks} blocks of {block_len}), got {x.size}"
        )
    if window is None:
        window = cheb_window(block_len, window_atten_db)
    elif len(window) != block_len:
        raise ValueError("window length must equal block_len")
    if remove_mean:
        x = x - np.mean(x[:needed])
    u = np.sum(np.asarray(window) ** 2)
    half = block_len // 2
    acc = np.zeros(half)
    for b in range(n_blocks):
        seg = x[b * block_len:(b + 1) * block_len] * window
        spec = np.fft.rfft(seg)[:half]
        acc += np.abs(spec) ** 2
    s_phi = acc / (n_blocks * u * fs_hz)
    s_phi[1:] *= 2.0
    with np.errstate(divide="ignore"):
        levels = 10.0 * np.log10(0.5 * s_phi)
    freqs = np.arange(half) * (fs_hz / block_len)
    return PsdEstimate(
        freqs_hz=freqs,
        levels_dbc_hz=levels,
        block_len=block_len,
        n_blocks=n_blocks,
        window_atten_db=float(window_atten_db),
        fs_hz=float(fs_hz),
    )


def psd_level_at(est: PsdEstimate, f_hz: float, rel_width: float = 0.1) -> float:
    """Mean level (dB) over the bins within +-rel_width of f_hz.

    Averaging a narrow band tames single-bin periodogram scatter when a
    mask anchor is read off the estimate.
    """
    f = est.freqs_hz
    band = (f >= (1.0 - rel_width) * f_hz) & (f <= (1.0 + rel_width) * f_hz) & (f > 0)
    if not np.any(band):
        idx = int(np.argmin(np.abs(f - f_hz)))
        if idx == 0:
            raise ValueError(f"offset {f_hz} Hz not resolvable on this grid")
        return float(est.levels_dbc_hz[idx])
    return float(np.mean(est.levels_dbc_hz[band]))
