"""Directed carrier legs: propagation phase, Doppler rotation and AWGN.

Each leg applies a static propagation phase (the transport delay wrapped
at its carrier frequency), a common Doppler rotation and independent
complex white noise calibrated from the raw per-symbol SNR plus the
pilot compression gain.  Transport delay beyond the static rotation is
modeled as an integer number of whole ticks of loop latency; at the
decimated tick rate one tick is ~120 us, far above any delay of
interest, so fractional-tick delay dynamics are left to the
linear-analysis module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .pll import wrap_phase

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class CarrierPlan:
    """Symmetric frequency plan around the application central frequency.

    Forward carriers sit at f_c -+ f_m, return carriers at f_c -+ f_s;
    both pairs share the midpoint f_c, which is what makes round-trip
    reciprocity usable for one-way compensation.
    """

    fc_hz: float = 2200e6
    fm_hz: float = 50e6
    fs_hz: float = 40e6

    def __post_init__(self):
        if not (0 < self.fs_hz < self.fm_hz < self.fc_hz):
            raise ValueError("carrier plan requires 0 < fs < fm < fc")

    @property
    def forward_hz(self) -> tuple[float, float]:
        return (self.fc_hz - self.fm_hz, self.fc_hz + self.fm_hz)

    @property
    def return_hz(self) -> tuple[float, float]:
        return (self.fc_hz - self.fs_hz, self.fc_hz + self.fs_hz)

    @property
    def carriers_hz(self) -> tuple[float, float, float, float]:
        return self.forward_hz + self.return_hz


def prop_phase(f_hz: float, tau_s: float) -> float:
    """Propagation phase -2*pi*f*tau wrapped to (-pi, pi]."""
    if f_hz <= 0:
        raise ValueError("carrier frequency must be positive")
    if tau_s < 0:
        raise ValueError("delay must be nonnegative")
    return wrap_phase(-TWO_PI * f_hz * tau_s)


def sigma_from_snr(snr_db: float, compression_gain_db: float) -> float:
    """Complex noise std per decimated tick relative to a unit carrier.

    10**(-(snr + gain)/20); an infinite SNR gives exactly zero.
    """
    if math.isnan(snr_db):
        raise ValueError("snr_db must not be NaN")
    if math.isinf(snr_db):
        if snr_db > 0:
            return 0.0
        raise ValueError("snr_db must be finite or +inf")
    return 10.0 ** (-(snr_db + compression_gain_db) / 20.0)


def compression_gain_db(pilot_len: int = 32) -> float:
    """Coherent gain of correlating over one pilot field: 10*log10(len)."""
    if pilot_len < 1:
        raise ValueError("pilot_len must be positive")
    return 10.0 * math.log10(pilot_len)


@dataclass(frozen=True)
class ChannelLeg:
    """One directed carrier path at the decimated tick rate."""

    tau_s: float
    prop_phase_rad: float
    doppler_hz: float
    noise_sigma: float
    tick_period_s: float

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if not -math.pi < self.prop_phase_rad <= math.pi:
            raise ValueError("prop_phase must be wrapped to (-pi, pi]")
        if self.tick_period_s <= 0:
            raise ValueError("tick_period_s must be positive")

    def rotation(self, tick_index: int) -> float:
        return self.prop_phase_rad + TWO_PI * self.doppler_hz * tick_index * self.tick_period_s


def make_leg(f_hz: float, tau_s: float, doppler_hz: float, noise_sigma: float,
             tick_period_s: float) -> ChannelLeg:
    return ChannelLeg(
        tau_s=tau_s,
        prop_phase_rad=prop_phase(f_hz, tau_s),
        doppler_hz=doppler_hz,
        noise_sigma=noise_sigma,
        tick_period_s=tick_period_s,
    )


def make_legs(plan: CarrierPlan, tau_s: float, doppler_hz: float, noise_sigma: float,
              tick_period_s: float) -> tuple[ChannelLeg, ChannelLeg, ChannelLeg, ChannelLeg]:
    """The four legs of the ring, in carrier order (fwd lo, fwd hi, ret lo, ret hi).

    All legs share the same noise_sigma (equal transmit power per carrier)
    and the same Doppler shift (carrier offsets are a few percent of f_c,
    so differential Doppler is negligible at the scales simulated here).
    """
    return tuple(
        make_leg(f, tau_s, doppler_hz, noise_sigma, tick_period_s)
        for f in plan.carriers_hz
    )


def leg_step(tx_phasor: complex, leg: ChannelLeg, tick_index: int, gaussians) -> complex:
    """Propagate one phasor through the leg at the given tick.

    Rotates by the static propagation phase plus the accumulated Doppler
    and adds circularly-symmetric complex noise built from two
    unit-normal draws.
    """
    if abs(tx_phasor) > 1.0 + 1e-9:
        raise ValueError("transmit phasor magnitude exceeds unity")
    rot = leg.rotation(tick_index)
    out = tx_phasor * complex(math.cos(rot), math.sin(rot))
    if leg.noise_sigma > 0.0:
        ga, gb = (float(g) for g in gaussians)
        scale = leg.noise_sigma / math.sqrt(2.0)
        out = out + complex(scale * ga, scale * gb)
    return out


def mean_prop_phase(legs, indices=(0, 1)) -> float:
    """Circular mean propagation phase of a carrier pair."""
    s = sum(np.exp(1j * legs[i].prop_phase_rad) for i in indices)
    return float(np.angle(s))
