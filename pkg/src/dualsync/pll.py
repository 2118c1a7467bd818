"""Second-order tracking loop: discriminator, loop controller, NCO.

The loop controller is ``Y(s) = (2*zeta*omega + omega**2/s)/s``; both
integrators are discretized with the trapezoidal rule
``1/s -> (T/2)*(z+1)/(z-1)``.  The controller emits the per-tick phase
increment, so the NCO accumulator realizes the outer integrator and the
closed loop is the classic unity-feedback second-order response

    G(s) = (2*zeta*omega*s + omega**2) / (s**2 + 2*zeta*omega*s + omega**2)
"""

from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass, replace

from .linear_analysis import RationalDelayTF

TWO_PI = 2.0 * math.pi


def wrap_phase(x: float) -> float:
    """Wrap a phase to the half-open interval (-pi, pi]."""
    return x + TWO_PI * math.floor((math.pi - x) / TWO_PI)


def discriminate(received: complex, reference: complex) -> float:
    """Phase of ``received`` relative to ``reference``, in (-pi, pi].

    Raises ValueError if either phasor has zero magnitude (the angle is
    undefined there).
    """
    if received == 0 or reference == 0:
        raise ValueError("zero-magnitude phasor has no defined angle")
    return wrap_phase(cmath.phase(received * reference.conjugate()))


@dataclass(frozen=True)
class LoopConfig:
    """Damping factor, natural frequency and update interval of one loop.

    ``omega_n_hz`` is the natural frequency as configured, in Hz.  The
    internal rad/s value depends on ``omega_units``:

    * ``"hz_times_2pi"`` (default): omega = 2*pi*omega_n_hz.  This is the
      interpretation pinned by the round-trip delay-margin anchor (0.23 us
      at 1 MHz, see ``linear_analysis.delay_margin``).
    * ``"hz_as_rad"``: the configured number is used directly as rad/s.
    """

    zeta: float
    omega_n_hz: float
    tick_period_s: float
    omega_units: str = "hz_times_2pi"

    def __post_init__(self):
        if self.zeta <= 0:
            raise ValueError("zeta must be positive")
        if self.omega_n_hz <= 0:
            raise ValueError("omega_n_hz must be positive")
        if self.tick_period_s <= 0:
            raise ValueError("tick_period_s must be positive")
        if self.omega_units not in ("hz_times_2pi", "hz_as_rad"):
            raise ValueError(f"unknown omega_units {self.omega_units!r}")
        if self.omega_rad_s * self.tick_period_s > 0.1:
            warnings.warn(
                "omega_n * tick_period > 0.1; the discrete loop will deviate "
                "from the continuous-domain response",
                stacklevel=2,
            )

    @property
    def omega_rad_s(self) -> float:
        if self.omega_units == "hz_times_2pi":
            return TWO_PI * self.omega_n_hz
        return self.omega_n_hz


@dataclass(frozen=True)
class LoopUnit:
    """State of one tracking loop.

    ``acc_inner`` is the trapezoidal accumulator of omega**2 * error,
    ``acc_outer`` the accumulated control output, and ``nco_phase`` the
    wrapped output phase.  ``prev_inner_in``/``prev_outer_in`` hold the
    previous integrator inputs required by the trapezoidal rule.
    """

    acc_inner: float = 0.0
    acc_outer: float = 0.0
    nco_phase: float = 0.0
    prev_inner_in: float = 0.0
    prev_outer_in: float = 0.0


def controller_step(unit: LoopUnit, error: float, cfg: LoopConfig) -> tuple[LoopUnit, float]:
    """Advance the loop controller by one tick.

    Returns the new unit and the control output (phase increment per tick).
    The inner path integrates omega**2 * error; the outer path integrates
    2*zeta*omega*error plus the inner accumulator.  ``acc_outer`` carries
    the accumulated control, which equals the output phase unwrapped.
    """
    if not math.isfinite(error):
        raise ValueError("loop error must be finite")
    om = cfg.omega_rad_s
    half_t = 0.5 * cfg.tick_period_s
    inner_in = om * om * error
    acc_inner = unit.acc_inner + half_t * (inner_in + unit.prev_inner_in)
    outer_in = 2.0 * cfg.zeta * om * error + acc_inner
    control = half_t * (outer_in + unit.prev_outer_in)
    new = replace(
        unit,
        acc_inner=acc_inner,
        acc_outer=unit.acc_outer + control,
        prev_inner_in=inner_in,
        prev_outer_in=outer_in,
    )
    return new, control


def nco_step(unit: LoopUnit, control: float) -> tuple[LoopUnit, complex]:
    """Advance the NCO phase by ``control`` and return the unit phasor."""
    if not math.isfinite(control):
        raise ValueError("control must be finite")
    phase = wrap_phase(unit.nco_phase + control)
    return replace(unit, nco_phase=phase), cmath.exp(1j * phase)


def loop_step(unit: LoopUnit, received: complex, cfg: LoopConfig) -> tuple[LoopUnit, float]:
    """One full closed-loop iteration: discriminate, control, advance NCO.

    Returns the new unit and the discriminator error that drove the step.
    """
    err = discriminate(received, cmath.exp(1j * unit.nco_phase))
    unit, control = controller_step(unit, err, cfg)
    unit, _ = nco_step(unit, control)
    return unit, err


def closed_tf(cfg: LoopConfig) -> RationalDelayTF:
    """Continuous-domain closed-loop transfer function of the unit."""
    om = cfg.omega_rad_s
    return RationalDelayTF(
        num=(om * om, 2.0 * cfg.zeta * om),
        den=(om * om, 2.0 * cfg.zeta * om, 1.0),
    )
