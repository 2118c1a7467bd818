"""Master and follower state machines and the scenario runner.

Ring topology per decimated tick (latency >= 1 tick on every leg):

* the master measures the two return carriers against its own LO,
  removes the previously applied compensation from the round-trip
  estimate, tracks the result with its loop and pre-distorts both
  forward carriers by half the compensation phase:
  ``tx1 = tx2 = exp(1j*(theta_0 + alpha/2))``;
* the follower averages the two forward discriminators, tracks the
  average with its loop and returns
  ``tx3 = tx4 = exp(1j*(theta_out + theta_x))``.

At a static reciprocal channel the compensation converges to minus the
round-trip mean propagation phase, the applied half cancels the one-way
path, and the beamforming phase difference ``theta_bf - theta_0`` goes
to zero (shifted by ``theta_offset/2`` when a setpoint is commanded).

Phase bookkeeping: ``alpha`` and ``theta_out`` accumulate unwrapped;
wrapping happens only at the discriminators.  The per-carrier ``angle``
measurements at the master are wrapped per tick; with
``wrap_compensation`` enabled they are unwrapped across ticks, otherwise
sustained drift makes them hop 2*pi and the divide-by-two stages turn
those hops into the 90-degree ambiguity jumps this loop family is known
for.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import (
    CarrierPlan,
    ChannelLeg,
    compression_gain_db,
    leg_step,
    make_legs,
    sigma_from_snr,
)
from .oscillator import (
    DEFAULT_FOLLOWER_MASK,
    DEFAULT_MASTER_MASK,
    NoiseMask,
    TwoStateClock,
    fit_two_state,
    synthesize_phase,
)
from .pll import LoopConfig, LoopUnit, controller_step, discriminate, wrap_phase

TWO_PI = 2.0 * math.pi
DIVERGENCE_LIMIT_RAD = 1e6


class DivergenceError(RuntimeError):
    """A loop phase exceeded the divergence guard."""

    def __init__(self, tick: int):
        super().__init__(f"scenario diverged at tick {tick} (phase beyond "
                         f"{DIVERGENCE_LIMIT_RAD:g} rad)")
        self.tick = tick


@dataclass(frozen=True)
class MasterState:
    """Compensation loop state of the master node."""

    cfg: LoopConfig
    clock: TwoStateClock
    loop: LoopUnit = field(default_factory=LoopUnit)
    alpha: float = 0.0
    theta_offset: float = 0.0
    wrap_compensation: bool = True
    dual_carrier: bool = True
    r3_track: float | None = None
    r4_track: float | None = None
    last_r3: float = 0.0
    last_r4: float = 0.0


@dataclass(frozen=True)
class FollowerState:
    """Tracking loop state of the follower node."""

    cfg: LoopConfig
    clock: TwoStateClock
    loop: LoopUnit = field(default_factory=LoopUnit)
    theta_out: float = 0.0
    dual_carrier: bool = True
    lo_prev: float | None = None
    last_r1: float = 0.0
    last_r2: float = 0.0


def follower_step(rx1: complex, rx2: complex | None,
                  state: FollowerState) -> tuple[FollowerState, float, float, complex, complex]:
    """One follower tick: average the discriminators, track, retransmit.

    Returns (new state, theta_out, theta_bf, tx3, tx4).  ``rx2`` may be
    None in single-carrier operation.  The discriminator reference is the
    composite carrier (NCO times LO) as generated at the previous update,
    keeping both terms on the same epoch; a follower LO frequency offset
    is then absorbed with zero steady-state error.
    """
    theta_x = state.clock.phase
    lo_ref = state.lo_prev if state.lo_prev is not None else theta_x
    ref = cmath.exp(1j * (state.theta_out + lo_ref))
    e1 = discriminate(rx1, ref)
    if state.dual_carrier:
        if rx2 is None:
            raise ValueError("dual-carrier follower needs both received phasors")
        e2 = discriminate(rx2, ref)
        err = wrap_phase(0.5 * (e1 + e2))
        r2 = wrap_phase(cmath.phase(rx2) - theta_x)
    else:
        err = e1
        e2 = 0.0
        r2 = 0.0
    loop, control = controller_step(state.loop, err, state.cfg)
    theta_out = state.theta_out + control
    theta_bf = theta_out + theta_x
    tx = cmath.exp(1j * theta_bf)
    new = replace(
        state,
        loop=loop,
        theta_out=theta_out,
        lo_prev=theta_x,
        last_r1=wrap_phase(cmath.phase(rx1) - theta_x),
        last_r2=r2,
    )
    return new, theta_out, theta_bf, tx, tx


def master_step(rx3: complex, rx4: complex | None,
                state: MasterState) -> tuple[MasterState, float, complex, complex]:
    """One master tick: estimate the round trip, track alpha, pre-distort.

    The measurement uses the previous tick's alpha; its removal leaves
    the round-trip mean propagation phase, which the loop drives to the
    commanded setpoint.  Returns (new state, alpha, tx1, tx2).
    """
    theta_0 = state.clock.phase
    lo = cmath.exp(1j * theta_0)
    r3 = discriminate(rx3, lo)
    if state.dual_carrier:
        if rx4 is None:
            raise ValueError("dual-carrier master needs both received phasors")
        r4 = discriminate(rx4, lo)
    else:
        r4 = 0.0
    if state.wrap_compensation:
        t3 = r3 if state.r3_track is None else state.r3_track + wrap_phase(r3 - state.r3_track)
        t4 = r4 if state.r4_track is None else state.r4_track + wrap_phase(r4 - state.r4_track)
    else:
        t3, t4 = r3, r4
    mean_r = 0.5 * (t3 + t4) if state.dual_carrier else t3
    err = wrap_phase(state.theta_offset - mean_r - 0.5 * state.alpha)
    loop, control = controller_step(state.loop, err, state.cfg)
    alpha = state.alpha + control
    tx = cmath.exp(1j * (theta_0 + 0.5 * alpha))
    new = replace(
        state,
        loop=loop,
        alpha=alpha,
        r3_track=t3 if state.wrap_compensation else None,
        r4_track=t4 if state.wrap_compensation else None,
        last_r3=r3,
        last_r4=r4,
    )
    return new, alpha, tx, tx


@dataclass(frozen=True)
class Scenario:
    """Physical description of one simulation run (rates, loops, channel)."""

    duration_s: float = 10.0
    baud_hz: float = 8e6
    decimation: int = 956
    zeta_m: float = 1.0
    omega_m_hz: float = 100.0
    zeta_s: float = 1.0
    omega_s_hz: float = 100.0
    theta_offset: float = 0.0
    master_mask: NoiseMask = DEFAULT_MASTER_MASK
    follower_mask: NoiseMask = DEFAULT_FOLLOWER_MASK
    ideal_clocks: bool = False
    initial_follower_phase_rad: float = 0.0
    follower_freq_offset_hz: float = 0.0
    plan: CarrierPlan = field(default_factory=CarrierPlan)
    tau_s: float = 0.0
    doppler_hz: float = 0.0
    snr_db: float = math.inf
    pilot_len: int = 32
    loop_latency_ticks: int = 1
    dual_carrier: bool = True
    wrap_compensation: bool = True
    omega_units: str = "hz_times_2pi"

    @property
    def tick_rate_hz(self) -> float:
        return self.baud_hz / self.decimation

    @property
    def tick_period_s(self) -> float:
        return self.decimation / self.baud_hz

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration_s * self.tick_rate_hz))

    @property
    def noise_sigma(self) -> float:
        return sigma_from_snr(self.snr_db, compression_gain_db(self.pilot_len))

    def loop_config_master(self) -> LoopConfig:
        return LoopConfig(self.zeta_m, self.omega_m_hz, self.tick_period_s, self.omega_units)

    def loop_config_follower(self) -> LoopConfig:
        return LoopConfig(self.zeta_s, self.omega_s_hz, self.tick_period_s, self.omega_units)

    def legs(self) -> tuple[ChannelLeg, ChannelLeg, ChannelLeg, ChannelLeg]:
        return make_legs(self.plan, self.tau_s, self.doppler_hz, self.noise_sigma,
                         self.tick_period_s)


@dataclass(frozen=True)
class ScenarioResult:
    """Decimated-rate time series of one run, reproducible from (scenario, seed)."""

    tick_rate_hz: float
    seed: int
    theta_bf_minus_theta0: np.ndarray
    theta_out: np.ndarray
    alpha: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    r3: np.ndarray
    r4: np.ndarray

    @property
    def n_ticks(self) -> int:
        return self.theta_bf_minus_theta0.size

    @property
    def t_s(self) -> np.ndarray:
        return np.arange(self.n_ticks) / self.tick_rate_hz

    def rows(self):
        """Yield timeseries.csv rows (tick, t_s, series...)."""
        t = self.t_s
        for i in range(self.n_ticks):
            yield (i, t[i], self.theta_bf_minus_theta0[i], self.theta_out[i],
                   self.alpha[i], self.r1[i], self.r2[i], self.r3[i], self.r4[i])


def _clock_series(scn: Scenario, rng: np.random.Generator, mask: NoiseMask,
                  n: int) -> np.ndarray:
    """RF-scaled oscillator phase series at the decimated tick rate.

    Parameters are fitted at the baud rate and rescaled to the decimated
    rate, mirroring full-rate synthesis followed by plain decimation.
    """
    if scn.ideal_clocks:
        return np.zeros(n)
    params = fit_two_state(mask, scn.baud_hz).rescaled(scn.decimation)
    rf_ratio = scn.plan.fc_hz / mask.reference_freq_hz
    return synthesize_phase(params, n, rng) * rf_ratio


def _tick_loop(n, tick_period, th0, thx, phi1, phi2, phi3, phi4, dopp_per_tick,
               noise, has_noise, zeta_m, om_m, zeta_s, om_s, theta_offset,
               latency, dual, wrap_comp, bf0, out_arr, al, r1a, r2a, r3a, r4a):
    """Sequential tick kernel; numba-compiled when available.

    Identical math to master_step/follower_step; returns the first
    diverged tick or -1.
    """
    pi = math.pi
    two_pi = TWO_PI
    half_t = 0.5 * tick_period
    txf = np.empty(latency)
    txr = np.empty(latency)
    for i in range(latency):
        txf[i] = th0[0]
        txr[i] = thx[0]
    alpha = 0.0
    theta_out = 0.0
    vm = 0.0
    em_prev = 0.0
    wm_prev = 0.0
    vs = 0.0
    es_prev = 0.0
    ws_prev = 0.0
    tr3 = 0.0
    tr4 = 0.0
    started = False
    thx_prev = thx[0]
    for i in range(n):
        t0 = th0[i]
        tx = thx[i]
        dop = dopp_per_tick * i
        slot = i % latency
        # master: receive the return pair, update the compensation loop
        p3 = txr[slot] + phi3 + dop
        re3 = math.cos(p3)
        im3 = math.sin(p3)
        p4 = txr[slot] + phi4 + dop
        re4 = math.cos(p4)
        im4 = math.sin(p4)
        if has_noise:
            re3 += noise[4, i]
            im3 += noise[5, i]
            re4 += noise[6, i]
            im4 += noise[7, i]
        c0 = math.cos(t0)
        s0 = math.sin(t0)
        r3 = math.atan2(im3 * c0 - re3 * s0, re3 * c0 + im3 * s0)
        r4 = math.atan2(im4 * c0 - re4 * s0, re4 * c0 + im4 * s0)
        if wrap_comp:
            if not started:
                tr3 = r3
                tr4 = r4
                started = True
            else:
                d3 = r3 - tr3
                tr3 = tr3 + (d3 + two_pi * math.floor((pi - d3) / two_pi))
                d4 = r4 - tr4
                tr4 = tr4 + (d4 + two_pi * math.floor((pi - d4) / two_pi))
            m3 = tr3
            m4 = tr4
        else:
            m3 = r3
            m4 = r4
        mean_r = 0.5 * (m3 + m4) if dual else m3
        em = theta_offset - mean_r - 0.5 * alpha
        em = em + two_pi * math.floor((pi - em) / two_pi)
        vm = vm + half_t * om_m * om_m * (em + em_prev)
        wm = 2.0 * zeta_m * om_m * em + vm
        alpha = alpha + half_t * (wm + wm_prev)
        em_prev = em
        wm_prev = wm
        txf_new = t0 + 0.5 * alpha
        # follower: receive the forward pair, update the tracking loop
        p1 = txf[slot] + phi1 + dop
        re1 = math.cos(p1)
        im1 = math.sin(p1)
        p2 = txf[slot] + phi2 + dop
        re2 = math.cos(p2)
        im2 = math.sin(p2)
        if has_noise:
            re1 += noise[0, i]
            im1 += noise[1, i]
            re2 += noise[2, i]
            im2 += noise[3, i]
        # reference = composite carrier (NCO x LO) from the previous epoch
        ref = theta_out + thx_prev
        cr = math.cos(ref)
        sr = math.sin(ref)
        e1 = math.atan2(im1 * cr - re1 * sr, re1 * cr + im1 * sr)
        e2 = math.atan2(im2 * cr - re2 * sr, re2 * cr + im2 * sr)
        if dual:
            es = 0.5 * (e1 + e2)
            es = es + two_pi * math.floor((pi - es) / two_pi)
        else:
            es = e1
            e2 = 0.0
        vs = vs + half_t * om_s * om_s * (es + es_prev)
        ws = 2.0 * zeta_s * om_s * es + vs
        theta_out = theta_out + half_t * (ws + ws_prev)
        es_prev = es
        ws_prev = ws
        theta_bf = theta_out + tx
        thx_prev = tx
        txf[slot] = txf_new
        txr[slot] = theta_bf
        bf0[i] = theta_bf - t0
        out_arr[i] = theta_out
        al[i] = alpha
        ct = math.cos(tx)
        st = math.sin(tx)
        r1a[i] = math.atan2(im1 * ct - re1 * st, re1 * ct + im1 * st)
        r2a[i] = math.atan2(im2 * ct - re2 * st, re2 * ct + im2 * st) if dual else 0.0
        r3a[i] = r3
        r4a[i] = r4 if dual else 0.0
        if (abs(alpha) > DIVERGENCE_LIMIT_RAD or abs(theta_out) > DIVERGENCE_LIMIT_RAD
                or alpha != alpha or theta_out != theta_out):
            return i
    return -1


try:  # optional acceleration; the pure-Python kernel is the reference
    import numba as _numba

    _tick_loop_fast = _numba.njit(cache=True)(_tick_loop)
except ImportError:  # pragma: no cover
    _tick_loop_fast = _tick_loop


def run_scenario(scn: Scenario, seed: int, engine: str = "kernel") -> ScenarioResult:
    """Simulate the ring for scn.duration_s and record the decimated series.

    Fully deterministic per (scenario, seed): clock synthesis and the four
    leg noise streams draw from independent child generators spawned from
    the seed.  ``engine="reference"`` runs the per-tick dataclass state
    machines instead of the compiled kernel (slow; used for validation).
    """
    n = scn.n_ticks
    if n < 1:
        raise ValueError("scenario duration shorter than one tick")
    if scn.loop_latency_ticks < 1:
        raise ValueError("loop_latency_ticks must be >= 1 for causality")
    seeds = np.random.SeedSequence(seed).spawn(6)
    rng_m, rng_f = (np.random.default_rng(s) for s in seeds[:2])
    th0 = _clock_series(scn, rng_m, scn.master_mask, n)
    thx = _clock_series(scn, rng_f, scn.follower_mask, n)
    if scn.initial_follower_phase_rad:
        thx = thx + scn.initial_follower_phase_rad
    if scn.follower_freq_offset_hz:
        thx = thx + TWO_PI * scn.follower_freq_offset_hz * scn.tick_period_s * np.arange(n)
    sigma = scn.noise_sigma
    if sigma > 0.0:
        per_quad = sigma / math.sqrt(2.0)
        noise = np.empty((8, n))
        for leg in range(4):
            g = np.random.default_rng(seeds[2 + leg]).standard_normal((2, n))
            noise[2 * leg] = per_quad * g[0]
            noise[2 * leg + 1] = per_quad * g[1]
        has_noise = True
    else:
        noise = np.zeros((8, 1))
        has_noise = False
    legs = scn.legs()
    phi = [leg.prop_phase_rad for leg in legs]
    dopp_per_tick = TWO_PI * scn.doppler_hz * scn.tick_period_s
    cfg_m = scn.loop_config_master()
    cfg_s = scn.loop_config_follower()

    out = [np.empty(n) for _ in range(7)]
    if engine == "kernel":
        bad = _tick_loop_fast(
            n, scn.tick_period_s, th0, thx, phi[0], phi[1], phi[2], phi[3],
            dopp_per_tick, noise, has_noise, cfg_m.zeta, cfg_m.omega_rad_s,
            cfg_s.zeta, cfg_s.omega_rad_s, scn.theta_offset,
            scn.loop_latency_ticks, scn.dual_carrier, scn.wrap_compensation,
            *out,
        )
    elif engine == "reference":
        bad = _reference_loop(scn, cfg_m, cfg_s, th0, thx, noise, has_noise, out)
    else:
        raise ValueError(f"unknown engine {engine!r}")
    if bad >= 0:
        raise DivergenceError(bad)
    return ScenarioResult(
        tick_rate_hz=scn.tick_rate_hz,
        seed=seed,
        theta_bf_minus_theta0=out[0],
        theta_out=out[1],
        alpha=out[2],
        r1=out[3],
        r2=out[4],
        r3=out[5],
        r4=out[6],
    )


def _reference_loop(scn: Scenario, cfg_m: LoopConfig, cfg_s: LoopConfig,
                    th0, thx, noise, has_noise, out) -> int:
    """Tick loop built from the per-step node state machines."""
    from .oscillator import TwoStateParams

    dummy = TwoStateParams(0.0, 0.0, 0.0, scn.tick_rate_hz)
    master = MasterState(
        cfg=cfg_m,
        clock=TwoStateClock(dummy),
        theta_offset=scn.theta_offset,
        wrap_compensation=scn.wrap_compensation,
        dual_carrier=scn.dual_carrier,
    )
    follower = FollowerState(
        cfg=cfg_s,
        clock=TwoStateClock(dummy),
        dual_carrier=scn.dual_carrier,
    )
    legs = scn.legs()
    lat = scn.loop_latency_ticks
    txf = [cmath.exp(1j * th0[0])] * lat
    txr = [cmath.exp(1j * thx[0])] * lat
    n = th0.size
    bf0, out_arr, al, r1a, r2a, r3a, r4a = out
    noiseless = (0.0, 0.0)
    for i in range(n):
        master = replace(master, clock=replace(master.clock, phase=th0[i]))
        follower = replace(follower, clock=replace(follower.clock, phase=thx[i]))
        slot = i % lat
        g = noise[:, i] if has_noise else None
        # channel legs carry unit phasors; noise is pre-scaled per quadrature
        def through(leg, tx, j):
            rx = leg_step(tx, replace(leg, noise_sigma=0.0), i, noiseless)
            if g is not None:
                rx += complex(g[2 * j], g[2 * j + 1])
            return rx
        rx3 = through(legs[2], txr[slot], 2)
        rx4 = through(legs[3], txr[slot], 3) if scn.dual_carrier else None
        master, alpha, tx_f, _ = master_step(rx3, rx4, master)
        rx1 = through(legs[0], txf[slot], 0)
        rx2 = through(legs[1], txf[slot], 1) if scn.dual_carrier else None
        follower, theta_out, theta_bf, tx_r, _ = follower_step(rx1, rx2, follower)
        txf[slot] = tx_f
        txr[slot] = tx_r
        bf0[i] = theta_bf - th0[i]
        out_arr[i] = theta_out
        al[i] = alpha
        r1a[i] = follower.last_r1
        r2a[i] = follower.last_r2
        r3a[i] = master.last_r3
        r4a[i] = master.last_r4
        if abs(alpha) > DIVERGENCE_LIMIT_RAD or abs(theta_out) > DIVERGENCE_LIMIT_RAD:
            return i
    return -1


def detect_ambiguity_jumps(series, threshold: float = math.pi / 8,
                           snap_to: float = math.pi / 2,
                           snap_tol: float = math.pi / 16) -> list[tuple[int, float]]:
    """Find divide-by-two ambiguity jumps in a phase-difference series.

    Flags samples whose between-sample change exceeds ``threshold`` and
    snaps each to the nearest nonzero multiple of ``snap_to``; changes
    farther than ``snap_tol`` from any such multiple are discarded, so
    every reported magnitude is ~k*pi/2 within pi/16.  The series should
    be sampled coarsely relative to the loop settling time (a jump takes
    ~10/omega_n to complete), e.g. every 50 ms for 100 Hz loops.
    """
    x = np.asarray(series, dtype=float)
    if x.size < 2:
        raise ValueError("series needs at least two samples")
    diffs = np.diff(x)
    hits = []
    for idx in np.nonzero(np.abs(diffs) > threshold)[0]:
        d = diffs[idx]
        k = round(d / snap_to)
        if k != 0 and abs(d - k * snap_to) <= snap_tol:
            hits.append((int(idx + 1), float(k * snap_to)))
    return hits
