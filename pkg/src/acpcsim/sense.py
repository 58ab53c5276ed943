"""DESAT-integrated measurement circuit emulation.

One circuit per switch serves three duties: on-state drain-source voltage
sensing (for on-resistance), body-diode voltage sensing in the third
quadrant, and a two-mode threshold-voltage measurement in which the bias
current source first charges the gate and then feeds the conducting channel.
The same sense path drives desaturation protection, whose pin voltage is

    v_desat = i_desat * r_s + 2 * v_d_hv + v_ds.

With matched divider resistors the amplifier output equals v_ds exactly; the
residual mismatch of the two blocking diodes appears as a per-device constant
bias e_d of a fraction of a millivolt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import device as dev_mod
from .device import DeviceState


class NotThirdQuadrant(RuntimeError):
    """Body-diode measurement attempted outside its contract."""


class VthMeasureTimeout(RuntimeError):
    """Channel conduction never reached (for instance an open gate)."""


class NotAtAmbient(RuntimeError):
    """Threshold measurement requires the device settled at ambient."""


class OverdriveCollapse(RuntimeError):
    """Aging shift leaves too little gate overdrive to compensate for."""


E_D_RANGE = (0.3e-3, 1.6e-3)  # measured mismatch span across devices, V


@dataclass
class SenseCircuitParams:
    i_desat: float = 1e-3        # measurement-mode bias current, A
    i_desat_vth: float = 2e-3    # threshold-mode bias current, A
    r_s: float = 1000.0          # series resistor, ohm
    r_a1: float = 10e3           # divider, ohm (matched pair)
    r_a2: float = 10e3
    e_d: float = 1.0e-3          # blocking-diode mismatch, V
    v_d_hv: float = 0.7          # nominal drop per blocking diode, V
    rc_filter_tau: float = 1e-6  # amplifier output RC, s
    shift_gain: float = 1.0      # level-shift stage before the ADC
    shift_offset: float = 0.0
    adc_bits: int = 12
    adc_fullscale: float = 5.0
    noise_sigma: float = 2e-3    # additive output noise, V (seeded)
    vth_blanking: float = 2e-3   # settle time before the reading is taken, s
    vth_timeout: float = 0.2     # gate-fault detection horizon, s

    def __post_init__(self):
        if self.r_a1 <= 0 or self.r_a2 <= 0:
            raise ValueError("divider resistors must be positive")
        if not 8 <= self.adc_bits <= 16:
            raise ValueError("adc_bits out of range")


@dataclass
class DesatConfig:
    threshold: float = 9.0   # DESAT pin trip level, V
    blanking: float = 2e-6   # continuous exceedance required, s
    compensated: bool = False

    def __post_init__(self):
        if self.threshold <= 0 or self.blanking <= 0:
            raise ValueError("threshold and blanking must be positive")


@dataclass
class SenseReading:
    valid: bool
    v_op1: float
    adc_code: int

    def v_decoded(self, p: SenseCircuitParams) -> float:
        """ADC code mapped back through the level shifter."""
        span = 2 ** p.adc_bits - 1
        v_shift = self.adc_code / span * p.adc_fullscale
        return (v_shift - p.shift_offset) / p.shift_gain


def quantize(p: SenseCircuitParams, v: float) -> int:
    span = 2 ** p.adc_bits - 1
    v_shift = p.shift_gain * v + p.shift_offset
    code = round(v_shift / p.adc_fullscale * span)
    return min(span, max(0, code))


class SenseChannel:
    """One measurement circuit instance: parameters, RC state, noise stream."""

    def __init__(self, params: SenseCircuitParams,
                 rng: Optional[np.random.Generator] = None,
                 draw_e_d: bool = False):
        self.params = params
        self.rng = rng
        self._v_filt = 0.0
        if draw_e_d:
            if rng is None:
                raise ValueError("drawing e_d requires an rng")
            self.params = replace(params,
                                  e_d=float(rng.uniform(*E_D_RANGE)))

    def _noise(self) -> float:
        if self.rng is None or self.params.noise_sigma <= 0:
            return 0.0
        return float(self.rng.normal(0.0, self.params.noise_sigma))

    def reset_filter(self, v: float = 0.0):
        self._v_filt = v


def sense_vds(ch: SenseChannel, v_ds_true: float, sw_on: bool, dt: float
              ) -> SenseReading:
    """On-state drain-source measurement through the DESAT diodes.

    With the switch off the blocking diodes are reverse biased and no reading
    exists. With the switch on, the amplifier output tracks v_ds + e_d
    through the output RC; the ADC sees the level-shifted value.
    """
    p = ch.params
    if not sw_on:
        return SenseReading(valid=False, v_op1=float("nan"), adc_code=0)
    v_in = v_ds_true + p.e_d
    if p.rc_filter_tau <= 0:
        ch._v_filt = v_in
    else:
        alpha = 1.0 - math.exp(-dt / p.rc_filter_tau)
        ch._v_filt += alpha * (v_in - ch._v_filt)
    v_op1 = ch._v_filt + ch._noise()
    return SenseReading(valid=True, v_op1=v_op1, adc_code=quantize(p, v_op1))


def sense_vsd(ch: SenseChannel, dev: DeviceState, i_reverse: float, t_j: float,
              v_gs: Optional[float] = None) -> float:
    """Body-diode voltage magnitude seen through the same sense path.

    i_reverse is the reverse-current magnitude (positive). The channel must
    be held at the negative off level so the PiN diode carries the full
    current; a positive gate shunts the diode and violates the contract.
    """
    if v_gs is None:
        v_gs = dev.params.gate_off_v
    if i_reverse <= 0:
        raise NotThirdQuadrant("requires a positive reverse-current magnitude")
    if v_gs > dev_mod.v_th(dev, t_j):
        raise NotThirdQuadrant("gate must be at the negative off level")
    return dev_mod.v_sd(dev, i_reverse, t_j) + ch.params.e_d + ch._noise()


def measure_vth(dev: DeviceState, t_ambient: float, p: SenseCircuitParams,
                rng: Optional[np.random.Generator] = None,
                ambient_tol: float = 1.5) -> float:
    """Two-mode threshold measurement at the elevated bias current.

    Mode 1 charges the gate capacitance with the bias source; mode 2 begins
    when the diode-connected channel sinks the full bias current. After the
    blanking time the steady gate voltage is returned. Requires the converter
    idle with the device settled at ambient so no junction-temperature
    compensation is needed.
    """
    if abs(dev.t_j - t_ambient) > ambient_tol:
        raise NotAtAmbient(
            f"device at {dev.t_j:.1f} degC, ambient {t_ambient:.1f} degC")
    prm = dev.params
    i_src = p.i_desat_vth
    v_th_true = dev_mod.v_th(dev, t_ambient)
    v_rail = prm.gate_on_v + 5.0  # charge source headroom above the drive level

    # Mode 1 is a pure constant-current ramp while the channel is cut off
    # (the square-law current is identically zero below threshold); jump it.
    v = 0.0
    t = 0.0
    if v_th_true > 0:
        t = prm.c_gs * v_th_true / i_src
        v = v_th_true
    if v_th_true > v_rail or t > p.vth_timeout:
        raise VthMeasureTimeout("channel never conducted the bias current")

    if prm.k_sat <= 0:
        raise VthMeasureTimeout("channel never conducted the bias current")
    # settle-region time constant: c_gs / (k_sat * overdrive at balance)
    tau_settle = prm.c_gs / math.sqrt(2.0 * i_src * prm.k_sat)
    dt = tau_settle / 4.0
    while True:
        i_ch = 0.5 * prm.k_sat * max(v - v_th_true, 0.0) ** 2
        if i_ch >= i_src * (1.0 - 1e-9):
            break
        v += (i_src - i_ch) / prm.c_gs * dt
        t += dt
        if v > v_rail or t > p.vth_timeout:
            raise VthMeasureTimeout("channel never conducted the bias current")
    t += p.vth_blanking
    noise = float(rng.normal(0.0, p.noise_sigma)) if rng is not None and p.noise_sigma > 0 else 0.0
    return v + noise


def desat_voltage(p: SenseCircuitParams, v_ds: float) -> float:
    """DESAT pin voltage while the switch is on."""
    return p.i_desat * p.r_s + 2.0 * p.v_d_hv + v_ds


@dataclass
class DesatDecision:
    tripped: bool
    trip_time: Optional[float] = None


def desat_check(cfg: DesatConfig, times: Sequence[float],
                v_desat: Sequence[float]) -> DesatDecision:
    """Blanked comparator over a sampled pin-voltage series.

    Trips at the first instant the pin has stayed above the threshold for at
    least the blanking time; any sub-threshold sample resets the timer.
    """
    run_start = None
    for t, v in zip(times, v_desat):
        if v > cfg.threshold:
            if run_start is None:
                run_start = t
            elif t - run_start >= cfg.blanking:
                return DesatDecision(True, run_start + cfg.blanking)
        else:
            run_start = None
    return DesatDecision(False, None)


def compensate_desat_threshold(cfg: DesatConfig, delta_vth_measured: float,
                               dev: DeviceState, v_gs: Optional[float] = None,
                               margin: float = 1.0) -> DesatConfig:
    """Raise the trip level by the channel-model on-state drop growth.

    The measured threshold shift predicts the extra drop at nominal current,
    i_nominal * k_ch * (1/(ov0 - dvth) - 1/ov0); the new config is flagged
    compensated. Refuses to compensate once the remaining overdrive is below
    the margin.
    """
    p = dev.params
    if v_gs is None:
        v_gs = p.gate_on_v
    ov0 = v_gs - p.v_th0
    if ov0 - delta_vth_measured <= margin:
        raise OverdriveCollapse(
            f"overdrive {ov0 - delta_vth_measured:.2f} V below margin {margin} V")
    rise = p.i_nominal * p.k_ch * (1.0 / (ov0 - delta_vth_measured) - 1.0 / ov0)
    return replace(cfg, threshold=cfg.threshold + rise, compensated=True)


# ---------------------------------------------------------------------------
# Transient-overvoltage clamp sizing
# ---------------------------------------------------------------------------

@dataclass
class MovRating:
    v_steady: float   # continuous voltage rating, V
    v_clamp: float    # clamping voltage, V
    e_rating: float   # single-pulse energy capability, J


@dataclass
class MovBenchParams:
    v_dc: float
    v_module_max: float
    inductance_per_phase: float
    i_peak: float
    c_dc: float = 0.0


@dataclass
class MovVerdict:
    steady_ok: bool
    clamp_ok: bool
    energy_ok: bool
    energy_required: float

    @property
    def passed(self) -> bool:
        return self.steady_ok and self.clamp_ok and self.energy_ok


def mov_check(mov: MovRating, bench: MovBenchParams) -> MovVerdict:
    """Apply the three clamp selection rules against the bench energetics.

    1) continuous rating above the bus voltage, 2) clamping below the module
    maximum, 3) enough energy for the three inductor dumps plus the bus
    capacitor swing up to the clamp level.
    """
    e_req = 3.0 * 0.5 * bench.inductance_per_phase * bench.i_peak ** 2 \
        + 0.5 * bench.c_dc * (mov.v_clamp ** 2 - bench.v_dc ** 2)
    return MovVerdict(
        steady_ok=mov.v_steady > bench.v_dc,
        clamp_ok=mov.v_clamp < bench.v_module_max,
        energy_ok=mov.e_rating >= e_req,
        energy_required=e_req,
    )
