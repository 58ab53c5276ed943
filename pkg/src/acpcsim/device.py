"""Per-switch SiC MOSFET model: conduction in first and third quadrant,
threshold voltage, losses, and cycle-driven degradation trajectories.

On-resistance decomposes into a drift/package term with positive temperature
coefficient (scaled by package aging) and a channel term inversely
proportional to the gate overdrive (shifted by gate-oxide aging):

    R(T, i) = r_drift0 * (1 + delta_pkg) * ((T + 273.15)/(T0 + 273.15))**alpha
              + k_ch / (v_gs - v_th(T))
              + r_i_slope * (i - i_nominal)

Body-diode conduction adds a stacking-fault voltage shift on top of a knee
with current-dependent temperature coefficient.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

KELVIN = 273.15


class ChannelOff(RuntimeError):
    """Gate drive does not exceed the threshold voltage."""


@dataclass
class DeviceParams:
    r_drift0: float               # drift/package resistance at t0, ohm
    k_ch: float                   # channel constant, V*ohm
    v_th0: float                  # threshold voltage at t0, V
    rho_vth: float                # threshold tempco, V/degC (negative)
    v_j0: float                   # body-diode knee at t0, V
    rho_sd_lo: float              # diode tempco near zero current, V/degC
    rho_sd_hi: float              # diode tempco at nominal current, V/degC
    r_diode: float                # diode series resistance, ohm
    e_on0: float                  # turn-on energy at (v_ref, i_ref), J
    e_off0: float                 # turn-off energy at (v_ref, i_ref), J
    v_ref: float                  # switching-energy voltage reference, V
    i_ref: float                  # switching-energy current reference, A
    alpha_drift: float = 1.3      # drift-term temperature exponent
    t0: float = 25.0              # reference temperature, degC
    i_nominal: float = 400.0      # rated/nominal drain current, A
    gate_on_v: float = 15.0
    gate_off_v: float = -4.0
    r_i_slope: float = 0.0        # ohm per ampere away from i_nominal
    k_sat: float = 20.0           # saturation transconductance, A/V^2
    c_gs: float = 10e-9           # gate-source capacitance, F

    def __post_init__(self):
        if self.r_drift0 < 0 or self.k_ch < 0:
            raise ValueError("resistance terms must be nonnegative")
        if self.rho_vth >= 0:
            raise ValueError("rho_vth must be negative")
        if self.gate_on_v <= self.v_th0:
            raise ValueError("gate_on_v must exceed v_th0")


@dataclass
class AgingState:
    """Per-mechanism degradation indices, each monotone over a campaign."""

    delta_pkg: float = 0.0    # fractional drift-resistance increase
    delta_vth: float = 0.0    # threshold shift, V
    delta_vsd: float = 0.0    # body-diode voltage shift, V
    cycles_accumulated: int = 0

    def __post_init__(self):
        if min(self.delta_pkg, self.delta_vth, self.delta_vsd) < 0:
            raise ValueError("aging indices must be nonnegative")


@dataclass
class DeviceState:
    params: DeviceParams
    aging: AgingState = field(default_factory=AgingState)
    t_j: float = 25.0  # owned by the thermal model, mirrored here

    def fresh_copy(self) -> "DeviceState":
        return DeviceState(params=self.params, aging=AgingState(), t_j=self.params.t0)


def v_th(dev: DeviceState, t_j: float):
    """Threshold voltage at the given junction temperature (array-safe)."""
    p = dev.params
    return p.v_th0 + p.rho_vth * (t_j - p.t0) + dev.aging.delta_vth


def r_on(dev: DeviceState, t_j, i_d, v_gs: float):
    """First-quadrant on-resistance. Raises ChannelOff below threshold."""
    p = dev.params
    overdrive = v_gs - v_th(dev, t_j)
    if np.any(np.asarray(overdrive) <= 0.0):
        raise ChannelOff(f"v_gs={v_gs} does not exceed threshold")
    drift = p.r_drift0 * (1.0 + dev.aging.delta_pkg) * \
        ((t_j + KELVIN) / (p.t0 + KELVIN)) ** p.alpha_drift
    return drift + p.k_ch / overdrive + p.r_i_slope * (i_d - p.i_nominal)


def v_sd(dev: DeviceState, i, t_j):
    """Body-diode forward voltage at reverse current magnitude i > 0.

    The temperature coefficient interpolates from the low-current to the
    high-current value as the current approaches the nominal rating.
    """
    p = dev.params
    if np.any(np.asarray(i) <= 0.0):
        raise ValueError("v_sd requires a positive current magnitude")
    w = np.clip(i / p.i_nominal, 0.0, 1.0)
    rho = p.rho_sd_lo + (p.rho_sd_hi - p.rho_sd_lo) * w
    return p.v_j0 + rho * (t_j - p.t0) + p.r_diode * i + dev.aging.delta_vsd


def diode_knee(dev: DeviceState, t_j):
    """Body-diode turn-on voltage (zero-current limit of v_sd)."""
    p = dev.params
    return p.v_j0 + p.rho_sd_lo * (t_j - p.t0) + dev.aging.delta_vsd


def conduction_voltage(dev: DeviceState, i: float, t_j: float, v_gs: float) -> float:
    """Signed drain-source voltage while conducting current i (signed).

    First quadrant (i > 0, channel on): ohmic drop through r_on. Third
    quadrant with the channel off: body diode only. Third quadrant with the
    channel on: parallel channel/diode conduction, channel-dominated below
    the diode knee.
    """
    if i == 0.0:
        return 0.0
    channel_on = v_gs > v_th(dev, t_j)
    if i > 0.0:
        if not channel_on:
            raise ChannelOff("first-quadrant conduction requires the channel on")
        return i * r_on(dev, t_j, i, v_gs)
    mag = -i
    if not channel_on:
        return -v_sd(dev, mag, t_j)
    r_ch = r_on(dev, t_j, mag, v_gs)
    v_lin = mag * r_ch
    knee = diode_knee(dev, t_j)
    if v_lin <= knee:
        return -v_lin
    p = dev.params
    v = (mag + knee / p.r_diode) / (1.0 / r_ch + 1.0 / p.r_diode)
    return -v


def conduction_voltage_array(dev: DeviceState, i: np.ndarray, t_j, v_gs: float
                             ) -> np.ndarray:
    """Vectorized twin of conduction_voltage with the channel held on.

    Used by the bench loop where the bridges run synchronous rectification;
    matches the scalar function element-wise (property-tested).
    """
    p = dev.params
    i = np.asarray(i, dtype=float)
    mag = np.abs(i)
    safe = np.where(mag > 0.0, mag, 1.0)
    r_ch = r_on(dev, t_j, safe, v_gs)
    v_lin = safe * r_ch
    knee = diode_knee(dev, t_j)
    v_par = (safe + knee / p.r_diode) / (1.0 / r_ch + 1.0 / p.r_diode)
    v_mag = np.where(v_lin <= knee, v_lin, v_par)
    v_mag = np.where(i >= 0.0, safe * r_ch, v_mag)
    return np.where(mag > 0.0, np.sign(i) * v_mag, 0.0)


def losses(dev: DeviceState, i: float, t_j: float, v_dc: float,
           switching_events_per_s: float, conduction_duty: float,
           v_gs: Optional[float] = None) -> float:
    """Average dissipation in watts for one operating point.

    Conduction: i^2 * r_on * duty in the first quadrant, v_sd * |i| * duty in
    the third. Switching: bilinear scaling of the reference energies with bus
    voltage and current.
    """
    p = dev.params
    if v_gs is None:
        v_gs = p.gate_on_v
    if i > 0.0:
        p_cond = i * i * r_on(dev, t_j, i, v_gs) * conduction_duty
    elif i < 0.0:
        p_cond = v_sd(dev, -i, t_j) * (-i) * conduction_duty
    else:
        p_cond = 0.0
    p_sw = 0.0
    if i != 0.0 and switching_events_per_s > 0.0:
        p_sw = switching_events_per_s * (p.e_on0 + p.e_off0) \
            * (v_dc / p.v_ref) * (abs(i) / p.i_ref)
    return p_cond + p_sw


# ---------------------------------------------------------------------------
# Aging trajectories
# ---------------------------------------------------------------------------

Breakpoints = Sequence[tuple[float, float]]


@dataclass
class AgingTrajectory:
    """Piecewise-linear degradation schedules keyed by cycle count.

    Each mechanism is a breakpoint list [(cycle, value), ...] with
    nondecreasing cycles and values. A repeated cycle encodes a step event;
    beyond the last breakpoint the value holds. An empty list means no aging.
    """

    delta_pkg: Breakpoints = ()
    delta_vth: Breakpoints = ()
    delta_vsd: Breakpoints = ()

    def __post_init__(self):
        for name in ("delta_pkg", "delta_vth", "delta_vsd"):
            pts = list(getattr(self, name))
            for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
                if x1 < x0:
                    raise ValueError(f"{name}: breakpoint cycles must be nondecreasing")
                if y1 < y0:
                    raise ValueError(f"{name}: values must be nondecreasing")
            if pts and pts[0][1] < 0:
                raise ValueError(f"{name}: values must be nonnegative")
            setattr(self, name, tuple((float(x), float(y)) for x, y in pts))


def _piecewise(points: Breakpoints, x: float) -> float:
    if not points:
        return 0.0
    xs = [p[0] for p in points]
    k = bisect_right(xs, x)
    if k == 0:
        return points[0][1]
    if k == len(points):
        return points[-1][1]
    x0, y0 = points[k - 1]
    x1, y1 = points[k]
    if x1 == x0:
        return y1
    return y0 + (y1 - y0) * (x - x0) / (x1 - x0)


def apply_aging(state: AgingState, trajectory: AgingTrajectory,
                cycle_count: int) -> AgingState:
    """Advance the aging indices to the given cycle count (monotone)."""
    if cycle_count < state.cycles_accumulated:
        raise ValueError("cycle_count must not run backwards")
    return AgingState(
        delta_pkg=max(state.delta_pkg, _piecewise(trajectory.delta_pkg, cycle_count)),
        delta_vth=max(state.delta_vth, _piecewise(trajectory.delta_vth, cycle_count)),
        delta_vsd=max(state.delta_vsd, _piecewise(trajectory.delta_vsd, cycle_count)),
        cycles_accumulated=cycle_count,
    )


# ---------------------------------------------------------------------------
# Calibration helpers and stock profiles
# ---------------------------------------------------------------------------

def calibrated_params(*, r_total_t0: float, channel_fraction: float,
                      v_th0: float, rho_vth: float, v_gs_on: float,
                      alpha_drift: Optional[float] = None,
                      sensitivity_t0: Optional[float] = None,
                      t0: float = 25.0, **kwargs) -> DeviceParams:
    """Build device parameters anchored at a total resistance at t0.

    channel_fraction sets the share of r_total_t0 carried by the channel
    term. Give either alpha_drift directly or a net dR/dT target at t0
    (sensitivity_t0), from which the drift exponent is solved.
    """
    if not 0.0 < channel_fraction < 1.0:
        raise ValueError("channel_fraction must lie in (0, 1)")
    if (alpha_drift is None) == (sensitivity_t0 is None):
        raise ValueError("give exactly one of alpha_drift or sensitivity_t0")
    overdrive0 = v_gs_on - v_th0
    if overdrive0 <= 0:
        raise ValueError("gate drive must exceed the threshold")
    k_ch = channel_fraction * r_total_t0 * overdrive0
    r_drift0 = (1.0 - channel_fraction) * r_total_t0
    if alpha_drift is None:
        channel_slope = k_ch * rho_vth / overdrive0 ** 2  # negative
        alpha_drift = (sensitivity_t0 - channel_slope) * (t0 + KELVIN) / r_drift0
        if alpha_drift <= 0:
            raise ValueError("requested sensitivity is unreachable with this split")
    return DeviceParams(r_drift0=r_drift0, k_ch=k_ch, v_th0=v_th0,
                        rho_vth=rho_vth, alpha_drift=alpha_drift, t0=t0,
                        gate_on_v=v_gs_on, **kwargs)


def module_400a() -> DeviceParams:
    """Default 400 A half-bridge module profile.

    Anchored so the fresh on-state drop at nominal current and 25 degC is
    1.58 V (3.95 mohm at 400 A) with a 15 V gate.
    """
    return calibrated_params(
        r_total_t0=3.95e-3, channel_fraction=0.45,
        v_th0=2.7, rho_vth=-6.4e-3, v_gs_on=15.0, alpha_drift=1.3,
        v_j0=2.8, rho_sd_lo=-2.65e-3, rho_sd_hi=-4.8e-3, r_diode=4.0e-3,
        e_on0=2.5e-3, e_off0=2.0e-3, v_ref=800.0, i_ref=400.0,
        i_nominal=400.0, r_i_slope=5e-7, gate_off_v=-4.0,
    )


def vendor_a() -> DeviceParams:
    """Discrete-device profile with a 2.4 mohm/degC net sensitivity at 25 degC."""
    return calibrated_params(
        r_total_t0=250e-3, channel_fraction=0.3,
        v_th0=2.7, rho_vth=-6.4e-3, v_gs_on=15.0, sensitivity_t0=2.4e-3,
        v_j0=3.0, rho_sd_lo=-2.65e-3, rho_sd_hi=-4.8e-3, r_diode=40e-3,
        e_on0=150e-6, e_off0=100e-6, v_ref=800.0, i_ref=20.0,
        i_nominal=20.0, gate_off_v=-4.0,
    )


def vendor_b() -> DeviceParams:
    """Discrete-device profile with a 1.6 mohm/degC net sensitivity at 25 degC."""
    return calibrated_params(
        r_total_t0=160e-3, channel_fraction=0.3,
        v_th0=2.9, rho_vth=-3.1e-3, v_gs_on=15.0, sensitivity_t0=1.6e-3,
        v_j0=3.0, rho_sd_lo=-2.65e-3, rho_sd_hi=-4.8e-3, r_diode=40e-3,
        e_on0=150e-6, e_off0=100e-6, v_ref=800.0, i_ref=20.0,
        i_nominal=20.0, gate_off_v=-4.0,
    )


PROFILES = {"module_400a": module_400a, "vendor_a": vendor_a, "vendor_b": vendor_b}


def delta_vth_for_vds_shift(params: DeviceParams, dv_ds: float,
                            i: Optional[float] = None,
                            v_gs: Optional[float] = None) -> float:
    """Threshold shift that raises the on-state drop at current i by dv_ds.

    Inverts the channel law in closed form:
      delta = ov^2 * dR / (k_ch + ov * dR),  dR = dv_ds / i.
    """
    i = params.i_nominal if i is None else i
    v_gs = params.gate_on_v if v_gs is None else v_gs
    ov = v_gs - params.v_th0
    d_r = dv_ds / i
    if params.k_ch <= 0:
        raise ValueError("profile has no channel term to shift")
    return ov * ov * d_r / (params.k_ch + ov * d_r)


def gate_oxide_trajectory(params: DeviceParams, cycles_eol: float,
                          v_ds_fresh: float = 1.58, v_ds_aged: float = 2.6
                          ) -> AgingTrajectory:
    """Default oxide schedule: gradual drift with a late knee, calibrated so
    the on-state drop at nominal current moves from v_ds_fresh to v_ds_aged
    at end of life."""
    d_eol = delta_vth_for_vds_shift(params, v_ds_aged - v_ds_fresh)
    return AgingTrajectory(delta_vth=(
        (0.0, 0.0),
        (0.7 * cycles_eol, 0.3 * d_eol),
        (cycles_eol, d_eol),
    ))


def vgs_at_channel_current(dev: DeviceState, i: float, t_j: float) -> float:
    """Gate voltage sustaining drain current i in a diode-connected device.

    Square-law saturation: i = k_sat/2 * (v_gs - v_th)^2.
    """
    if i <= 0:
        raise ValueError("current must be positive")
    return v_th(dev, t_j) + math.sqrt(2.0 * i / dev.params.k_sat)
