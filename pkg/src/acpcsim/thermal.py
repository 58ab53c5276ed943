"""Per-device Foster thermal network from junction to coolant/ambient, an
on/off liquid-cooling boundary with finite transfer capacity, and a lagged
case-temperature sensor.

Each Foster stage is advanced with the exact single-pole update
T <- T*exp(-dt/tau) + P*R*(1 - exp(-dt/tau)), which is unconditionally
stable and makes the per-stage energy balance analytic. The last stage is
the case-to-reference boundary; its resistance is swapped by the cooling
state when the pump toggles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class StepTooLarge(ValueError):
    """dt too coarse relative to the fastest stage time constant."""


@dataclass
class FosterStage:
    r_th: float  # K/W
    c_th: float  # J/K

    def __post_init__(self):
        if self.r_th <= 0 or self.c_th <= 0:
            raise ValueError("stage r_th and c_th must be positive")

    @property
    def tau(self) -> float:
        return self.r_th * self.c_th


@dataclass
class FosterNetwork:
    """Series of parallel RC pairs; stage_temps are kelvins above reference.

    r_th_aging_factor scales the junction-side stage resistance (die-attach
    degradation raises the junction-to-case drop without changing capacity).
    """

    stages: list[FosterStage]
    stage_temps: np.ndarray = None
    r_th_aging_factor: float = 1.0

    def __post_init__(self):
        if not self.stages:
            raise ValueError("need at least one stage")
        if self.r_th_aging_factor < 1.0:
            raise ValueError("aging factor must be >= 1")
        if self.stage_temps is None:
            self.stage_temps = np.zeros(len(self.stages))
        else:
            self.stage_temps = np.asarray(self.stage_temps, dtype=float)
            if self.stage_temps.shape != (len(self.stages),):
                raise ValueError("stage_temps length must match stages")

    def effective_r(self) -> np.ndarray:
        r = np.array([s.r_th for s in self.stages])
        r[0] *= self.r_th_aging_factor
        return r

    def total_r_th(self) -> float:
        return float(self.effective_r().sum())


def foster_step(net: FosterNetwork, p_loss: float, t_ref: float, dt: float
                ) -> tuple[float, float]:
    """Advance all stages one step; returns (t_j, t_case) in degC.

    t_j adds every stage temperature to the reference; t_case adds only the
    boundary (last) stage.
    """
    if dt <= 0:
        raise StepTooLarge("dt must be positive")
    r = net.effective_r()
    c = np.array([s.c_th for s in net.stages])
    tau = r * c
    if dt >= tau.min() / 4.0:
        raise StepTooLarge(
            f"dt={dt} too coarse for fastest stage tau={tau.min():.3g}")
    a = np.exp(-dt / tau)
    net.stage_temps = net.stage_temps * a + p_loss * r * (1.0 - a)
    t_j = t_ref + float(net.stage_temps.sum())
    t_case = t_ref + float(net.stage_temps[-1])
    return t_j, t_case


@dataclass
class CoolingState:
    """On/off liquid-cooling boundary with a finite-capacity reservoir.

    While the pump runs, heat delivered beyond max_heat accumulates in the
    coolant loop, so the effective reference temperature ramps and the
    overload is flagged (latching).
    """

    coolant_temp: float = 25.0
    ambient_temp: float = 25.0
    r_boundary_on: float = 0.4    # K/W, case to coolant with the pump running
    r_boundary_off: float = 2.0   # K/W, case to still air with the pump off
    max_heat: float = 1500.0      # W per cooling plate
    reservoir_c: float = 500.0    # J/K effective coolant-loop capacity
    pump_on: bool = True
    overload_rise: float = 0.0
    capacity_exceeded: bool = False

    def __post_init__(self):
        if not self.r_boundary_on < self.r_boundary_off:
            raise ValueError("pump-on boundary must be the lower resistance")


def cooling_step(state: CoolingState, pump_on: bool) -> tuple[float, float]:
    """Apply the pump command; returns the (t_ref, r_boundary) pair."""
    state.pump_on = pump_on
    if pump_on:
        return state.coolant_temp + state.overload_rise, state.r_boundary_on
    return state.ambient_temp, state.r_boundary_off


def cooling_absorb(state: CoolingState, q_watts: float, dt: float) -> None:
    """Track plate loading. Heat beyond the rated transfer warms the coolant
    loop; slack below the rating lets it recover toward the supply
    temperature, so only a sustained overload ramps without bound. The
    overload flag latches."""
    if not state.pump_on:
        return
    excess = q_watts - state.max_heat
    if excess > 0:
        state.overload_rise += excess * dt / state.reservoir_c
        state.capacity_exceeded = True
    elif state.overload_rise > 0.0:
        state.overload_rise = max(
            0.0, state.overload_rise + excess * dt / state.reservoir_c)


@dataclass
class NtcModel:
    bias: float = 0.0          # degC, constant reading offset
    time_constant: float = 0.1  # s, first-order sensor lag

    def __post_init__(self):
        if self.time_constant < 0:
            raise ValueError("time_constant must be nonnegative")


@dataclass
class NtcSensor:
    model: NtcModel
    reading: float = 25.0

    def read(self, t_case_true: float, dt: float) -> float:
        target = t_case_true + self.model.bias
        if self.model.time_constant <= 0:
            self.reading = target
        else:
            alpha = 1.0 - math.exp(-dt / self.model.time_constant)
            self.reading += alpha * (target - self.reading)
        return self.reading


def ntc_read(sensor: NtcSensor, t_case_true: float, dt: float) -> float:
    return sensor.read(t_case_true, dt)


def default_network(total_r_jc: float = 0.09, boundary_r: float = 0.4,
                    boundary_c: float = 12.5) -> FosterNetwork:
    """Stock four-stage network: junction-side stages with taus of
    1 ms / 30 ms / 0.5 s plus the case boundary stage (tau 5 s at the stock
    values). The split is synthetic (no vendor transient data for these
    modules); the total junction-to-reference resistance is sized so rated
    losses give roughly a 100 degC rise. Resistances scale with total_r_jc."""
    shares = (0.22, 0.45, 0.33)
    taus = (1e-3, 30e-3, 0.5)
    stages = [FosterStage(r_th=s * total_r_jc, c_th=t / (s * total_r_jc))
              for s, t in zip(shares, taus)]
    stages.append(FosterStage(r_th=boundary_r, c_th=boundary_c))
    return FosterNetwork(stages=stages)


class ThermalBank:
    """Vectorized Foster stepping for a bank of identical devices.

    Same exponential update as foster_step, evaluated across (n_devices,
    n_stages) in one shot. The exact update holds for any dt under
    piecewise-constant loss, so the public step-size guard is not applied
    here; envelope-mode campaigns rely on that.
    """

    def __init__(self, n: int, network: FosterNetwork):
        self.n = n
        self.base_r = np.array([s.r_th for s in network.stages])
        self.c = np.array([s.c_th for s in network.stages])
        self.temps = np.zeros((n, len(network.stages)))
        self.aging_factor = np.ones(n)

    def step(self, p_loss: np.ndarray, t_ref: float, r_boundary: float,
             dt: float) -> tuple[np.ndarray, np.ndarray]:
        r = np.tile(self.base_r, (self.n, 1))
        r[:, 0] *= self.aging_factor
        r[:, -1] = r_boundary
        tau = r * self.c
        a = np.exp(-dt / tau)
        self.temps = self.temps * a + p_loss[:, None] * r * (1.0 - a)
        t_j = t_ref + self.temps.sum(axis=1)
        t_case = t_ref + self.temps[:, -1]
        return t_j, t_case
