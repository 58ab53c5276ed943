"""Thermal-cycle orchestration: the dual-inverter bench loop, the three
power-cycling techniques, start-of-test measurements with lookup-table and
protection-threshold recalibration, per-cycle precursor records, warning
evaluation, and the energy-circulation audit.

Twelve switches are simulated (two bridges, three legs each, upper/lower).
The test bridge runs open loop, the load bridge closes the current loops,
and per-phase RL links circulate the power, so the supply only covers
losses. Three stepping engines share the same device/thermal/sensing
models: switched (sub-PWM pole voltages), averaged (one step per PWM
period), and envelope (one step per fundamental period with the
quasi-static electrical solution) for multi-thousand-cycle campaigns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import device as dev_mod
from . import sampler as smp
from . import sense as sns
from . import thermal as th
from .core import (SWITCHED_SUBSTEPS, TWO_PI, BenchConfig, Fidelity,
                   Technique, validate_scenario, wrap_angle)
from .device import AgingTrajectory, DeviceParams, DeviceState, KELVIN, _piecewise
from .electrical import (PlantState, PlantStepResult, control_step,
                         dq_phase_deg, inverse_park, make_controller, park,
                         plant_step, svpwm_duties)

_SQRT3 = math.sqrt(3.0)

N_DEVICES = 12
DEVICE_IDS = tuple(
    f"{inv}_{ph}_{pos}"
    for inv in ("test", "load") for ph in ("a", "b", "c") for pos in ("hi", "lo")
)
T_J_ENVELOPE_MAX = 200.0  # degC simulation envelope

PACKAGE_WARNING = "package"
GATE_OXIDE_WARNING = "gate_oxide"
BODY_DIODE_WARNING = "body_diode"


class ProtectionTrip(RuntimeError):
    def __init__(self, device_id: str, t: float, kind: str = "desat"):
        self.device_id = device_id
        self.t = t
        self.kind = kind
        super().__init__(f"{kind} trip on {device_id} at t={t:.6f} s")


class ThermalRunaway(RuntimeError):
    pass


@dataclass
class WarningPolicy:
    r_on_rel_threshold: float = 0.05   # relative on-resistance drift
    v_th_shift_threshold: float = 0.5  # V
    v_sd_shift_threshold: float = 0.1  # V

    def __post_init__(self):
        if min(self.r_on_rel_threshold, self.v_th_shift_threshold,
               self.v_sd_shift_threshold) <= 0:
            raise ValueError("warning thresholds must be positive")


@dataclass
class CycleRecord:
    cycle_index: int
    t_start: float
    r_on_est: np.ndarray   # ohm, last heat-phase estimate per device (nan if none)
    tj_max: np.ndarray     # degC, true, heat phase
    tj_min: np.ndarray     # degC, true, cool phase
    v_th: np.ndarray       # V, start-up measurement (nan when the cycle had none)
    v_sd: np.ndarray       # V, end-of-cool body-diode probe
    t_on_actual: float
    t_off_actual: float
    warnings: tuple = ()

    @property
    def delta_tj(self) -> np.ndarray:
        return self.tj_max - self.tj_min


class WarningTracker:
    """Incremental form of evaluate_warnings: latching flags against the
    first usable baseline of each precursor, O(1) per new record."""

    def __init__(self, policy: WarningPolicy):
        self.policy = policy
        self.flags: set = set()
        self._base = {"r_on": None, "v_th": None, "v_sd": None}

    @staticmethod
    def _exceeds(row, base, limit, relative):
        m = np.isfinite(row) & np.isfinite(base)
        if not m.any():
            return False
        delta = (row[m] - base[m]) / base[m] if relative else row[m] - base[m]
        return float(np.max(delta)) > limit

    def update(self, rec: "CycleRecord") -> set:
        p = self.policy
        for name, row in (("r_on", rec.r_on_est), ("v_th", rec.v_th),
                          ("v_sd", rec.v_sd)):
            if self._base[name] is None and np.isfinite(row).any():
                self._base[name] = row
        if self._base["r_on"] is not None and self._exceeds(
                rec.r_on_est, self._base["r_on"], p.r_on_rel_threshold, True):
            self.flags.add(PACKAGE_WARNING)
        if self._base["v_th"] is not None and self._exceeds(
                rec.v_th, self._base["v_th"], p.v_th_shift_threshold, False):
            self.flags.add(GATE_OXIDE_WARNING)
        if self._base["v_sd"] is not None and self._exceeds(
                rec.v_sd, self._base["v_sd"], p.v_sd_shift_threshold, False):
            self.flags.add(BODY_DIODE_WARNING)
        return self.flags


def evaluate_warnings(history: list, policy: WarningPolicy) -> set:
    """Latching precursor flags versus the first usable baseline: relative
    on-resistance drift, threshold shift, and body-diode shift."""
    if not history:
        raise ValueError("need at least one record")
    tracker = WarningTracker(policy)
    for rec in history:
        tracker.update(rec)
    return tracker.flags


# ---------------------------------------------------------------------------
# Energy audit
# ---------------------------------------------------------------------------

@dataclass
class EnergyTally:
    e_supply: float = 0.0   # DC-bus energy drawn, J
    e_cond: float = 0.0     # conduction losses, J
    e_sw: float = 0.0       # switching losses, J
    e_link: float = 0.0     # link-resistance losses, J
    e_l_start: float = 0.0  # inductor stored energy at the window edges, J
    e_l_end: float = 0.0
    duration: float = 0.0
    sum_v2: float = 0.0     # test-bridge phase-voltage squares, per sample
    sum_i2: float = 0.0
    samples: int = 0


@dataclass
class EnergyAudit:
    p_supply: float
    p_loss_total: float
    residual_frac: float
    apparent_va: float


def energy_audit(tally: EnergyTally) -> EnergyAudit:
    """Balance the DC-bus energy against modeled losses plus the change in
    stored link energy over the window."""
    if tally.duration <= 0:
        raise ValueError("empty tally")
    e_loss = tally.e_cond + tally.e_sw + tally.e_link
    d_stored = tally.e_l_end - tally.e_l_start
    residual = abs(tally.e_supply - e_loss - d_stored) / max(e_loss, 1e-12)
    v_rms = math.sqrt(tally.sum_v2 / max(tally.samples, 1) / 3.0)
    i_rms = math.sqrt(tally.sum_i2 / max(tally.samples, 1) / 3.0)
    return EnergyAudit(
        p_supply=tally.e_supply / tally.duration,
        p_loss_total=e_loss / tally.duration,
        residual_frac=residual,
        apparent_va=3.0 * v_rms * i_rms,
    )


# ---------------------------------------------------------------------------
# Vectorized device bank
# ---------------------------------------------------------------------------

class DeviceBank:
    """All twelve switches evaluated together with per-device aging state.

    Formulas mirror the scalar device operations exactly (property-tested);
    temperatures may be passed per device, per device-and-sample, or shared.
    """

    def __init__(self, params: DeviceParams, ambient: float):
        self.params = params
        self.n = N_DEVICES
        self.delta_pkg = np.zeros(self.n)
        self.delta_vth = np.zeros(self.n)
        self.delta_vsd = np.zeros(self.n)
        self.t_j = np.full(self.n, ambient)
        self.r_th_factor = np.ones(self.n)
        self.shorted = np.zeros(self.n, dtype=bool)
        self.desat_fault_v = 40.0  # desaturated drop used for injected shorts, V
        self.aging_version = 0

    def device_state(self, k: int) -> DeviceState:
        return DeviceState(
            params=self.params,
            aging=dev_mod.AgingState(delta_pkg=float(self.delta_pkg[k]),
                                     delta_vth=float(self.delta_vth[k]),
                                     delta_vsd=float(self.delta_vsd[k])),
            t_j=float(self.t_j[k]),
        )

    @staticmethod
    def _shaped(per_device: np.ndarray, t_j) -> np.ndarray:
        # align the per-device vector with a (n,) or (n, m) temperature array
        if np.ndim(t_j) > 1:
            return per_device[:, None]
        return per_device

    def conduction(self, i, t_j=None):
        """Signed conduction drops with the channel held on (synchronous
        rectification across both bridges)."""
        p = self.params
        t = self.t_j if t_j is None else t_j
        i = np.asarray(i, dtype=float)
        d_vth = self._shaped(self.delta_vth, t)
        d_pkg = self._shaped(self.delta_pkg, t)
        d_vsd = self._shaped(self.delta_vsd, t)
        ov = p.gate_on_v - (p.v_th0 + p.rho_vth * (t - p.t0) + d_vth)
        drift = p.r_drift0 * (1.0 + d_pkg) * ((t + KELVIN) / (p.t0 + KELVIN)) ** p.alpha_drift
        mag = np.abs(i)
        safe = np.where(mag > 0.0, mag, 1.0)
        r_ch = drift + p.k_ch / ov + p.r_i_slope * (safe - p.i_nominal)
        knee = p.v_j0 + p.rho_sd_lo * (t - p.t0) + d_vsd
        v_lin = safe * r_ch
        v_par = (safe + knee / p.r_diode) / (1.0 / r_ch + 1.0 / p.r_diode)
        v_mag = np.where(i >= 0.0, v_lin, np.where(v_lin <= knee, v_lin, v_par))
        v = np.where(mag > 0.0, np.sign(i) * v_mag, 0.0)
        if self.shorted.any():
            sh = self._shaped(self.shorted.astype(float), t) > 0
            v = np.where(sh, self.desat_fault_v, v)
        return v

    def r_on_single(self, k: int, i, t_j: float):
        """First-quadrant on-resistance of device k (i may be an array)."""
        p = self.params
        ov = p.gate_on_v - (p.v_th0 + p.rho_vth * (t_j - p.t0) + self.delta_vth[k])
        drift = p.r_drift0 * (1.0 + self.delta_pkg[k]) \
            * ((t_j + KELVIN) / (p.t0 + KELVIN)) ** p.alpha_drift
        return drift + p.k_ch / ov + p.r_i_slope * (i - p.i_nominal)

    def apply_trajectories(self, trajectory: AgingTrajectory, r_th_points,
                           cycle: int, device_mask: np.ndarray):
        pkg = _piecewise(trajectory.delta_pkg, cycle)
        vth = _piecewise(trajectory.delta_vth, cycle)
        vsd = _piecewise(trajectory.delta_vsd, cycle)
        rth = 1.0 + _piecewise(tuple(r_th_points), cycle)
        m = device_mask
        self.delta_pkg[m] = np.maximum(self.delta_pkg[m], pkg)
        self.delta_vth[m] = np.maximum(self.delta_vth[m], vth)
        self.delta_vsd[m] = np.maximum(self.delta_vsd[m], vsd)
        self.r_th_factor[m] = np.maximum(self.r_th_factor[m], rth)
        self.aging_version += 1


@dataclass
class _Reading:
    """Minimal stand-in for sense.SenseReading on the capture hot path."""
    valid: bool
    v_op1: float


class _CrossingPredictor:
    """Half-step lookahead on a sampled monotone signal.

    Thresholding a discretely sampled ramp trips on average half a sample
    late; extrapolating half a step ahead centers the crossing error.
    """

    def __init__(self):
        self.prev = None

    def crossed_up(self, value: float, limit: float) -> bool:
        slope = 0.0 if self.prev is None else value - self.prev
        self.prev = value
        return value + 0.5 * max(slope, 0.0) >= limit

    def crossed_down(self, value: float, limit: float) -> bool:
        slope = 0.0 if self.prev is None else value - self.prev
        self.prev = value
        return value + 0.5 * min(slope, 0.0) <= limit


# ---------------------------------------------------------------------------
# Bench settings
# ---------------------------------------------------------------------------

@dataclass
class BenchSettings:
    cfg: BenchConfig
    device_params: DeviceParams = field(default_factory=dev_mod.module_400a)
    sense_params: sns.SenseCircuitParams = field(default_factory=sns.SenseCircuitParams)
    desat: sns.DesatConfig = field(default_factory=sns.DesatConfig)
    desat_calibrated: bool = False   # derive the trip level from the fresh drop
    desat_margin_v: float = 0.5      # headroom above the fresh on-state drop
    network: th.FosterNetwork = field(default_factory=th.default_network)
    cooling_test: th.CoolingState = field(default_factory=th.CoolingState)
    cooling_load: th.CoolingState = field(default_factory=th.CoolingState)
    ntc: th.NtcModel = field(default_factory=th.NtcModel)
    sampler_n: int = 300
    sampler_window: float = math.radians(10.0)
    budget_per_cycle: int = 5
    fir_taps: np.ndarray = field(default_factory=smp.default_fir_taps)
    i_floor: float = 20.0
    lut_t_axis: tuple = tuple(range(25, 176, 25))
    lut_i_axis: tuple = tuple(range(50, 401, 50))
    trajectory: AgingTrajectory = field(default_factory=AgingTrajectory)
    r_th_aging: tuple = ()           # breakpoints of fractional r_th(j-c) growth
    aging_scope: str = "test"        # "test" or "all"
    policy: WarningPolicy = field(default_factory=WarningPolicy)
    startup_every: int = 100         # 0: only before the first cycle
    i_cal: Optional[float] = None    # recalibration current, default i_nominal
    heat_cap_s: float = 120.0
    cool_cap_s: float = 600.0
    soft_start_cycles: float = 2.0


def default_settings(cfg: Optional[BenchConfig] = None, **overrides) -> BenchSettings:
    cfg = validate_scenario(cfg or BenchConfig())
    return BenchSettings(cfg=cfg, **overrides)


@dataclass
class StartupResult:
    v_th: np.ndarray
    r_on_ambient: np.ndarray
    delta_vth_hat: np.ndarray
    lut_offsets: np.ndarray
    lut_offsets_pkg: np.ndarray


@dataclass
class RunResult:
    records: list
    status: str             # "ok" | "protection_trip" | "thermal_runaway"
    reason: str = ""
    cycles_completed: int = 0


# ---------------------------------------------------------------------------
# The bench
# ---------------------------------------------------------------------------

class TestBench:
    """Owns every module state; single-threaded stepping over one scenario.

    Independent scenarios are safe to run in parallel processes since no
    state is shared.
    """

    __test__ = False  # not a pytest class despite the bench-domain name

    def __init__(self, settings: BenchSettings):
        s = settings
        self.s = s
        cfg = s.cfg
        self.cfg = cfg
        self.ambient = cfg.ambient_c

        ss = np.random.SeedSequence(cfg.rng_seed)
        k_ed, k_noise = ss.spawn(2)
        rng_ed = np.random.default_rng(k_ed)        # one-time per-device draws
        self.rng = np.random.default_rng(k_noise)   # shared measurement noise

        self.bank = DeviceBank(s.device_params, self.ambient)
        self.channels = [
            sns.SenseChannel(replace(s.sense_params,
                                     e_d=float(rng_ed.uniform(*sns.E_D_RANGE))),
                             rng=self.rng)
            for _ in range(N_DEVICES)
        ]
        self.e_d = np.array([c.params.e_d for c in self.channels])

        self.thermal = th.ThermalBank(N_DEVICES, s.network)
        self.cool_test = _bind_cooling(s.cooling_test, self.ambient)
        self.cool_load = _bind_cooling(s.cooling_load, self.ambient)
        self.ntc_readings = np.full(N_DEVICES, self.ambient, dtype=float)
        self._t_case = np.full(N_DEVICES, self.ambient, dtype=float)

        # trigger windows centered on each device's positive current peak
        phi = cfg.pf_angle
        centers = []
        for k in range(N_DEVICES):
            leg = (k // 2) % 3
            negated = (k % 2 == 1) != (k >= 6)
            c = phi + leg * TWO_PI / 3.0 + (math.pi if negated else 0.0)
            centers.append(wrap_angle(c))
        self.samplers = [smp.SamplerState(
            smp.build_trigger_set(c, s.sampler_n, s.sampler_window),
            budget_per_cycle=s.budget_per_cycle) for c in centers]

        self._base_lut = smp.build_ron_lut(s.device_params, s.lut_t_axis,
                                           s.lut_i_axis, v_gs=cfg.gate_on_v)
        self.luts = [self._base_lut] * N_DEVICES

        self.desat_base = s.desat
        if s.desat_calibrated:
            fresh = DeviceState(params=s.device_params, t_j=self.ambient)
            v_fresh = dev_mod.conduction_voltage(fresh, s.device_params.i_nominal,
                                                 self.ambient, cfg.gate_on_v)
            thr = sns.desat_voltage(s.sense_params, v_fresh + s.desat_margin_v)
            self.desat_base = replace(s.desat, threshold=thr)
        self.desat_cfg = [self.desat_base] * N_DEVICES
        self._desat_thr = np.full(N_DEVICES, self.desat_base.threshold)
        self._desat_run = np.full(N_DEVICES, -1)
        self._desat_bias = s.sense_params.i_desat * s.sense_params.r_s \
            + 2.0 * s.sense_params.v_d_hv
        self._ntc_rate = np.zeros(N_DEVICES)

        # electrical state
        self.plant = PlantState()
        self.ctl = make_controller(cfg)
        self.i_ref_dq = (cfg.i_ref_peak * math.cos(phi),
                         -cfg.i_ref_peak * math.sin(phi))
        self.v_test_mag = cfg.modulation_index * cfg.v_dc / _SQRT3

        self.t = 0.0
        self.theta_prev = 0.0
        self._fund_cycle = 0
        self._soft_t0 = 0.0

        # monitoring outputs
        self.tj_est = np.full(N_DEVICES, np.nan)
        self.r_on_last = np.full(N_DEVICES, np.nan)
        self.i_pk_last = np.full(N_DEVICES, np.nan)
        self.collect_windows = True
        self.windows: list[dict] = []
        self.last_window_trace = None  # (trigger angles, i slots, v slots)
        self.tally = EnergyTally()
        self.thermal_trace: list[tuple] = []
        self.trace_stride_s = 0.02
        self._trace_next_t = 0.0
        self._trace_cap = 20000
        self.collect_waveforms = False
        self.waveform_stride = 8
        self.waveform_rows: list[tuple] = []
        self._wave_count = 0

        self.baseline_vth = np.full(N_DEVICES, np.nan)
        self.startup_log: list[StartupResult] = []
        self._vth_pending = np.full(N_DEVICES, np.nan)

        self._mask_aging = np.zeros(N_DEVICES, dtype=bool)
        self._mask_aging[: 6 if s.aging_scope == "test" else N_DEVICES] = True

        self._envelope_cache = None
        self._env_win_idx = None
        self._env_i_win = None
        self._env_i_pk = None
        self._env_tj_cols = None
        self._thermal_cache: dict = {}

    # -- small helpers -------------------------------------------------------

    @property
    def theta(self) -> float:
        return (TWO_PI * self.cfg.f_fund * self.t) % TWO_PI

    def _soft_scale(self) -> float:
        ramp = self.s.soft_start_cycles / self.cfg.f_fund
        if ramp <= 0:
            return 1.0
        return min(1.0, max(0.0, (self.t - self._soft_t0) / ramp))

    def _device_currents(self, i_abc: np.ndarray) -> np.ndarray:
        out = np.empty(N_DEVICES)
        out[0:6:2] = i_abc    # test upper switches source the link current
        out[1:6:2] = -i_abc
        out[6:12:2] = -i_abc  # load upper switches sink it
        out[7:12:2] = i_abc
        return out

    def _duty_per_device(self, d_test: np.ndarray, d_load: np.ndarray) -> np.ndarray:
        out = np.empty(N_DEVICES)
        out[0:6:2] = d_test
        out[1:6:2] = 1.0 - d_test
        out[6:12:2] = d_load
        out[7:12:2] = 1.0 - d_load
        return out

    def inject_short(self, device_index: int):
        self.bank.shorted[device_index] = True

    # -- protection ------------------------------------------------------------

    def _protection(self, v_cond: np.ndarray, i_dev: np.ndarray, dt: float):
        pin = self._desat_bias + v_cond
        over = (i_dev > 0) & (pin > self._desat_thr)
        self._desat_run = np.where(over, self._desat_run + 1, -1)
        trip = self._desat_run * dt >= self.desat_base.blanking
        trip &= self._desat_run >= 1
        if trip.any():
            k = int(np.flatnonzero(trip)[0])
            raise ProtectionTrip(DEVICE_IDS[k], self.t)
        if self.bank.t_j.max() > T_J_ENVELOPE_MAX:
            k = int(self.bank.t_j.argmax())
            raise ThermalRunaway(
                f"{DEVICE_IDS[k]} reached {self.bank.t_j[k]:.1f} degC "
                f"at t={self.t:.3f} s")

    # -- capture ----------------------------------------------------------------

    def _capture(self, theta_now: float, i_dev: np.ndarray, v_cond: np.ndarray,
                 duty: np.ndarray):
        cyc = int(self.cfg.f_fund * self.t + 1e-9)
        if cyc != self._fund_cycle:
            self._fund_cycle = cyc
            for sstate in self.samplers:
                sstate.start_cycle()

        floor = self.s.i_floor
        sigma = self.s.sense_params.noise_sigma
        theta_prev = self.theta_prev
        for k, sstate in enumerate(self.samplers):
            if sstate.budget_used >= sstate.budget_per_cycle:
                continue
            if i_dev[k] <= floor or duty[k] < 0.02:
                continue
            if len(smp.triggers_in_interval(sstate.triggers, theta_prev,
                                            theta_now)) == 0:
                continue
            noise = self.rng.normal(0.0, sigma) if sigma > 0 else 0.0
            reading = _Reading(True, float(v_cond[k] + self.e_d[k] + noise))
            smp.sampler_update_interval(
                sstate, theta_prev, theta_now, reading, float(i_dev[k]),
                truth=float(v_cond[k] / i_dev[k]))
            if sstate.complete:
                self._finish_window(k)
        self.theta_prev = theta_now

    def _finish_window(self, k: int):
        sstate = self.samplers[k]
        taps = self.s.fir_taps
        est = smp.estimate_ron(sstate, taps, self.s.i_floor)
        tj = smp.estimate_tj(est.r_on, est.i_at_peak, self.luts[k])
        self.r_on_last[k] = est.r_on
        self.i_pk_last[k] = est.i_at_peak
        self.tj_est[k] = tj.t_j
        if self.collect_windows:
            valid = np.abs(sstate.i) >= self.s.i_floor
            truth_f = smp.center_filtered_value(sstate.truth, valid, taps,
                                                sstate.triggers.center_index)
            self.windows.append({
                "t": self.t, "device": k, "r_est": est.r_on,
                "i_pk": est.i_at_peak, "r_true": truth_f, "tj_est": tj.t_j,
                "tj_true": float(self.bank.t_j[k]),
                "cycles_used": sstate.cycles_elapsed,
            })
        if k == 0:
            self.last_window_trace = (sstate.triggers.angles,
                                      sstate.i.copy(), sstate.v_on.copy())
        sstate.reset_window()

    # -- averaged / switched conducting step -------------------------------------

    def _step_conducting(self, collect_tally: bool = True):
        cfg = self.cfg
        dt = 1.0 / cfg.f_sw
        theta = self.theta
        scale = self._soft_scale()

        v_test_dq = (self.v_test_mag * scale, 0.0)
        i_ref = (self.i_ref_dq[0] * scale, self.i_ref_dq[1] * scale)
        (dta, dtb, dtc, _), (dla, dlb, dlc, _) = control_step(
            self.ctl, self.plant.i_abc, theta, dt, v_test_dq, i_ref, cfg.v_dc)
        d_test = np.array([dta, dtb, dtc])
        d_load = np.array([dla, dlb, dlc])

        i0 = self.plant.i_abc
        i_dev = self._device_currents(i0)
        duty = self._duty_per_device(d_test, d_load)
        v_cond = self.bank.conduction(i_dev)

        self._capture(theta, i_dev, v_cond, duty)
        self._protection(v_cond, i_dev, dt)

        v_hi_t, v_lo_t = v_cond[0:6:2], v_cond[1:6:2]
        v_hi_l, v_lo_l = v_cond[6:12:2], v_cond[7:12:2]
        pole_test = d_test * (cfg.v_dc - v_hi_t) + (1.0 - d_test) * v_lo_t
        pole_load = d_load * (cfg.v_dc - v_hi_l) + (1.0 - d_load) * v_lo_l

        if cfg.fidelity is Fidelity.SWITCHED:
            res = self._plant_switched(d_test, d_load, v_hi_t, v_lo_t,
                                       v_hi_l, v_lo_l, dt)
        else:
            res = plant_step(self.plant, pole_test, pole_load,
                             cfg.link_resistance, cfg.link_inductance, dt)

        i_mean_dev = self._device_currents(res.i_mean)
        p = self.bank.params
        p_cond = duty * v_cond * i_mean_dev
        p_sw = cfg.f_sw * (p.e_on0 + p.e_off0) * (cfg.v_dc / p.v_ref) \
            * np.abs(i_mean_dev) / p.i_ref
        self._thermal_step(p_cond + p_sw, dt, pump_test=False)

        if collect_tally:
            tl = self.tally
            tl.e_supply += (cfg.v_dc * float(np.dot(d_test - d_load, res.i_mean))
                            + float(p_sw.sum())) * dt
            tl.e_cond += float(p_cond.sum()) * dt
            tl.e_sw += float(p_sw.sum()) * dt
            tl.e_link += cfg.link_resistance * float(res.i_sq_mean.sum()) * dt
            tl.duration += dt
            v_ph = pole_test - pole_test.mean()
            tl.sum_v2 += float((v_ph ** 2).sum())
            tl.sum_i2 += float((i0 ** 2).sum())
            tl.samples += 1

        if self.collect_waveforms:
            self._wave_count += 1
            if self._wave_count % self.waveform_stride == 0:
                self.waveform_rows.append(
                    (self.t, theta, *i0.tolist(), *v_cond.tolist()))

        self.t += dt
        self._trace_point()
        return d_test, d_load, res

    def _plant_switched(self, d_test, d_load, v_hi_t, v_lo_t, v_hi_l, v_lo_l,
                        dt_period) -> PlantStepResult:
        """Sub-PWM integration with center-aligned pole windows.

        Each sub-step applies the exact overlap fraction of the ON window, so
        per-period volt-seconds match the averaged path exactly while the
        current ripple is resolved.
        """
        cfg = self.cfg
        n = SWITCHED_SUBSTEPS
        dt_sub = dt_period / n
        edges = np.linspace(0.0, 1.0, n + 1)
        lo_e, hi_e = edges[:-1, None], edges[1:, None]

        def frac_on(d):
            w0, w1 = 0.5 - 0.5 * d, 0.5 + 0.5 * d
            return np.clip(np.minimum(hi_e, w1) - np.maximum(lo_e, w0),
                           0.0, 1.0) / (hi_e - lo_e)

        f_test = frac_on(d_test)  # (n, 3)
        f_load = frac_on(d_load)
        i_mean_acc = np.zeros(3)
        i_sq_acc = np.zeros(3)
        for j in range(n):
            pt = f_test[j] * (cfg.v_dc - v_hi_t) + (1.0 - f_test[j]) * v_lo_t
            pl = f_load[j] * (cfg.v_dc - v_hi_l) + (1.0 - f_load[j]) * v_lo_l
            r = plant_step(self.plant, pt, pl, cfg.link_resistance,
                           cfg.link_inductance, dt_sub)
            i_mean_acc += r.i_mean
            i_sq_acc += r.i_sq_mean
        return PlantStepResult(i_mean=i_mean_acc / n, i_sq_mean=i_sq_acc / n)

    # -- envelope conducting step --------------------------------------------

    def _envelope_grid(self):
        """Quasi-static per-fundamental waveform grids at 32-angle resolution."""
        if self._envelope_cache is not None:
            return self._envelope_cache
        cfg = self.cfg
        g = 32
        thetas = np.arange(g) * TWO_PI / g
        i_d, i_q = self.i_ref_dq
        i_abc = np.stack([np.array(inverse_park(i_d, i_q, t)) for t in thetas],
                         axis=1)  # (3, g)
        w = TWO_PI * cfg.f_fund
        r, l = cfg.link_resistance, cfg.link_inductance
        v_t = (self.v_test_mag, 0.0)
        v_l = (v_t[0] - (r * i_d - w * l * i_q),
               v_t[1] - (r * i_q + w * l * i_d))
        d_test = np.empty((3, g))
        d_load = np.empty((3, g))
        for j, t in enumerate(thetas):
            d_test[:, j] = svpwm_duties(v_t[0], v_t[1], t, cfg.v_dc)[:3]
            d_load[:, j] = svpwm_duties(v_l[0], v_l[1], t, cfg.v_dc)[:3]
        i_dev = np.empty((N_DEVICES, g))
        duty = np.empty((N_DEVICES, g))
        i_dev[0:6:2] = i_abc
        i_dev[1:6:2] = -i_abc
        i_dev[6:12:2] = -i_abc
        i_dev[7:12:2] = i_abc
        duty[0:6:2] = d_test
        duty[1:6:2] = 1.0 - d_test
        duty[6:12:2] = d_load
        duty[7:12:2] = 1.0 - d_load
        slot_i = np.empty((N_DEVICES, self.s.sampler_n))
        for k, sstate in enumerate(self.samplers):
            ph = (k // 2) % 3
            sign = -1.0 if (k % 2 == 1) != (k >= 6) else 1.0
            slot_i[k] = sign * np.array(
                [inverse_park(i_d, i_q, a)[ph] for a in sstate.triggers.angles])
        usable = [np.flatnonzero(slot_i[k] > self.s.i_floor)
                  for k in range(N_DEVICES)]
        if min(len(u) for u in usable) < self.s.sampler_n:
            raise ValueError(
                "sampler window reaches currents below the floor; narrow the "
                "window or lower i_floor so every slot can fill")
        self._envelope_cache = (i_dev, duty, slot_i, usable)
        return self._envelope_cache

    def _step_envelope(self):
        cfg = self.cfg
        dt = 1.0 / cfg.f_fund
        i_dev, duty, slot_i, usable = self._envelope_grid()

        v_cond = self.bank.conduction(i_dev, t_j=self.bank.t_j[:, None])
        p = self.bank.params
        p_cond = (duty * v_cond * i_dev).mean(axis=1)
        p_sw = cfg.f_sw * (p.e_on0 + p.e_off0) * (cfg.v_dc / p.v_ref) \
            * np.abs(i_dev).mean(axis=1) / p.i_ref
        p_dev = p_cond + p_sw

        # one acquisition burst per fundamental cycle, budget-limited; the
        # common whole-window-per-cycle case runs batched across devices
        n_slots = self.s.sampler_n
        whole = (self.samplers[0].budget_per_cycle >= n_slots
                 and all(st.filled == 0 for st in self.samplers))
        if whole:
            self._envelope_fill_batched(slot_i)
        else:
            sigma = self.s.sense_params.noise_sigma
            for k, sstate in enumerate(self.samplers):
                sstate.start_cycle()
                unfilled = sstate.unfilled_indices()
                u = unfilled[slot_i[k][unfilled] > self.s.i_floor]
                take = u[:sstate.budget_per_cycle]
                if len(take) == 0:
                    continue
                i_slot = slot_i[k][take]
                r_slot = self.bank.r_on_single(k, i_slot, float(self.bank.t_j[k]))
                noise = self.rng.normal(0.0, sigma, size=len(take)) \
                    if sigma > 0 else 0.0
                sstate.v_on[take] = i_slot * r_slot + self.e_d[k] + noise
                sstate.i[take] = i_slot
                sstate.truth[take] = r_slot
                sstate.filled_mask[take] = True
                sstate.filled += len(take)
                sstate.budget_used += len(take)
                if sstate.complete:
                    self._finish_window(k)

        # protection at envelope resolution: per-cycle exceedance duration
        over_time = ((i_dev > 0)
                     & (v_cond > (self._desat_thr - self._desat_bias)[:, None])
                     ).mean(axis=1) * dt
        over = over_time >= self.desat_base.blanking
        if over.any():
            k = int(np.flatnonzero(over)[0])
            raise ProtectionTrip(DEVICE_IDS[k], self.t)

        self._thermal_step(p_dev, dt, pump_test=False)
        if self.bank.t_j.max() > T_J_ENVELOPE_MAX:
            k = int(self.bank.t_j.argmax())
            raise ThermalRunaway(
                f"{DEVICE_IDS[k]} reached {self.bank.t_j[k]:.1f} degC "
                f"at t={self.t:.3f} s")

        tl = self.tally
        p_link = cfg.link_resistance * float((i_dev[0:6:2] ** 2).mean(axis=1).sum())
        tl.e_cond += float(p_cond.sum()) * dt
        tl.e_sw += float(p_sw.sum()) * dt
        tl.e_link += p_link * dt
        tl.e_supply += (float(p_cond.sum() + p_sw.sum()) + p_link) * dt
        tl.duration += dt
        tl.samples += 1

        self.t += dt
        self._fund_cycle += 1
        self._trace_point()

    def _envelope_fill_batched(self, slot_i: np.ndarray):
        """Whole-window acquisition for all devices in one shot.

        Valid when the per-cycle budget covers the full trigger set, which is
        the campaign configuration; every window fills, is estimated, and
        resets within the cycle.
        """
        bank = self.bank
        p = bank.params
        t = bank.t_j
        ov = p.gate_on_v - (p.v_th0 + p.rho_vth * (t - p.t0) + bank.delta_vth)
        drift = p.r_drift0 * (1.0 + bank.delta_pkg) \
            * ((t + KELVIN) / (p.t0 + KELVIN)) ** p.alpha_drift
        r_true = (drift + p.k_ch / ov)[:, None] \
            + p.r_i_slope * (slot_i - p.i_nominal)      # (12, n)
        v = slot_i * r_true + self.e_d[:, None]
        sigma = self.s.sense_params.noise_sigma
        if sigma > 0:
            v = v + self.rng.normal(0.0, sigma, size=v.shape)

        if self._env_win_idx is None:
            # per-device center filter windows (centers differ under wrap)
            taps_n = len(self.s.fir_taps)
            half = taps_n // 2
            n = self.s.sampler_n
            idx = np.empty((N_DEVICES, taps_n), dtype=int)
            for k, st in enumerate(self.samplers):
                c = st.triggers.center_index
                w = np.arange(c - half, c + half + 1)
                w = np.where(w < 0, -w - 1, w)
                w = np.where(w >= n, 2 * n - w - 1, w)
                idx[k] = w
            self._env_win_idx = idx
            self._env_rows = np.arange(N_DEVICES)[:, None]
            self._env_i_win = slot_i[self._env_rows, idx]
            self._env_i_pk = slot_i[np.arange(N_DEVICES),
                                    [st.triggers.center_index
                                     for st in self.samplers]]
        idx = self._env_win_idx
        taps = self.s.fir_taps
        rf = (v[self._env_rows, idx] / self._env_i_win) @ taps
        truth_f = r_true[self._env_rows, idx] @ taps

        if self._env_tj_cols is None:
            self._env_tj_cols = [self.luts[k].column(float(self._env_i_pk[k]))
                                 for k in range(N_DEVICES)]
        cols = self._env_tj_cols
        t_ax = self.luts[0].t_axis
        for k in range(6):  # only the test-bridge estimates drive control
            self.tj_est[k] = np.interp(rf[k], cols[k], t_ax)
        if self.collect_windows:
            for k in range(6, N_DEVICES):
                self.tj_est[k] = np.interp(rf[k], cols[k], t_ax)
        self.r_on_last = rf
        self.i_pk_last = self._env_i_pk.copy()
        if self.collect_windows:
            for k in range(N_DEVICES):
                self.windows.append({
                    "t": self.t, "device": k, "r_est": float(rf[k]),
                    "i_pk": float(self._env_i_pk[k]),
                    "r_true": float(truth_f[k]),
                    "tj_est": float(self.tj_est[k]),
                    "tj_true": float(t[k]), "cycles_used": 1,
                })
        self.last_window_trace = (self.samplers[0].triggers.angles,
                                  slot_i[0].copy(), v[0].copy())

    # -- idle (converter off) step -------------------------------------------

    def _step_idle(self, pump_test: bool):
        dt = 1.0 / self.cfg.f_fund
        self.plant.i_abc = np.zeros(3)
        self._thermal_step(np.zeros(N_DEVICES), dt, pump_test=pump_test)
        self.t += dt
        self._trace_point()

    def _thermal_step(self, p_dev: np.ndarray, dt: float, pump_test: bool):
        t_ref_t, r_b_t = th.cooling_step(self.cool_test, pump_test)
        t_ref_l, r_b_l = th.cooling_step(self.cool_load, True)
        bank = self.thermal
        key = (dt, r_b_t, r_b_l, self.bank.aging_version)
        cached = self._thermal_cache.get(key)
        if cached is None:
            r = np.tile(bank.base_r, (bank.n, 1))
            r[:, 0] *= self.bank.r_th_factor
            r[:6, -1] = r_b_t
            r[6:, -1] = r_b_l
            a = np.exp(-dt / (r * bank.c))
            cached = (a, r * (1.0 - a))
            if len(self._thermal_cache) > 16:
                self._thermal_cache.clear()
            self._thermal_cache[key] = cached
        a, gain = cached
        bank.temps = bank.temps * a + p_dev[:, None] * gain
        tsum = bank.temps.sum(axis=1)
        t_j = np.empty(N_DEVICES)
        t_j[:6] = t_ref_t + tsum[:6]
        t_j[6:] = t_ref_l + tsum[6:]
        self.bank.t_j = t_j
        t_case = np.empty(N_DEVICES)
        t_case[:6] = t_ref_t + bank.temps[:6, -1]
        t_case[6:] = t_ref_l + bank.temps[6:, -1]
        self._t_case = t_case
        th.cooling_absorb(self.cool_test, float((bank.temps[:6, -1] / r_b_t).sum()), dt)
        th.cooling_absorb(self.cool_load, float((bank.temps[6:, -1] / r_b_l).sum()), dt)
        # vectorized case sensors (shared model)
        m = self.s.ntc
        target = self._t_case + m.bias
        prev = self.ntc_readings
        if m.time_constant <= 0:
            self.ntc_readings = target.copy()
        else:
            alpha = 1.0 - math.exp(-dt / m.time_constant)
            self.ntc_readings = prev + alpha * (target - prev)
        self._ntc_rate = (self.ntc_readings - prev) / dt

    def _trace_point(self):
        if self.t + 1e-12 >= self._trace_next_t:
            self.thermal_trace.append(
                (self.t, *self.bank.t_j.tolist(), float(self._t_case[0])))
            self._trace_next_t = self.t + self.trace_stride_s
            if len(self.thermal_trace) > self._trace_cap:
                # thin adaptively so long campaigns stay bounded
                self.thermal_trace = self.thermal_trace[::2]
                self.trace_stride_s *= 2.0

    # -- phases -----------------------------------------------------------------

    def _conducting_step_any(self):
        if self.cfg.fidelity is Fidelity.ENVELOPE:
            self._step_envelope()
        else:
            self._step_conducting()

    def run_steady(self, duration_s: float) -> EnergyTally:
        """Continuous conducting run (no thermal cycling); used for control
        and estimator characterization."""
        if self.tally.duration == 0.0:
            self.tally.e_l_start = self._stored_link_energy()
        t_end = self.t + duration_s
        while self.t < t_end - 1e-12:
            self._conducting_step_any()
        self.tally.e_l_end = self._stored_link_energy()
        return self.tally

    def reset_tally(self):
        """Restart the energy bookkeeping window (discard any transient)."""
        self.tally = EnergyTally()
        self.tally.e_l_start = self._stored_link_energy()

    def _stored_link_energy(self) -> float:
        return 0.5 * self.cfg.link_inductance * float((self.plant.i_abc ** 2).sum())

    def _heat_done(self, t_heat: float, pred: "_CrossingPredictor") -> bool:
        cfg = self.cfg
        if cfg.technique is Technique.FIXED_TIMES:
            return t_heat >= cfg.t_on - 1e-9
        if cfg.technique is Technique.CASE_SWING:
            return float(self.ntc_readings[:6].max()) >= cfg.t_case_max
        est = self.tj_est[:6]
        if not np.isfinite(est).any():
            return False
        return pred.crossed_up(float(np.nanmax(est)), cfg.t_j_max)

    def _cool_done(self, t_cool: float, observer: Callable[[float], float],
                   pred: "_CrossingPredictor") -> bool:
        cfg = self.cfg
        if cfg.technique is Technique.FIXED_TIMES:
            return t_cool >= cfg.t_off - 1e-9
        if cfg.technique is Technique.CASE_SWING:
            return float(self.ntc_readings[:6].max()) <= cfg.t_case_min
        return pred.crossed_down(observer(t_cool), cfg.t_j_min)

    def _ntc_case_estimate(self) -> np.ndarray:
        """Case temperature with the sensor's known first-order lag led out."""
        tau = self.s.ntc.time_constant
        return self.ntc_readings + tau * self._ntc_rate

    def _make_observer(self) -> Callable[[float], float]:
        """Junction estimate through the zero-loss cool-down.

        With the converter off the junction relaxes onto the case along the
        characterized junction-to-case stages, so the controller predicts
        t_j = case + (t_j_off - case_off) * sum_i w_i exp(-t/tau_i) from the
        datasheet stage constants and the last online estimate. The online
        resistance channel carries no current during cooling, so this is the
        only junction information available; the case comes from the NTC with
        its calibrated lag compensated.
        """
        r = self.thermal.base_r[:-1]
        tau = r * self.thermal.c[:-1]
        w = r / r.sum()
        est0 = self.tj_est[:6]
        hot = np.where(np.isfinite(est0), est0, self.bank.t_j[:6])
        gap0 = hot - self._ntc_case_estimate()[:6]

        def observer(t_cool: float) -> float:
            decay = float((w * np.exp(-t_cool / tau)).sum())
            return float((self._ntc_case_estimate()[:6] + gap0 * decay).max())

        return observer

    def run_cycle(self, cycle_index: int, startup_vth=None) -> CycleRecord:
        """One heat-up plus cool-down with technique-specific termination.

        The maximum junction temperature is tracked over the heat phase and
        the minimum over the cool phase, so the recorded swing reflects the
        controlled excursion.
        """
        cfg = self.cfg
        s = self.s
        t_start = self.t
        self.bank.apply_trajectories(s.trajectory, s.r_th_aging, cycle_index,
                                     self._mask_aging)
        if cycle_index == 0:
            self._soft_t0 = self.t

        tj_max = self.bank.t_j.copy()
        t0 = self.t
        pred = _CrossingPredictor()
        while True:
            self._conducting_step_any()
            np.maximum(tj_max, self.bank.t_j, out=tj_max)
            t_heat = self.t - t0
            if self._heat_done(t_heat, pred):
                break
            if t_heat > s.heat_cap_s:
                raise ThermalRunaway(
                    f"heat phase exceeded {s.heat_cap_s} s without reaching "
                    "its target")
        t_on_actual = self.t - t0

        observer = self._make_observer()
        tj_min = self.bank.t_j.copy()
        t0 = self.t
        pred = _CrossingPredictor()
        while True:
            self._step_idle(pump_test=True)
            np.minimum(tj_min, self.bank.t_j, out=tj_min)
            t_cool = self.t - t0
            if self._cool_done(t_cool, observer, pred) or t_cool > s.cool_cap_s:
                break
        t_off_actual = self.t - t0

        v_th_col = startup_vth if startup_vth is not None \
            else np.full(N_DEVICES, np.nan)
        return CycleRecord(
            cycle_index=cycle_index, t_start=t_start,
            r_on_est=self.r_on_last.copy(), tj_max=tj_max, tj_min=tj_min,
            v_th=np.asarray(v_th_col, dtype=float), v_sd=self._probe_vsd(),
            t_on_actual=t_on_actual, t_off_actual=t_off_actual,
        )

    def _probe_vsd(self) -> np.ndarray:
        """Converter-idle body-diode probe at nominal current per device."""
        out = np.empty(N_DEVICES)
        i_probe = self.bank.params.i_nominal
        for k in range(N_DEVICES):
            state = self.bank.device_state(k)
            out[k] = dev_mod.v_sd(state, i_probe, state.t_j) + self.e_d[k]
        return out

    # -- start-of-test measurements ---------------------------------------------

    def cool_to_ambient(self, tol: float = 0.75, cap_s: float = 900.0):
        t0 = self.t
        while float(np.abs(self.bank.t_j - self.ambient).max()) > tol:
            self._step_idle(pump_test=True)
            if self.t - t0 > cap_s:
                break

    def startup_measurements(self) -> StartupResult:
        """Idle-bench threshold and ambient on-resistance measurements, then
        lookup-table recalibration and protection-threshold compensation.

        The first measurement of each device freezes its threshold baseline;
        later shifts split the resistance offset into oxide and package
        contributions.
        """
        s = self.s
        i_cal = s.i_cal or self.bank.params.i_nominal
        v_th_m = np.empty(N_DEVICES)
        r_amb = np.empty(N_DEVICES)
        d_hat = np.empty(N_DEVICES)
        offs = np.empty(N_DEVICES)
        offs_pkg = np.empty(N_DEVICES)
        sigma = s.sense_params.noise_sigma
        for k in range(N_DEVICES):
            state = self.bank.device_state(k)
            v_th_m[k] = sns.measure_vth(state, self.ambient, s.sense_params,
                                        rng=self.rng)
            if not np.isfinite(self.baseline_vth[k]):
                self.baseline_vth[k] = v_th_m[k]
            d_hat[k] = max(0.0, v_th_m[k] - self.baseline_vth[k])
            v = dev_mod.conduction_voltage(state, i_cal, self.ambient,
                                           self.cfg.gate_on_v)
            noise = self.rng.normal(0.0, sigma / math.sqrt(s.sampler_n)) \
                if sigma > 0 else 0.0
            r_amb[k] = (v + self.e_d[k] + noise) / i_cal
            lut = smp.recalibrate_lut(self._base_lut, float(r_amb[k]),
                                      self.ambient, i_cal, float(d_hat[k]), state)
            self.luts[k] = lut
            offs[k] = lut.offset
            offs_pkg[k] = lut.offset_pkg
            if self.desat_base.compensated or self.s.desat_calibrated:
                cfg_k = sns.compensate_desat_threshold(self.desat_base,
                                                       float(d_hat[k]), state)
                self.desat_cfg[k] = cfg_k
                self._desat_thr[k] = cfg_k.threshold
        res = StartupResult(v_th=v_th_m, r_on_ambient=r_amb,
                            delta_vth_hat=d_hat, lut_offsets=offs,
                            lut_offsets_pkg=offs_pkg)
        self.startup_log.append(res)
        self._vth_pending = v_th_m.copy()
        self._env_tj_cols = None  # recalibrated tables invalidate cached columns
        return res

    # -- campaign -----------------------------------------------------------------

    def run_campaign(self, n_cycles: Optional[int] = None,
                     collect_windows: bool = False) -> RunResult:
        n = n_cycles if n_cycles is not None else self.cfg.n_cycles
        self.collect_windows = collect_windows
        s = self.s
        records: list[CycleRecord] = []
        tracker = WarningTracker(s.policy)
        status, reason = "ok", ""
        for c in range(n):
            due = (c == 0) if s.startup_every <= 0 else (c % s.startup_every == 0)
            try:
                if due:
                    self.bank.apply_trajectories(s.trajectory, s.r_th_aging, c,
                                                 self._mask_aging)
                    if c > 0:
                        self.cool_to_ambient()
                    self.startup_measurements()
                vth_col = self._vth_pending
                self._vth_pending = np.full(N_DEVICES, np.nan)
                rec = self.run_cycle(c, startup_vth=vth_col)
            except ProtectionTrip as e:
                status, reason = "protection_trip", str(e)
                break
            except ThermalRunaway as e:
                status, reason = "thermal_runaway", str(e)
                break
            rec.warnings = tuple(sorted(tracker.update(rec)))
            records.append(rec)
        return RunResult(records=records, status=status, reason=reason,
                         cycles_completed=len(records))

    # -- steady-state characterization --------------------------------------------

    def measure_operating_point(self, n_cycles: int = 2) -> dict:
        """Cycle-averaged dq voltage/current of the test bridge and the phase
        angle between them (degrees, wrapped to (-180, 180])."""
        cfg = self.cfg
        steps = int(round(n_cycles * cfg.f_sw / cfg.f_fund))
        sv = np.zeros(2)
        si = np.zeros(2)
        for _ in range(steps):
            theta = self.theta
            i0 = self.plant.i_abc.copy()
            d_test, _, _ = self._step_conducting()
            v_pole = d_test * cfg.v_dc
            v_ph = v_pole - v_pole.mean()
            sv += park(v_ph[0], v_ph[1], v_ph[2], theta)
            si += park(i0[0], i0[1], i0[2], theta)
        sv /= steps
        si /= steps
        ang = dq_phase_deg(sv[0], sv[1]) - dq_phase_deg(si[0], si[1])
        ang = (ang + 180.0) % 360.0 - 180.0
        return {"v_dq": (sv[0], sv[1]), "i_dq": (si[0], si[1]),
                "i_mag": math.hypot(si[0], si[1]),
                "theta_v_minus_i_deg": ang}


def _bind_cooling(c: th.CoolingState, ambient: float) -> th.CoolingState:
    """Fresh cooling state bound to the scenario ambient."""
    return th.CoolingState(
        coolant_temp=c.coolant_temp, ambient_temp=ambient,
        r_boundary_on=c.r_boundary_on, r_boundary_off=c.r_boundary_off,
        max_heat=c.max_heat, reservoir_c=c.reservoir_c)
