"""Out-of-order equivalent-time sampling of on-state voltage and current,
FIR smoothing, online on-resistance estimation, and lookup-table junction
temperature inversion with start-of-test recalibration.

A trigger set pins N electrical angles around the current peak. Samples
arriving in any order land in their angle slot; a per-fundamental-cycle
capture budget models the low-priority acquisition task, so a window
completes in ceil(N / budget) cycles. Completed windows are ratioed,
FIR-filtered, and inverted through the R(T, I) table.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.signal import firwin

from . import device as dev_mod
from .core import TWO_PI, angle_distance, wrap_angle
from .device import DeviceState


class IncompleteWindow(RuntimeError):
    """Estimation requested before every slot is filled."""


class AmbientMismatch(RuntimeError):
    """Recalibration measurement fell below the fresh table."""


# ---------------------------------------------------------------------------
# Trigger angles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TriggerSet:
    """Sorted target angles (radians, wrapped to [0, 2pi)) with the matching
    tolerance and the index of the slot nearest the window center."""

    angles: np.ndarray
    tolerance: float
    center: float
    center_index: int

    @property
    def n(self) -> int:
        return len(self.angles)


def build_trigger_set(theta_peak: float, n: int, window: float) -> TriggerSet:
    """n uniformly spaced trigger angles spanning [peak - window, peak + window]."""
    if n < 1:
        raise ValueError("need at least one trigger")
    if not 0.0 < window <= math.pi / 2:
        raise ValueError("window must lie in (0, pi/2]")
    if n == 1:
        raw = np.array([theta_peak])
        tol = window
    else:
        raw = np.linspace(theta_peak - window, theta_peak + window, n)
        tol = 0.5 * (raw[1] - raw[0])
    angles = np.sort(raw % TWO_PI)
    center = wrap_angle(theta_peak)
    dists = np.abs(angles - center)
    dists = np.minimum(dists, TWO_PI - dists)
    return TriggerSet(angles=angles, tolerance=float(tol), center=center,
                      center_index=int(dists.argmin()))


def _bisect_recursive(angles: np.ndarray, x: float, lo: int, hi: int) -> int:
    """Insertion index of x in the sorted angle array, found recursively."""
    if lo >= hi:
        return lo
    mid = (lo + hi) // 2
    if angles[mid] < x:
        return _bisect_recursive(angles, x, mid + 1, hi)
    return _bisect_recursive(angles, x, lo, mid)


def match_trigger(theta_now: float, tset: TriggerSet) -> Optional[int]:
    """Index of the trigger within tolerance of theta_now, wrap-aware.

    Recursive binary search plus neighbor checks; result is identical to a
    linear scan for the nearest trigger (ties resolve to the lower index).
    """
    theta = wrap_angle(theta_now)
    a = tset.angles
    n = len(a)
    j = _bisect_recursive(a, theta, 0, n)
    best_idx, best_d = None, math.inf
    for k in sorted({(j - 1) % n, j % n, 0, n - 1}):
        d = angle_distance(theta, float(a[k]))
        if d < best_d:
            best_idx, best_d = k, d
    if best_d <= tset.tolerance:
        return best_idx
    return None


def triggers_in_interval(tset: TriggerSet, theta_from: float, theta_to: float
                         ) -> np.ndarray:
    """Indices of all triggers crossed while the angle swept (from, to].

    Wrap-aware; used by the stepped simulation where the control-rate angle
    grid is far coarser than the trigger spacing, so a capture fires whenever
    the accumulated angle passes a trigger.
    """
    a = tset.angles
    t0 = wrap_angle(theta_from)
    t1 = wrap_angle(theta_to)
    if t1 == t0:
        return np.empty(0, dtype=int)
    if t1 > t0:
        lo = int(np.searchsorted(a, t0, side="right"))
        hi = int(np.searchsorted(a, t1, side="right"))
        return np.arange(lo, hi)
    # wrapped sweep: (t0, 2pi) then [0, t1]
    lo = int(np.searchsorted(a, t0, side="right"))
    hi = int(np.searchsorted(a, t1, side="right"))
    return np.concatenate([np.arange(lo, len(a)), np.arange(0, hi)])


# ---------------------------------------------------------------------------
# Capture state
# ---------------------------------------------------------------------------

@dataclass
class SamplerState:
    """Slot array for one device, filled out of order under a cycle budget.

    in_order restricts capture to the next sequential slot (the one-point-
    per-cycle baseline when combined with budget 1).
    """

    triggers: TriggerSet
    budget_per_cycle: int = 5
    in_order: bool = False
    v_on: np.ndarray = field(init=False)
    i: np.ndarray = field(init=False)
    truth: np.ndarray = field(init=False)
    filled_mask: np.ndarray = field(init=False)
    filled: int = 0
    cycles_elapsed: int = 0
    budget_used: int = 0

    def __post_init__(self):
        n = self.triggers.n
        self.v_on = np.zeros(n)
        self.i = np.zeros(n)
        self.truth = np.full(n, np.nan)
        self.filled_mask = np.zeros(n, dtype=bool)

    @property
    def complete(self) -> bool:
        return self.filled == self.triggers.n

    def start_cycle(self):
        self.cycles_elapsed += 1
        self.budget_used = 0

    def reset_window(self):
        self.filled_mask[:] = False
        self.filled = 0
        self.cycles_elapsed = 0
        self.budget_used = 0

    def unfilled_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.filled_mask)


def _store(s: SamplerState, idx: int, v_on: float, i_meas: float,
           truth: float) -> bool:
    if s.budget_used >= s.budget_per_cycle or s.filled_mask[idx]:
        return False
    if s.in_order and idx != s.filled:
        return False
    s.v_on[idx] = v_on
    s.i[idx] = i_meas
    s.truth[idx] = truth
    s.filled_mask[idx] = True
    s.filled += 1
    s.budget_used += 1
    return True


def sampler_update(s: SamplerState, theta_now: float, reading, i_meas: float,
                   truth: float = math.nan) -> bool:
    """Capture one valid reading if the angle hits an unfilled trigger and
    the per-cycle budget allows. Returns True when a slot was stored."""
    if not reading.valid:
        return False
    idx = match_trigger(theta_now, s.triggers)
    if idx is None:
        return False
    return _store(s, idx, reading.v_op1, i_meas, truth)


def sampler_update_interval(s: SamplerState, theta_prev: float,
                            theta_now: float, reading, i_meas: float,
                            truth: float = math.nan) -> int:
    """Capture for every trigger crossed during the last angle step.

    All crossed slots receive the same synchronized (v, i) pair, which keeps
    their ratio an on-resistance sample taken at a single instant. Returns
    the number of slots stored.
    """
    if not reading.valid:
        return 0
    stored = 0
    for idx in triggers_in_interval(s.triggers, theta_prev, theta_now):
        if _store(s, int(idx), reading.v_op1, i_meas, truth):
            stored += 1
        if s.budget_used >= s.budget_per_cycle:
            break
    return stored


# ---------------------------------------------------------------------------
# FIR filtering
# ---------------------------------------------------------------------------

def default_fir_taps(n_taps: int = 31, cutoff: float = 0.1) -> np.ndarray:
    """Hamming-windowed low pass, normalized to exactly unity DC gain."""
    taps = firwin(n_taps, cutoff)
    return taps / taps.sum()


def fir_filter(raw: Sequence[float], taps: Sequence[float]) -> np.ndarray:
    """Zero-phase smoothing: linear convolution with symmetric edge padding.

    Requires symmetric taps summing to one, so constants pass unchanged and
    symmetric inputs incur no phase shift.
    """
    taps = np.asarray(taps, dtype=float)
    if len(taps) % 2 == 0:
        raise ValueError("taps length must be odd")
    if abs(taps.sum() - 1.0) > 1e-9:
        raise ValueError("taps must sum to 1")
    if not np.allclose(taps, taps[::-1], rtol=0, atol=1e-12):
        raise ValueError("taps must be symmetric")
    x = np.asarray(raw, dtype=float)
    half = len(taps) // 2
    if len(x) == 0:
        return x.copy()
    padded = np.pad(x, half, mode="symmetric")
    return np.convolve(padded, taps, mode="valid")


class RonEstimate(NamedTuple):
    r_on: float
    i_at_peak: float


def center_filtered_value(values: np.ndarray, valid: np.ndarray,
                          taps: np.ndarray, center: int) -> float:
    """Weighted filter output at one slot, skipping excluded slots.

    Indices outside the array are mapped by symmetric edge padding (same
    convention as fir_filter); weights of excluded slots are dropped and the
    remainder renormalized.
    """
    taps = np.asarray(taps, dtype=float)
    half = len(taps) // 2
    n = len(values)
    idx = np.arange(center - half, center + half + 1)
    idx = np.where(idx < 0, -idx - 1, idx)
    idx = np.where(idx >= n, 2 * n - idx - 1, idx)
    w = taps * valid[idx]
    wsum = w.sum()
    if wsum <= 0:
        raise IncompleteWindow("filter support is empty at the window center")
    return float((w * np.where(valid[idx], values[idx], 0.0)).sum() / wsum)


def estimate_ron(s: SamplerState, taps: Sequence[float],
                 i_floor: float = 1.0) -> RonEstimate:
    """Filtered on-resistance at the window center and the matching current.

    Per-slot ratios v/i are FIR-filtered; slots whose current sits below the
    floor are excluded from the filter support (weights renormalized over the
    remaining slots).
    """
    if not s.complete:
        raise IncompleteWindow(f"{s.filled}/{s.triggers.n} slots filled")
    taps = np.asarray(taps, dtype=float)
    valid = np.abs(s.i) >= i_floor
    if not valid.any():
        raise IncompleteWindow("no slot carries usable current")
    safe_i = np.where(valid, s.i, 1.0)
    r = np.where(valid, s.v_on / safe_i, 0.0)
    c = s.triggers.center_index
    r_f = center_filtered_value(r, valid, taps, c)
    return RonEstimate(r_on=r_f, i_at_peak=float(s.i[c]))


def filtered_ratio_trace(s: SamplerState, taps: Sequence[float],
                         i_floor: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """(raw, filtered) per-slot resistance traces for a completed window."""
    if not s.complete:
        raise IncompleteWindow(f"{s.filled}/{s.triggers.n} slots filled")
    valid = np.abs(s.i) >= i_floor
    safe_i = np.where(valid, s.i, 1.0)
    raw = np.where(valid, s.v_on / safe_i, np.nan)
    filt = fir_filter(np.where(valid, raw, 0.0), taps)
    return raw, filt


# ---------------------------------------------------------------------------
# R_on(T_j, I_d) lookup table
# ---------------------------------------------------------------------------

class TjEstimate(NamedTuple):
    t_j: float
    out_of_grid: bool


@dataclass
class RonLut:
    """Rectangular R(T, I) grid with recalibration corrections.

    The grid holds the fresh characterization. Recalibration splits the
    measured ambient shift into a gate-oxide part (predicted from the
    threshold shift through the channel law and applied exactly over
    temperature) and a package remainder (applied with the drift-term
    temperature profile so a resistance step scales the way the drift term
    does). Without the profile the package part falls back to a uniform
    offset.
    """

    t_axis: np.ndarray
    i_axis: np.ndarray
    grid: np.ndarray                       # (len(t_axis), len(i_axis)), fresh
    drift_profile: Optional[np.ndarray] = None  # fresh drift component over t_axis
    channel: Optional[dict] = None         # k_ch, v_gs, v_th0, rho_vth, t0 snapshot
    offset: float = 0.0                    # total measured ambient shift, ohm
    offset_pkg: float = 0.0
    delta_vth_hat: float = 0.0
    t_cal: float = 25.0

    def __post_init__(self):
        self.t_axis = np.asarray(self.t_axis, dtype=float)
        self.i_axis = np.asarray(self.i_axis, dtype=float)
        self.grid = np.asarray(self.grid, dtype=float)
        if self.grid.shape != (len(self.t_axis), len(self.i_axis)):
            raise ValueError("grid shape must match the axes")
        if np.any(np.diff(self.t_axis) <= 0) or np.any(np.diff(self.i_axis) <= 0):
            raise ValueError("axes must be strictly increasing")
        if np.any(np.diff(self.grid, axis=0) <= 0):
            raise ValueError("R must increase along the temperature axis")
        self._col_cache: dict = {}

    # -- corrections ------------------------------------------------------

    def _oxide_shift(self, t: np.ndarray) -> np.ndarray:
        if self.channel is None or self.delta_vth_hat == 0.0:
            return np.zeros_like(t)
        ch = self.channel
        ov = ch["v_gs"] - (ch["v_th0"] + ch["rho_vth"] * (t - ch["t0"]))
        return ch["k_ch"] / (ov - self.delta_vth_hat) - ch["k_ch"] / ov

    def _pkg_shift(self, t: np.ndarray) -> np.ndarray:
        if self.offset_pkg == 0.0:
            return np.zeros_like(t)
        if self.drift_profile is None:
            return np.full_like(t, self.offset_pkg)
        ref = float(np.interp(self.t_cal, self.t_axis, self.drift_profile))
        shape = np.interp(t, self.t_axis, self.drift_profile) / ref
        return self.offset_pkg * shape

    def column(self, i_d: float) -> np.ndarray:
        """Corrected R(T) profile at drain current i_d (linear across the
        current axis, clamped at the grid edges). Columns are memoized; the
        table is immutable after construction."""
        hit = self._col_cache.get(i_d)
        if hit is not None:
            return hit
        i_c = float(np.clip(i_d, self.i_axis[0], self.i_axis[-1]))
        j = int(np.searchsorted(self.i_axis, i_c, side="right")) - 1
        j = min(max(j, 0), len(self.i_axis) - 2)
        w = (i_c - self.i_axis[j]) / (self.i_axis[j + 1] - self.i_axis[j])
        base = self.grid[:, j] * (1.0 - w) + self.grid[:, j + 1] * w
        col = base + self._oxide_shift(self.t_axis) + self._pkg_shift(self.t_axis)
        if len(self._col_cache) < 256:
            self._col_cache[i_d] = col
        return col

    def value(self, t_j: float, i_d: float) -> float:
        col = self.column(i_d)
        return float(np.interp(t_j, self.t_axis, col))

    # -- persistence ------------------------------------------------------

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t_j_c\\i_d_a"] + [repr(float(i)) for i in self.i_axis])
            for t, row in zip(self.t_axis, self.grid):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "RonLut":
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        i_axis = np.array([float(x) for x in rows[0][1:]])
        t_axis = np.array([float(r[0]) for r in rows[1:]])
        grid = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
        return cls(t_axis=t_axis, i_axis=i_axis, grid=grid)


def build_ron_lut(params: dev_mod.DeviceParams,
                  t_axis: Sequence[float] = tuple(range(25, 176, 25)),
                  i_axis: Sequence[float] = tuple(range(50, 401, 50)),
                  v_gs: Optional[float] = None) -> RonLut:
    """Characterize a fresh device over the grid (self-consistent oracle)."""
    v_gs = params.gate_on_v if v_gs is None else v_gs
    fresh = DeviceState(params=params)
    t = np.asarray(t_axis, dtype=float)
    i = np.asarray(i_axis, dtype=float)
    grid = np.array([[dev_mod.r_on(fresh, tj, ii, v_gs) for ii in i] for tj in t])
    drift = params.r_drift0 * ((t + dev_mod.KELVIN) / (params.t0 + dev_mod.KELVIN)) \
        ** params.alpha_drift
    channel = {"k_ch": params.k_ch, "v_gs": v_gs, "v_th0": params.v_th0,
               "rho_vth": params.rho_vth, "t0": params.t0}
    return RonLut(t_axis=t, i_axis=i, grid=grid, drift_profile=drift,
                  channel=channel)


def estimate_tj(r_on: float, i_d: float, lut: RonLut) -> TjEstimate:
    """Invert the monotone R(T) profile at the given current.

    Values outside the table are clamped to the nearest grid edge and
    flagged rather than extrapolated.
    """
    col = lut.column(i_d)
    out = (r_on < col[0] - 1e-15) or (r_on > col[-1] + 1e-15) \
        or not (lut.i_axis[0] <= i_d <= lut.i_axis[-1])
    t = float(np.interp(r_on, col, lut.t_axis))
    return TjEstimate(t_j=t, out_of_grid=bool(out))


def recalibrate_lut(lut: RonLut, r_on_measured_ambient: float, t_ambient: float,
                    i_cal: float, delta_vth: float, dev: DeviceState,
                    tolerance_frac: float = 0.02) -> RonLut:
    """Shift the table to the start-of-test ambient measurement.

    The total offset is the measured resistance minus the fresh table value
    at (t_ambient, i_cal); the part explained by the threshold shift is
    booked to the gate oxide, the remainder to the package. A measurement
    below the fresh table by more than the tolerance means the devices were
    not at ambient.
    """
    base = RonLut(t_axis=lut.t_axis, i_axis=lut.i_axis, grid=lut.grid,
                  drift_profile=lut.drift_profile, channel=lut.channel)
    fresh_val = base.value(t_ambient, i_cal)
    offset = r_on_measured_ambient - fresh_val
    if offset < -tolerance_frac * fresh_val:
        raise AmbientMismatch(
            f"measured {r_on_measured_ambient:.4g} ohm is below the fresh "
            f"table value {fresh_val:.4g} ohm")
    if delta_vth > 0 and lut.channel is not None:
        ch = lut.channel
        ov = ch["v_gs"] - (ch["v_th0"] + ch["rho_vth"] * (t_ambient - ch["t0"]))
        oxide_at_cal = ch["k_ch"] / (ov - delta_vth) - ch["k_ch"] / ov
    else:
        oxide_at_cal = 0.0
    return RonLut(t_axis=lut.t_axis, i_axis=lut.i_axis, grid=lut.grid,
                  drift_profile=lut.drift_profile, channel=lut.channel,
                  offset=offset, offset_pkg=offset - oxide_at_cal,
                  delta_vth_hat=delta_vth if lut.channel is not None else 0.0,
                  t_cal=t_ambient)


def detect_peak_angle(theta: Sequence[float], values: Sequence[float]) -> float:
    """Fallback peak locator for replayed data: angle of the largest sample."""
    theta = np.asarray(theta, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(theta) == 0 or len(theta) != len(values):
        raise ValueError("need matching, nonempty angle/value arrays")
    return wrap_angle(float(theta[values.argmax()]))
