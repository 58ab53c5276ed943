import math

import numpy as np
import pytest

from acpcsim.device import (AgingState, AgingTrajectory, ChannelOff,
                            DeviceParams, DeviceState, apply_aging,
                            calibrated_params, conduction_voltage,
                            conduction_voltage_array, delta_vth_for_vds_shift,
                            gate_oxide_trajectory, losses, module_400a, r_on,
                            v_sd, v_th, vendor_a, vendor_b,
                            vgs_at_channel_current)


def fresh(params=None):
    return DeviceState(params=params or module_400a())


class TestVth:
    def test_reference_point(self):
        assert v_th(fresh(), 25.0) == pytest.approx(2.7)

    def test_linear_temperature_shift(self):
        # -6.4 mV/degC over 100 degC from the 25 degC anchor
        assert v_th(fresh(), 125.0) == pytest.approx(2.06, abs=1e-12)

    def test_additive_aging_shift(self):
        dev = DeviceState(params=module_400a(),
                          aging=AgingState(delta_vth=0.5))
        assert v_th(dev, 25.0) == pytest.approx(3.2)


class TestRon:
    def test_calibration_anchor(self):
        # module profile anchored to 3.95 mohm at (25 degC, nominal current)
        dev = fresh()
        assert r_on(dev, 25.0, 400.0, 15.0) == pytest.approx(3.95e-3, rel=1e-12)

    def test_channel_off_raises(self):
        with pytest.raises(ChannelOff):
            r_on(fresh(), 25.0, 100.0, 2.0)

    def test_halved_overdrive_doubles_channel_term(self):
        p = calibrated_params(r_total_t0=4e-3, channel_fraction=0.999999,
                              v_th0=2.7, rho_vth=-6.4e-3, v_gs_on=15.0,
                              alpha_drift=1.3, v_j0=2.8, rho_sd_lo=-2.65e-3,
                              rho_sd_hi=-4.8e-3, r_diode=4e-3, e_on0=0.0,
                              e_off0=0.0, v_ref=800.0, i_ref=400.0,
                              i_nominal=400.0)
        p = DeviceParams(**{**p.__dict__, "r_drift0": 0.0})
        base = r_on(DeviceState(params=p), 25.0, 400.0, 15.0)
        halved = DeviceState(params=p,
                             aging=AgingState(delta_vth=(15.0 - 2.7) / 2))
        assert r_on(halved, 25.0, 400.0, 15.0) == pytest.approx(2 * base,
                                                                rel=1e-12)

    @pytest.mark.parametrize("profile,slope", [(vendor_a, 2.4e-3),
                                               (vendor_b, 1.6e-3)])
    def test_net_sensitivity_matches_profile(self, profile, slope):
        dev = DeviceState(params=profile())
        i = dev.params.i_nominal
        dr_dt = (r_on(dev, 26.0, i, 15.0) - r_on(dev, 24.0, i, 15.0)) / 2.0
        assert dr_dt == pytest.approx(slope, rel=0.10)

    def test_module_sensitivity_by_finite_difference(self):
        dev = fresh()
        p = dev.params
        dr_dt = (r_on(dev, 26.0, 400.0, 15.0) - r_on(dev, 24.0, 400.0, 15.0)) / 2
        analytic = p.r_drift0 * p.alpha_drift / (25.0 + 273.15) \
            + p.k_ch * p.rho_vth / (15.0 - 2.7) ** 2
        assert dr_dt == pytest.approx(analytic, rel=0.10)

    def test_monotone_in_package_and_oxide_aging(self):
        rng = np.random.default_rng(2)
        p = module_400a()
        prev_pkg, prev_vth = -1.0, -1.0
        for pkg, dvth in zip(np.sort(rng.uniform(0, 1, 20)),
                             np.sort(rng.uniform(0, 5, 20))):
            dev = DeviceState(params=p, aging=AgingState(delta_pkg=float(pkg)))
            r1 = r_on(dev, 80.0, 300.0, 15.0)
            dev2 = DeviceState(params=p, aging=AgingState(delta_vth=float(dvth)))
            r2 = r_on(dev2, 80.0, 300.0, 15.0)
            assert r1 > prev_pkg and r2 > prev_vth
            prev_pkg, prev_vth = r1, r2

    def test_channel_only_negative_tc_drift_only_positive_tc(self):
        base = module_400a().__dict__.copy()
        ch_only = DeviceParams(**{**base, "r_drift0": 0.0})
        dev = DeviceState(params=ch_only)
        assert r_on(dev, 150.0, 400.0, 15.0) < r_on(dev, 25.0, 400.0, 15.0)
        dr_only = DeviceParams(**{**base, "k_ch": 0.0})
        dev = DeviceState(params=dr_only)
        assert r_on(dev, 150.0, 400.0, 15.0) > r_on(dev, 25.0, 400.0, 15.0)


class TestConduction:
    def test_first_quadrant_ohmic(self):
        p = calibrated_params(r_total_t0=4e-3, channel_fraction=0.45,
                              v_th0=2.7, rho_vth=-6.4e-3, v_gs_on=15.0,
                              alpha_drift=1.3, v_j0=2.8, rho_sd_lo=-2.65e-3,
                              rho_sd_hi=-4.8e-3, r_diode=4e-3, e_on0=0.0,
                              e_off0=0.0, v_ref=800.0, i_ref=400.0,
                              i_nominal=400.0)
        dev = DeviceState(params=p)
        # r_i_slope defaults to zero here, so R is exactly 4 mohm at 25 degC
        assert conduction_voltage(dev, 100.0, 25.0, 15.0) == \
            pytest.approx(0.40, rel=1e-12)

    def test_third_quadrant_channel_off_is_body_diode(self):
        dev = fresh()
        v = conduction_voltage(dev, -100.0, 25.0, -4.0)
        assert v == pytest.approx(-v_sd(dev, 100.0, 25.0), rel=1e-12)

    def test_zero_current(self):
        assert conduction_voltage(fresh(), 0.0, 25.0, 15.0) == 0.0

    def test_first_quadrant_channel_off_raises(self):
        with pytest.raises(ChannelOff):
            conduction_voltage(fresh(), 100.0, 25.0, -4.0)

    def test_third_quadrant_channel_on_below_knee_is_ohmic(self):
        dev = fresh()
        v = conduction_voltage(dev, -50.0, 25.0, 15.0)
        assert v == pytest.approx(-50.0 * r_on(dev, 25.0, 50.0, 15.0),
                                  rel=1e-12)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(9)
        dev = DeviceState(params=module_400a(),
                          aging=AgingState(delta_pkg=0.07, delta_vth=0.3,
                                           delta_vsd=0.2))
        i = rng.uniform(-450, 450, size=200)
        i[0] = 0.0
        vec = conduction_voltage_array(dev, i, 77.0, 15.0)
        for k in range(len(i)):
            assert vec[k] == pytest.approx(
                conduction_voltage(dev, float(i[k]), 77.0, 15.0), abs=1e-15)


class TestVsd:
    def test_knee_anchor(self):
        dev = fresh()
        assert v_sd(dev, 1e-9, 25.0) == pytest.approx(2.8, abs=1e-6)

    def test_low_current_sensitivity(self):
        dev = fresh()
        i = 1e-3
        dv_dt = (v_sd(dev, i, 26.0) - v_sd(dev, i, 24.0)) / 2.0
        assert dv_dt == pytest.approx(-2.65e-3, rel=0.05)

    def test_high_current_sensitivity(self):
        dev = fresh()
        i = dev.params.i_nominal
        dv_dt = (v_sd(dev, i, 26.0) - v_sd(dev, i, 24.0)) / 2.0
        assert dv_dt == pytest.approx(-4.8e-3, rel=0.05)

    def test_aging_shift_is_exact(self):
        p = module_400a()
        a = DeviceState(params=p, aging=AgingState(delta_vsd=0.7))
        b = DeviceState(params=p)
        assert v_sd(a, 200.0, 60.0) - v_sd(b, 200.0, 60.0) == \
            pytest.approx(0.7, rel=1e-12)

    def test_monotone_in_shift(self):
        p = module_400a()
        vals = [v_sd(DeviceState(params=p, aging=AgingState(delta_vsd=d)),
                     150.0, 40.0) for d in (0.0, 0.1, 0.3, 0.7)]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_requires_positive_current(self):
        with pytest.raises(ValueError):
            v_sd(fresh(), -5.0, 25.0)


class TestLosses:
    def test_zero_current_no_events(self):
        assert losses(fresh(), 0.0, 25.0, 800.0, 0.0, 0.5) == 0.0

    def test_conduction_only(self):
        p = calibrated_params(r_total_t0=4e-3, channel_fraction=0.45,
                              v_th0=2.7, rho_vth=-6.4e-3, v_gs_on=15.0,
                              alpha_drift=1.3, v_j0=2.8, rho_sd_lo=-2.65e-3,
                              rho_sd_hi=-4.8e-3, r_diode=4e-3, e_on0=0.0,
                              e_off0=0.0, v_ref=800.0, i_ref=400.0,
                              i_nominal=400.0)
        dev = DeviceState(params=p)
        assert losses(dev, 100.0, 25.0, 800.0, 0.0, 0.5) == \
            pytest.approx(20.0, rel=1e-12)

    def test_switching_scales_linearly_with_event_rate(self):
        dev = fresh()
        p1 = losses(dev, 100.0, 25.0, 800.0, 22e3, 0.0)
        p2 = losses(dev, 100.0, 25.0, 800.0, 44e3, 0.0)
        assert p2 == pytest.approx(2 * p1, rel=1e-12)

    def test_third_quadrant_uses_diode_drop(self):
        dev = fresh()
        p = losses(dev, -100.0, 25.0, 800.0, 0.0, 1.0)
        assert p == pytest.approx(v_sd(dev, 100.0, 25.0) * 100.0, rel=1e-12)


class TestAging:
    def test_null_trajectory_is_identity(self):
        st = AgingState(delta_pkg=0.1, delta_vth=0.2, delta_vsd=0.05,
                        cycles_accumulated=5)
        out = apply_aging(st, AgingTrajectory(), 100)
        assert (out.delta_pkg, out.delta_vth, out.delta_vsd) == \
            (0.1, 0.2, 0.05)
        assert out.cycles_accumulated == 100

    def test_step_event_fires_at_exact_cycle(self):
        traj = AgingTrajectory(delta_pkg=((0.0, 0.0), (10_000.0, 0.0),
                                          (10_000.0, 0.05), (20_000.0, 0.05)))
        before = apply_aging(AgingState(), traj, 9_999)
        at = apply_aging(AgingState(), traj, 10_000)
        assert before.delta_pkg == pytest.approx(0.0, abs=1e-6)
        assert at.delta_pkg == pytest.approx(0.05)

    def test_linear_ramp_interpolates(self):
        traj = AgingTrajectory(delta_vsd=((0.0, 0.0), (1000.0, 0.7)))
        assert apply_aging(AgingState(), traj, 500).delta_vsd == \
            pytest.approx(0.35)

    def test_monotone_and_no_backwards_cycles(self):
        traj = AgingTrajectory(delta_vth=((0.0, 0.0), (100.0, 1.0)))
        st = apply_aging(AgingState(), traj, 50)
        with pytest.raises(ValueError):
            apply_aging(st, traj, 10)

    def test_nonmonotone_breakpoints_rejected(self):
        with pytest.raises(ValueError):
            AgingTrajectory(delta_pkg=((0.0, 0.5), (10.0, 0.1)))

    def test_default_oxide_trajectory_hits_reported_drop(self):
        # end of life moves the nominal-current drop from 1.58 V to 2.6 V
        p = module_400a()
        traj = gate_oxide_trajectory(p, cycles_eol=10_000)
        aged = apply_aging(AgingState(), traj, 10_000)
        dev = DeviceState(params=p, aging=aged)
        v_aged = conduction_voltage(dev, p.i_nominal, 25.0, p.gate_on_v)
        assert v_aged == pytest.approx(2.6, abs=1e-9)
        v_fresh = conduction_voltage(fresh(p), p.i_nominal, 25.0, p.gate_on_v)
        assert v_fresh == pytest.approx(1.58, abs=1e-9)

    def test_delta_vth_for_vds_shift_closed_form(self):
        p = module_400a()
        d = delta_vth_for_vds_shift(p, 1.02)
        ov = p.gate_on_v - p.v_th0
        shift = p.i_nominal * p.k_ch * (1 / (ov - d) - 1 / ov)
        assert shift == pytest.approx(1.02, rel=1e-12)


def test_vgs_at_channel_current_square_law():
    dev = fresh()
    v = vgs_at_channel_current(dev, 2e-3, 25.0)
    assert v == pytest.approx(2.7 + math.sqrt(2 * 2e-3 / 20.0), rel=1e-12)


def test_invalid_params_rejected():
    with pytest.raises(ValueError):
        DeviceParams(r_drift0=-1.0, k_ch=1.0, v_th0=2.7, rho_vth=-1e-3,
                     v_j0=2.8, rho_sd_lo=-1e-3, rho_sd_hi=-2e-3, r_diode=1e-3,
                     e_on0=0.0, e_off0=0.0, v_ref=800.0, i_ref=400.0)
    with pytest.raises(ValueError):
        DeviceParams(r_drift0=1e-3, k_ch=1.0, v_th0=2.7, rho_vth=+1e-3,
                     v_j0=2.8, rho_sd_lo=-1e-3, rho_sd_hi=-2e-3, r_diode=1e-3,
                     e_on0=0.0, e_off0=0.0, v_ref=800.0, i_ref=400.0)
