"""Plant physics: resistances, kinematics, fuel interpolation, torque split,
gear constraints, power reserve, and the integration step."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecodrive.datasets import load_powertrain
from ecodrive.powertrain import (Curve1D, FLAT_ROAD, FuelMap, PlantError,
                                 PlantState, RoadProfile, VehicleParams,
                                 apply_gear_command, engine_speed_for,
                                 fuel_rate, gear_feasible, initial_state,
                                 power_reserve, raw_engine_speed, resistances,
                                 split_negative_torque, step)


@pytest.fixture(scope="module")
def spec():
    return load_powertrain()


def state_at(spec, velocity, gear, position=0.0):
    return PlantState(position=position, velocity=velocity, acceleration=0.0,
                      gear=gear,
                      engine_speed=engine_speed_for(
                          velocity, gear, spec.transmission, spec.vehicle,
                          spec.engine),
                      fuel_used=0.0, time=0.0)


class TestResistances:
    def test_zero_speed_has_no_drag(self, spec):
        _, r_aero, _ = resistances(0.0, 0.0, spec.vehicle, FLAT_ROAD)
        assert r_aero == 0.0

    def test_rolling_force_matches_hand_formula(self, spec):
        r_roll, _, _ = resistances(5.0, 0.0, spec.vehicle, FLAT_ROAD)
        assert r_roll == pytest.approx(9070 * 9.81 * 0.015, rel=1e-12)
        assert r_roll == pytest.approx(1334.65, abs=0.01)

    def test_drag_force_matches_hand_formula(self, spec):
        _, r_aero, _ = resistances(20.0, 0.0, spec.vehicle, FLAT_ROAD)
        assert r_aero == pytest.approx(0.5 * 1.2 * 0.8 * 7.71 * 400, rel=1e-12)
        assert r_aero == pytest.approx(1480.3, abs=0.1)

    def test_grade_force_on_flat_road_is_zero(self, spec):
        _, _, r_grade = resistances(10.0, 123.0, spec.vehicle, FLAT_ROAD)
        assert r_grade == 0.0

    def test_grade_force_on_hill(self, spec):
        hill = RoadProfile(Curve1D([0.0, 1000.0], [0.02, 0.02]))
        _, _, r_grade = resistances(10.0, 500.0, spec.vehicle, hill)
        assert r_grade == pytest.approx(9070 * 9.81 * math.sin(0.02), rel=1e-12)


class TestEngineSpeed:
    def test_idle_floor_at_standstill(self, spec):
        for gear in (1, 5, 10):
            w = engine_speed_for(0.0, gear, spec.transmission, spec.vehicle,
                                 spec.engine)
            assert w == spec.engine.idle_speed

    def test_unit_kinematics(self, spec):
        # engine speed = V / r_w * overall ratio when above idle
        v, gear = 15.0, 9
        overall = spec.transmission.overall_ratio(gear)
        expected = v / spec.vehicle.wheel_radius * overall
        w = engine_speed_for(v, gear, spec.transmission, spec.vehicle,
                             spec.engine)
        assert w == pytest.approx(expected, rel=1e-12)

    def test_overall_ratio_of_four_at_fifteen(self, spec):
        # hand kinematics: 15 / 0.498 * 4.0 = 120.48 rad/s
        assert 15.0 / 0.498 * 4.0 == pytest.approx(120.48, abs=0.01)
        w = raw_engine_speed(15.0, 9, spec.transmission, spec.vehicle)
        ratio = spec.transmission.overall_ratio(9)
        assert w == pytest.approx(15.0 / 0.498 * ratio, rel=1e-12)


class TestFuelRate:
    def test_grid_node_identity(self, spec):
        fm = spec.engine.fuel_map
        i, j = 4, 3
        assert fuel_rate(fm.speeds[i], fm.torques[j], spec.engine) \
            == pytest.approx(fm.rates[i, j], rel=1e-12)

    def test_fuel_cut_on_overrun(self, spec):
        w = 0.7 * spec.engine.max_speed
        assert fuel_rate(w, -50.0, spec.engine) == 0.0

    def test_idle_rate_at_idle_no_load(self, spec):
        assert fuel_rate(spec.engine.idle_speed, 0.0, spec.engine) \
            == spec.engine.idle_fuel_rate

    def test_cell_midpoint_is_mean_of_corners(self, spec):
        # bilinear interpolation at a cell center equals the corner average
        fm = spec.engine.fuel_map
        i, j = 6, 5
        w = 0.5 * (fm.speeds[i] + fm.speeds[i + 1])
        t = 0.5 * (fm.torques[j] + fm.torques[j + 1])
        corners = fm.rates[i:i + 2, j:j + 2]
        assert fuel_rate(w, t, spec.engine) == pytest.approx(corners.mean(),
                                                             rel=1e-12)

    def test_out_of_grid_speed_raises(self, spec):
        with pytest.raises(PlantError):
            fuel_rate(spec.engine.max_speed * 1.5, 100.0, spec.engine)

    def test_monotone_in_torque_at_fixed_speed(self, spec):
        fm = spec.engine.fuel_map
        assert np.all(np.diff(fm.rates, axis=1) >= -1e-12)


class TestNegativeTorqueSplit:
    def test_within_engine_capability_no_service_brake(self, spec):
        v, gear = 15.0, 8
        w = engine_speed_for(v, gear, spec.transmission, spec.vehicle,
                             spec.engine)
        capacity = float(spec.engine.max_brake_torque_curve(w)) \
            * spec.transmission.overall_ratio(gear)
        request = 0.5 * capacity
        engine_part, service_part = split_negative_torque(request, w, gear,
                                                          spec)
        assert service_part == 0.0
        assert engine_part == pytest.approx(request, rel=1e-12)

    def test_saturation_and_additivity(self, spec):
        v, gear = 15.0, 8
        w = engine_speed_for(v, gear, spec.transmission, spec.vehicle,
                             spec.engine)
        capacity = float(spec.engine.max_brake_torque_curve(w)) \
            * spec.transmission.overall_ratio(gear)
        request = 2.0 * capacity
        engine_part, service_part = split_negative_torque(request, w, gear,
                                                          spec)
        assert engine_part == pytest.approx(capacity, rel=1e-12)
        assert engine_part + service_part == pytest.approx(request, rel=1e-12)
        assert service_part < 0.0

    def test_non_negative_request_rejected(self, spec):
        with pytest.raises(PlantError):
            split_negative_torque(10.0, spec.engine.idle_speed, 3, spec)

    @given(frac=st.floats(0.1, 5.0), gear=st.integers(5, 10))
    @settings(max_examples=30, deadline=None)
    def test_split_sums_to_request_exactly(self, spec, frac, gear):
        v = 12.0
        if not gear_feasible(v, gear, spec):
            return
        w = engine_speed_for(v, gear, spec.transmission, spec.vehicle,
                             spec.engine)
        capacity = float(spec.engine.max_brake_torque_curve(w)) \
            * spec.transmission.overall_ratio(gear)
        request = frac * capacity
        engine_part, service_part = split_negative_torque(request, w, gear,
                                                          spec)
        assert engine_part + service_part == request  # exact, not approx
        assert engine_part >= capacity
        assert service_part <= 0.0


class TestGearCommand:
    def test_identity(self, spec):
        assert apply_gear_command(5, 0, 15.0, spec) == 5

    def test_clamped_at_top_gear(self, spec):
        assert apply_gear_command(10, 2, 25.0, spec) == 10

    def test_clamped_at_bottom_gear(self, spec):
        assert apply_gear_command(1, -2, 1.0, spec) == 1

    def test_command_magnitude_clamped_to_one(self, spec):
        start = 5
        out = apply_gear_command(start, 2, 15.0, spec)
        assert abs(out - start) <= 1

    def test_infeasible_upshift_blocked(self, spec):
        # construct a speed where gear 2 sits below idle: raw engine speed
        # in gear 2 < idle <= raw speed infeasible -> stay in gear 1
        v = 0.8
        assert raw_engine_speed(v, 2, spec.transmission, spec.vehicle) \
            < spec.engine.idle_speed
        assert apply_gear_command(1, 1, v, spec) == 1

    def test_infeasible_downshift_blocked(self, spec):
        # at 25 m/s a 2-gears-down ratio would overspeed the engine
        v = 25.0
        gear = 9
        assert raw_engine_speed(v, gear - 2, spec.transmission, spec.vehicle) \
            > spec.engine.max_speed
        if raw_engine_speed(v, gear - 1, spec.transmission,
                            spec.vehicle) > spec.engine.max_speed:
            assert apply_gear_command(gear, -1, v, spec) == gear

    @given(gear=st.integers(1, 10), cmd=st.integers(-2, 2),
           v=st.floats(0.0, 30.0))
    @settings(max_examples=60, deadline=None)
    def test_single_step_bound(self, spec, gear, cmd, v):
        out = apply_gear_command(gear, cmd, v, spec)
        assert 1 <= out <= 10
        assert abs(out - gear) <= 1


class TestPowerReserve:
    def test_zero_reserve_at_full_power(self, spec):
        v, gear = 15.0, 6
        w = engine_speed_for(v, gear, spec.transmission, spec.vehicle,
                             spec.engine)
        available = float(spec.engine.max_torque_curve(w)) * w
        reserve, reserve_max = power_reserve(v, gear, available, spec)
        assert reserve == 0.0
        assert reserve_max >= available

    def test_full_reserve_in_best_gear(self, spec):
        v = 15.0
        best_gear, best_avail = None, -1.0
        for g in range(1, 11):
            if not gear_feasible(v, g, spec):
                continue
            w = engine_speed_for(v, g, spec.transmission, spec.vehicle,
                                 spec.engine)
            avail = float(spec.engine.max_torque_curve(w)) * w
            if avail > best_avail:
                best_gear, best_avail = g, avail
        reserve, reserve_max = power_reserve(v, best_gear, 0.0, spec)
        assert reserve == pytest.approx(reserve_max, rel=1e-12)

    def test_maximum_matches_exhaustive_scan(self, spec):
        # brute-force the best-gear available power at an arbitrary speed
        v, gear = 9.0, 5
        feasible = [g for g in range(1, 11) if gear_feasible(v, g, spec)]
        expected = max(
            float(spec.engine.max_torque_curve(
                engine_speed_for(v, g, spec.transmission, spec.vehicle,
                                 spec.engine)))
            * engine_speed_for(v, g, spec.transmission, spec.vehicle,
                               spec.engine)
            for g in feasible + [gear])
        _, reserve_max = power_reserve(v, gear, 1000.0, spec)
        assert reserve_max == pytest.approx(expected, rel=1e-12)

    @given(v=st.floats(0.0, 30.0), gear=st.integers(1, 10),
           power=st.floats(-1e5, 4e5))
    @settings(max_examples=60, deadline=None)
    def test_reserve_never_exceeds_maximum(self, spec, v, gear, power):
        reserve, reserve_max = power_reserve(v, gear, power, spec)
        assert 0.0 <= reserve <= reserve_max + 1e-9
        assert reserve_max > 0.0


class TestStep:
    def test_force_balance_holds_speed(self, spec):
        v, gear = 15.0, 8
        r_roll, r_aero, _ = resistances(v, 0.0, spec.vehicle, FLAT_ROAD)
        torque = spec.vehicle.wheel_radius * (r_roll + r_aero)
        state = state_at(spec, v, gear)
        nxt, out = step(state, torque, 0, 0.2, spec)
        assert abs(out.accel) < 1e-9
        assert nxt.velocity == pytest.approx(v, abs=1e-9)

    def test_rest_stays_at_rest(self, spec):
        state = state_at(spec, 0.0, 1)
        nxt, out = step(state, 0.0, 0, 0.2, spec)
        assert nxt.velocity == 0.0
        assert out.accel == 0.0
        assert nxt.position == 0.0

    def test_saturated_request_accelerates_less(self, spec):
        v, gear = 10.0, 5
        state = state_at(spec, v, gear)
        w = engine_speed_for(v, gear, spec.transmission, spec.vehicle,
                             spec.engine)
        trans = spec.transmission
        capability = float(spec.engine.max_torque_curve(w)) \
            * trans.overall_ratio(gear) * trans.driveline_efficiency
        request = 2.0 * capability
        nxt, out = step(state, request, 0, 0.2, spec)
        # unclamped Euler prediction from the requested torque
        r_roll, r_aero, r_grade = resistances(v, 0.0, spec.vehicle, FLAT_ROAD)
        unclamped = (request / spec.vehicle.wheel_radius
                     - r_roll - r_aero - r_grade) \
            / spec.vehicle.effective_mass(gear)
        assert out.wheel_torque == pytest.approx(capability, rel=1e-12)
        assert out.accel < unclamped

    def test_non_finite_input_raises(self, spec):
        state = state_at(spec, 10.0, 5)
        with pytest.raises(PlantError):
            step(state, math.nan, 0, 0.2, spec)

    def test_determinism_bit_identical(self, spec):
        state = state_at(spec, 12.3, 6)
        a1 = step(state, 4321.5, 1, 0.2, spec)
        a2 = step(state, 4321.5, 1, 0.2, spec)
        assert a1 == a2

    @given(v=st.floats(0.0, 30.0), gear=st.integers(1, 10),
           torque=st.floats(-8e4, 8e4), cmd=st.integers(-1, 1))
    @settings(max_examples=100, deadline=None)
    def test_step_invariants(self, spec, v, gear, torque, cmd):
        state = state_at(spec, v, gear)
        nxt, out = step(state, torque, cmd, 0.2, spec)
        assert nxt.velocity >= 0.0
        assert abs(nxt.gear - gear) <= 1
        assert spec.engine.idle_speed <= nxt.engine_speed \
            <= spec.engine.max_speed
        assert nxt.fuel_used >= state.fuel_used
        if torque < 0.0:
            total = out.engine_brake_torque + out.service_brake_torque
            assert total == torque  # wheel-level brake accounting is exact


class TestValidation:
    def test_rotating_mass_factor_shape(self):
        with pytest.raises(ValueError):
            VehicleParams(mass=9070, rotating_mass_factor=np.ones(3),
                          frontal_area=7.71, drag_coeff=0.8,
                          rolling_coeff=0.015, wheel_radius=0.498)

    def test_fuel_map_monotonicity_enforced(self):
        with pytest.raises(ValueError):
            FuelMap([10.0, 20.0], [0.0, 100.0],
                    [[1.0, 0.5], [1.0, 2.0]])

    def test_initial_state_engine_speed(self, spec):
        s = initial_state(spec)
        assert s.engine_speed == spec.engine.idle_speed
        assert s.gear == 1
