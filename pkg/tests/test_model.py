import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecodrive.errors import DomainError, RouteRangeError
from ecodrive.model import (RoadProfile, Trajectory, VehicleParams, accel_limits,
                            accel_of, energy_floor, kinetic_energy,
                            resistive_forces, speed_of, time_slope,
                            traction_force)

PARAMS = VehicleParams()  # 40 t defaults


def flat_profile(length=10e3, v_min=5.0, v_max=30.0):
    s = np.array([0.0, length])
    ones = np.ones(2)
    return RoadProfile(position=s, grade=0.0 * ones,
                       v_min_road=v_min * ones, v_max_road=v_max * ones)


class TestTransforms:
    def test_kinetic_energy_hand_value(self):
        # 80 km/h at 40 t
        e = kinetic_energy(22.2222, PARAMS)
        assert e == pytest.approx(9.8765e6, rel=1e-4)

    def test_zero_speed_rejected(self):
        with pytest.raises(DomainError):
            kinetic_energy(0.0, PARAMS)
        with pytest.raises(DomainError):
            speed_of(0.0, PARAMS)

    def test_round_trip_identity(self):
        assert speed_of(kinetic_energy(13.89, PARAMS), PARAMS) == pytest.approx(13.89, rel=1e-12)

    @given(st.floats(min_value=1.0, max_value=50.0))
    @settings(max_examples=200, deadline=None)
    def test_round_trip_property(self, v):
        assert speed_of(kinetic_energy(v, PARAMS), PARAMS) == pytest.approx(v, rel=1e-12)


class TestResistiveForces:
    def test_rolling_only_on_flat(self):
        prof = flat_profile()
        _, f_alpha = resistive_forces(1e6, 100.0, prof, PARAMS)
        assert f_alpha == pytest.approx(40000 * 9.81 * 0.006, rel=1e-12)  # 2354.4 N

    def test_drag_at_80_kmh(self):
        prof = flat_profile()
        e = kinetic_energy(80 / 3.6, PARAMS)
        f_air, _ = resistive_forces(e, 0.0, prof, PARAMS)
        # c_a = 1.29*0.5*10/2 = 3.225 kg/m times v^2
        assert f_air == pytest.approx(3.225 * (80 / 3.6) ** 2, rel=1e-12)
        assert f_air == pytest.approx(1592.6, rel=1e-3)

    def test_zero_resistance_params(self):
        params = VehicleParams(rolling_coeff=0.0)
        prof = flat_profile()
        _, f_alpha = resistive_forces(2e6, 0.0, prof, params)
        assert f_alpha == 0.0

    def test_out_of_route_position(self):
        prof = flat_profile(length=1000.0)
        with pytest.raises(RouteRangeError):
            resistive_forces(1e6, 1500.0, prof, PARAMS)


class TestTractionForce:
    def test_steady_cruise_balance(self):
        prof = flat_profile()
        e = kinetic_energy(20.0, PARAMS)
        f = traction_force(0.0, e, 0.0, 0.0, prof, PARAMS)
        f_air, f_alpha = resistive_forces(e, 0.0, prof, PARAMS)
        assert f == pytest.approx(f_air + f_alpha, rel=1e-12)

    def test_term_by_term_hand_value(self):
        # a = 0.1 m/s^2 at 80 km/h on flat road: 4000 + 1592.6 + 2354.4 N.
        prof = flat_profile()
        f = traction_force(0.1, 9.8765e6, 0.0, 0.0, prof, PARAMS)
        expected = 40000 * 0.1 + PARAMS.drag_slope * 9.8765e6 + 2354.4
        assert f == pytest.approx(expected, rel=1e-9)
        assert f == pytest.approx(7947.0, rel=1e-3)

    def test_round_trip_with_accel(self):
        prof = flat_profile()
        e = kinetic_energy(25.0, PARAMS)
        for a in (-0.8, 0.0, 1.2):
            f = traction_force(a, e, -500.0, 1000.0, prof, PARAMS)
            assert accel_of(f, e, -500.0, 1000.0, prof, PARAMS) == pytest.approx(a, abs=1e-13)


class _BoxLimits:
    def __init__(self, f_max, f_min=0.0):
        self._hi = f_max
        self._lo = f_min

    def f_max(self, E):
        return np.broadcast_to(self._hi, np.shape(E)) if np.ndim(E) else self._hi

    def f_min(self, E):
        return np.broadcast_to(self._lo, np.shape(E)) if np.ndim(E) else self._lo


class TestAccelLimits:
    def test_comfort_limited_on_flat(self):
        prof = flat_profile()
        e = kinetic_energy(20.0, PARAMS)
        a_min, a_max = accel_limits(e, 0.0, _BoxLimits(5e5), prof, PARAMS)
        assert a_max == PARAMS.a_hi
        assert a_min == PARAMS.a_lo

    def test_force_limited_on_steep_climb(self):
        s = np.array([0.0, 5e3])
        ones = np.ones(2)
        steep = RoadProfile(position=s, grade=0.08 * ones,
                            v_min_road=5 * ones, v_max_road=30 * ones)
        e = kinetic_energy(25.0, PARAMS)
        _, a_max = accel_limits(e, 100.0, _BoxLimits(10e3), steep, PARAMS)
        assert a_max < 0.0  # the powertrain cannot hold speed here

    def test_matches_traction_force_inversion(self, cv):
        prof = flat_profile()
        e = kinetic_energy(22.0, cv.params)
        from ecodrive.powertrain import TabulatedForceLimits
        limits = TabulatedForceLimits(cv.gear_map, cv.params)
        _, a_max = accel_limits(e, 0.0, limits, prof, cv.params)
        if a_max < cv.params.a_hi:  # powertrain branch active
            f = traction_force(a_max, e, 0.0, 0.0, prof, cv.params)
            assert f == pytest.approx(float(limits.f_max(e)), rel=1e-9)

    @given(st.floats(min_value=6e5, max_value=2e7), st.floats(min_value=1e3, max_value=5e5))
    @settings(max_examples=100, deadline=None)
    def test_never_exceeds_comfort_box(self, e, f_cap):
        prof = flat_profile()
        a_min, a_max = accel_limits(e, 0.0, _BoxLimits(f_cap, -f_cap), prof, PARAMS)
        assert a_max <= PARAMS.a_hi
        assert a_min >= PARAMS.a_lo


class TestTimeSlope:
    def test_hand_value(self):
        assert time_slope(9.8765e6, PARAMS) == pytest.approx(0.045, rel=1e-3)
        assert time_slope(9.8765e6, PARAMS) == pytest.approx(1.0 / 22.2222, rel=1e-4)

    def test_unit_speed(self):
        assert time_slope(0.5 * PARAMS.mass, PARAMS) == pytest.approx(1.0, rel=1e-14)

    def test_domain_error(self):
        with pytest.raises(DomainError):
            time_slope(-1.0, PARAMS)

    @given(st.floats(min_value=1e5, max_value=2e7), st.floats(min_value=1.01, max_value=3.0))
    @settings(max_examples=100, deadline=None)
    def test_strictly_decreasing(self, e, factor):
        assert time_slope(e * factor, PARAMS) < time_slope(e, PARAMS)

    def test_convex_in_energy(self):
        e = np.linspace(5e5, 2e7, 400)
        t = time_slope(e, PARAMS)
        second = np.diff(t, 2)
        assert np.all(second >= 0.0)


class TestSpaceDomainIntegration:
    @pytest.mark.parametrize("ds", [50.0, 300.0])
    def test_constant_speed_travel_time(self, ds):
        # forward Euler of t' = sqrt(m/2E) with constant E on flat road
        v = 20.0
        s_f = 12e3
        n = int(s_f / ds)
        e = kinetic_energy(v, PARAMS)
        t = 0.0
        for _ in range(n):
            t += ds * time_slope(e, PARAMS)
        assert t == pytest.approx(s_f / v, rel=1e-4)


class TestValidation:
    def test_params_invariants(self):
        with pytest.raises(DomainError):
            VehicleParams(mass=-1.0)
        with pytest.raises(DomainError):
            VehicleParams(transmission_ratios=(1.0, 2.0))  # not decreasing
        with pytest.raises(DomainError):
            VehicleParams(a_lo=0.5)
        with pytest.raises(DomainError):
            VehicleParams(brake_floor=10.0)

    def test_profile_invariants(self):
        ones = np.ones(2)
        with pytest.raises(DomainError):
            RoadProfile(position=np.array([0.0, 0.0]), grade=0 * ones,
                        v_min_road=5 * ones, v_max_road=20 * ones)
        with pytest.raises(DomainError):
            RoadProfile(position=np.array([0.0, 1e3]), grade=0 * ones,
                        v_min_road=0.0 * ones, v_max_road=20 * ones)
        with pytest.raises(DomainError):
            RoadProfile(position=np.array([0.0, 1e3]), grade=0 * ones,
                        v_min_road=25 * ones, v_max_road=20 * ones)

    def test_grade_piecewise_constant(self):
        s = np.array([0.0, 1000.0, 2000.0])
        prof = RoadProfile(position=s, grade=np.array([0.01, 0.03, 0.03]),
                           v_min_road=5 * np.ones(3), v_max_road=30 * np.ones(3))
        assert prof.grade_at(500.0) == 0.01
        assert prof.grade_at(999.999) == 0.01
        assert prof.grade_at(1000.0) == 0.03
        assert prof.grade_at(2000.0) == 0.03

    def test_trajectory_time_monotone(self):
        n = 5
        with pytest.raises(DomainError):
            Trajectory(s=np.arange(n) * 1.0, t=np.zeros(n), E=np.ones(n),
                       v=np.ones(n), a=np.zeros(n), j=np.zeros(n),
                       F=np.zeros(n), F_brk=np.zeros(n), gear=np.ones(n), ds=1.0)

    def test_gear_radius(self):
        p = VehicleParams(wheel_radius=0.5, final_gear_ratio=5.0, transmission_ratios=(1.0,))
        assert p.gear_radius(1) == pytest.approx(0.1)
        with pytest.raises(DomainError):
            p.gear_radius(2)
